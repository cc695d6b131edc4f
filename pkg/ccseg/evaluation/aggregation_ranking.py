"""
Robustness aggregation and ranking.

Per-frame scores of an algorithm collapse to their 5% percentile; algorithms
are ranked on that aggregate, per metric, with competition ranking.
"""

import csv
import io
import json
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np

from ccseg.core.errors import ConfigurationError, ContractViolation
from ccseg.schemas import FrameEval, StageReport, StageRow
from ccseg.utils.logger import metrics_logger as logger
from ccseg.utils.validators import check_fraction, check_unique

ReportFormat = Literal["csv", "json", "boxplot-data"]
REPORT_FORMATS: Tuple[str, ...] = ("csv", "json", "boxplot-data")
CSV_COLUMNS = ("name", "mi_dsc", "mi_nsd", "rank_dsc", "rank_nsd", "fps")
ROBUSTNESS_PERCENTILE = 0.05


def percentile(values: Sequence[float], p: float) -> float:
    """
    Linear-interpolation quantile: h = (n - 1) p + 1 on the sorted values.

    Matches numpy's "linear" method, the default of most statistics environments.
    """
    if len(values) == 0:
        raise ContractViolation("percentile of an empty list")
    check_fraction("p", p)
    return float(np.quantile(np.asarray(values, dtype=np.float64), p, method="linear"))


def aggregate_algorithm(frames: Sequence[FrameEval], p: float = ROBUSTNESS_PERCENTILE) -> Tuple[float, float]:
    """(MI_DSC, MI_NSD) aggregated independently by the p-quantile."""
    if not frames:
        raise ContractViolation("aggregate_algorithm needs at least one frame")
    return (
        percentile([f.mi_dsc for f in frames], p),
        percentile([f.mi_nsd for f in frames], p),
    )


def competition_ranks(entries: Sequence[Tuple[str, float]]) -> List[Tuple[str, float, int]]:
    """
    Rank (name, score) pairs by descending score.

    Ties share the smallest rank and the next rank skips ("1224" ranking);
    tied entries are listed by name.
    """
    check_unique([name for name, _ in entries], "algorithm name")
    ordered = sorted(entries, key=lambda item: (-item[1], item[0]))
    ranked: List[Tuple[str, float, int]] = []
    for position, (name, score) in enumerate(ordered, start=1):
        if ranked and ranked[-1][1] == score:
            rank = ranked[-1][2]
        else:
            rank = position
        ranked.append((name, score, rank))
    return ranked


def rank_algorithms(
    entries: Sequence[Tuple[str, float]],
    nsd_entries: Optional[Sequence[Tuple[str, float]]] = None,
) -> List[StageRow]:
    """
    Ranked report rows ordered by the first metric.

    Args:
        entries: (name, aggregate MI_DSC) pairs
        nsd_entries: Optional (name, aggregate MI_NSD) pairs for the same names;
            when omitted the MI_NSD column repeats entries

    Returns:
        StageRow list, descending by MI_DSC with ties ordered by name
    """
    nsd_entries = entries if nsd_entries is None else nsd_entries
    by_dsc = competition_ranks(entries)
    by_nsd = {name: (score, rank) for name, score, rank in competition_ranks(nsd_entries)}
    if set(by_nsd) != {name for name, _, _ in by_dsc}:
        raise ContractViolation("MI_DSC and MI_NSD entries must name the same algorithms")
    return [
        StageRow(
            name=name,
            mi_dsc=score,
            mi_nsd=by_nsd[name][0],
            rank_dsc=rank,
            rank_nsd=by_nsd[name][1],
        )
        for name, score, rank in by_dsc
    ]


def build_stage_report(
    algorithms: Mapping[str, Sequence[FrameEval]],
    p: float = ROBUSTNESS_PERCENTILE,
    stage: str = "3",
    fps: Optional[Mapping[str, float]] = None,
    approximate_fps: Iterable[str] = (),
    architectures: Optional[Mapping[str, str]] = None,
) -> StageReport:
    """
    Aggregate and rank per-frame evaluations of several algorithms.

    Args:
        algorithms: Algorithm name -> its FrameEval records
        p: Robustness percentile
        stage: Stage label carried by the report
        fps: Optional mean fps per algorithm
        approximate_fps: Names whose fps is approximated from another model
        architectures: Optional free-text architecture per algorithm

    Returns:
        StageReport with rows in MI_DSC rank order
    """
    fps = fps or {}
    architectures = architectures or {}
    approximate = set(approximate_fps)
    aggregates = {name: aggregate_algorithm(frames, p) for name, frames in algorithms.items()}
    rows = rank_algorithms(
        [(name, agg[0]) for name, agg in aggregates.items()],
        [(name, agg[1]) for name, agg in aggregates.items()],
    )
    completed = []
    for row in rows:
        frames = algorithms[row.name]
        completed.append(
            row.model_copy(
                update={
                    "n_frames": len(frames),
                    "fps": fps.get(row.name),
                    "fps_approximate": row.name in approximate,
                    "architecture": architectures.get(row.name),
                    "frame_dsc": [f.mi_dsc for f in frames],
                    "frame_nsd": [f.mi_nsd for f in frames],
                }
            )
        )
    logger.info(f"Stage {stage} report - {len(completed)} algorithms | p={p}")
    return StageReport(stage=stage, percentile=p, rows=completed)


def _format_fps(row: StageRow) -> str:
    if row.fps is None:
        return ""
    text = f"{row.fps:g}"
    return f"{text}*" if row.fps_approximate else text


def _boxplot_series(scores: Sequence[float], p: float) -> Dict:
    ordered = sorted(scores)
    if not ordered:
        return {"scores": [], "q1": None, "median": None, "q3": None, "p05": None}
    return {
        "scores": ordered,
        "q1": percentile(ordered, 0.25),
        "median": percentile(ordered, 0.5),
        "q3": percentile(ordered, 0.75),
        "p05": percentile(ordered, p),
    }


def emit_report(report: StageReport, fmt: ReportFormat = "csv") -> str:
    """
    Render a StageReport.

    csv: one row per algorithm with CSV_COLUMNS, approximated fps marked "*".
    json: the report model without per-frame scores.
    boxplot-data: per algorithm sorted frame scores, quartiles and the
    percentile marker for each metric.
    """
    if fmt not in REPORT_FORMATS:
        raise ConfigurationError(f"Unknown report format '{fmt}'; expected one of {REPORT_FORMATS}")

    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in report.rows:
            writer.writerow([row.name, f"{row.mi_dsc:.3f}", f"{row.mi_nsd:.3f}", row.rank_dsc, row.rank_nsd, _format_fps(row)])
        return buffer.getvalue()

    if fmt == "json":
        return report.model_dump_json(indent=2, exclude={"rows": {"__all__": {"frame_dsc", "frame_nsd"}}})

    payload = {
        "stage": report.stage,
        "percentile": report.percentile,
        "algorithms": [
            {
                "name": row.name,
                "mi_dsc": _boxplot_series(row.frame_dsc, report.percentile),
                "mi_nsd": _boxplot_series(row.frame_nsd, report.percentile),
            }
            for row in report.rows
        ],
    }
    return json.dumps(payload, indent=2)


def stratify_by_tag(
    frames: Sequence[FrameEval],
    tags: Mapping[str, Sequence[str]],
    p: float = ROBUSTNESS_PERCENTILE,
) -> Dict[str, Tuple[float, float]]:
    """
    Robustness aggregate restricted to frames carrying each nuisance tag.

    Args:
        frames: Per-frame evaluations
        tags: frame id -> nuisance tags of that frame
        p: Robustness percentile

    Returns:
        tag -> (MI_DSC, MI_NSD) aggregate, tags in sorted order
    """
    grouped: Dict[str, List[FrameEval]] = {}
    for frame in frames:
        for tag in tags.get(frame.frame_id, ()):
            grouped.setdefault(tag, []).append(frame)
    return {tag: aggregate_algorithm(grouped[tag], p) for tag in sorted(grouped)}


def parse_aggregates(text: str) -> Dict[str, List[Dict]]:
    """
    Parse a CSV of published aggregates, grouped by stage.

    Required columns: name, mi_dsc, mi_nsd. Optional: fps (a trailing "*" marks
    an approximated value), stage (defaults to "3"), architecture.
    """
    reader = csv.DictReader(io.StringIO(text))
    missing = {"name", "mi_dsc", "mi_nsd"} - set(reader.fieldnames or ())
    if missing:
        raise ContractViolation(f"Aggregates file lacks columns: {sorted(missing)}")
    stages: Dict[str, List[Dict]] = {}
    for line, raw in enumerate(reader, start=2):
        try:
            fps_text = (raw.get("fps") or "").strip()
            entry = {
                "name": raw["name"].strip(),
                "mi_dsc": float(raw["mi_dsc"]),
                "mi_nsd": float(raw["mi_nsd"]),
                "fps": float(fps_text.rstrip("*")) if fps_text else None,
                "fps_approximate": fps_text.endswith("*"),
                "architecture": (raw.get("architecture") or "").strip() or None,
            }
        except (TypeError, ValueError) as e:
            raise ContractViolation(f"Aggregates line {line}: {e}") from e
        stages.setdefault((raw.get("stage") or "3").strip(), []).append(entry)
    return stages


def report_from_aggregates(entries: Sequence[Mapping], stage: str = "3", p: float = ROBUSTNESS_PERCENTILE) -> StageReport:
    """StageReport ranked from already aggregated scores (no per-frame data)."""
    rows = rank_algorithms(
        [(e["name"], e["mi_dsc"]) for e in entries],
        [(e["name"], e["mi_nsd"]) for e in entries],
    )
    extras = {e["name"]: e for e in entries}
    completed = [
        row.model_copy(
            update={
                "fps": extras[row.name].get("fps"),
                "fps_approximate": bool(extras[row.name].get("fps_approximate", False)),
                "architecture": extras[row.name].get("architecture"),
            }
        )
        for row in rows
    ]
    return StageReport(stage=stage, percentile=p, rows=completed)
