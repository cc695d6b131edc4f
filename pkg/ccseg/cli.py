"""
Command-line entry point: `ccseg <subcommand> [flags]`.

Machine-readable results go to files under the output directory; a short
human summary goes to standard output. Exit status: 0 on success, 1 on a
usage, configuration or contract error, 2 on an I/O error.
"""

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import click
import numpy as np
from pydantic import ValidationError

from ccseg import __version__
from ccseg.bench.harness import (
    bench_table,
    benchmark_variants,
    check_throughput_ordering,
    measure_throughput,
    op_count_report,
    prepare_frames,
)
from ccseg.core.config import RunConfig, load_run_config
from ccseg.core.errors import ConfigurationError, ContractViolation, DataIOError, UnwritableOutputError
from ccseg.data.labelmap_io import read_image, read_labelmap, write_labelmap
from ccseg.data.manifest import MANIFEST_NAME, load_manifest
from ccseg.data.synth import synth_generate, synth_sequence, write_corpus
from ccseg.evaluation.aggregation_ranking import (
    aggregate_algorithm,
    build_stage_report,
    emit_report,
    parse_aggregates,
    report_from_aggregates,
    stratify_by_tag,
)
from ccseg.evaluation.robust_metrics import evaluate_frames, read_frame_evals, write_frame_evals
from ccseg.nn.ccam_attention import AttentionConfig, gradient_check
from ccseg.pipeline.pipeline import SegmentationPipeline
from ccseg.pipeline.variant import VariantSpec, all_variants
from ccseg.pipeline.weights_file import init_weights, read_weights
from ccseg.selftest import run_selftest
from ccseg.utils.logger import main_logger as logger, set_verbosity

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
GRADCHECK_TOLERANCE = 1e-4
REPORT_SUFFIX = {"csv": ".csv", "json": ".json", "boxplot-data": "_boxplot.json"}
VERBOSITY = click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False)
PATH = click.Path(path_type=Path)


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write {path}: {e}") from e


def _write_json(path: Path, payload) -> None:
    _write_text(path, json.dumps(payload, indent=2) + "\n")


def _resolve(ctx: click.Context, subcommand: str, **flags) -> RunConfig:
    """Merge group and subcommand flags into a RunConfig and echo it."""
    options = dict(ctx.obj or {})
    config_file = options.pop("config_file", None)
    cfg = load_run_config(config_file, subcommand=subcommand, **options, **flags)
    set_verbosity(cfg.verbosity)
    _write_json(cfg.output_dir / "resolved_config.json", cfg.echo())
    logger.info(f"Resolved config: {json.dumps(cfg.echo(), sort_keys=True)}")
    return cfg


def _variant(cfg: RunConfig, name: Optional[str] = None) -> VariantSpec:
    return VariantSpec.from_name(name or cfg.variant, display_confidence=cfg.confidence, weights_seed=cfg.seed)


def _label_dir(path: Path, subdir: str) -> Path:
    """Directory holding label PNGs: path itself or its conventional subdirectory."""
    if not path.is_dir():
        raise DataIOError(f"Directory not found: {path}")
    nested = path / subdir
    return nested if nested.is_dir() else path


def _image_files(path: Path) -> List[Path]:
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise DataIOError(f"Input not found: {path}")
    folder = path / "images" if (path / "images").is_dir() else path
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _parse_named_paths(entries: Sequence[str]) -> Dict[str, Path]:
    named: Dict[str, Path] = {}
    for entry in entries:
        name, sep, path = entry.partition("=")
        if not sep or not name or not path:
            raise click.UsageError(f"--frame-scores expects NAME=PATH, got '{entry}'")
        if name in named:
            raise click.UsageError(f"Algorithm '{name}' given twice")
        named[name] = Path(path)
    return named


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="ccseg")
@click.option("--config", "config_file", type=PATH, default=None, help="TOML file of run settings")
@click.option("--seed", type=int, default=None, help="Run seed")
@click.option("--output-dir", type=PATH, default=None, help="Directory receiving result files")
@click.option("--verbosity", type=VERBOSITY, default=None, help="Log level")
@click.pass_context
def cli(ctx, config_file, seed, output_dir, verbosity):
    """Criss-cross attention instance segmentation toolkit."""
    ctx.obj = {"config_file": config_file, "seed": seed, "output_dir": output_dir, "verbosity": verbosity}


@cli.command()
@click.option("--stage", type=click.Choice(["train", "1", "2", "3"]), default=None)
@click.option("--count", type=int, default=None, help="Number of frames")
@click.option("--image-size", type=int, default=None, help="Square frame extent")
@click.option("--sequence/--no-sequence", default=None, help="Render one temporally coherent clip")
@click.pass_context
def synth(ctx, stage, count, image_size, sequence):
    """Render a synthetic corpus with manifest."""
    cfg = _resolve(ctx, "synth", stage=stage, count=count, image_size=image_size, sequence=sequence)
    if cfg.sequence:
        frames = synth_sequence(cfg.count, cfg.seed, cfg.image_size, stage=cfg.stage)
        manifest = write_corpus(frames, cfg.stage, cfg.output_dir, prefix="seq")
    else:
        manifest = synth_generate(cfg.stage, cfg.count, cfg.seed, cfg.output_dir, cfg.image_size)
    click.echo(f"{len(manifest.frames)} frames written to {cfg.output_dir}")
    for procedure, row in sorted(manifest.counts_by_procedure().items()):
        click.echo(f"  {procedure}: {row[cfg.stage]}")


@cli.command()
@click.option("--input", "input_path", type=PATH, required=True, help="Image file or directory")
@click.option("--variant", type=str, default=None, help="none, backbone, fpn or both")
@click.option("--weights", type=PATH, default=None, help="Weights file; seeded weights when omitted")
@click.option("--confidence", type=float, default=None, help="Display confidence threshold")
@click.pass_context
def infer(ctx, input_path, variant, weights, confidence):
    """Segment images into label maps and detection records."""
    cfg = _resolve(ctx, "infer", input=input_path, variant=variant, weights=weights, confidence=confidence)
    spec = _variant(cfg)
    store = read_weights(cfg.weights) if cfg.weights else init_weights(spec)
    pipeline = SegmentationPipeline(store, spec)

    files = _image_files(cfg.input)
    records = []
    instances = 0
    for path in files:
        result = pipeline.infer_rgb(read_image(path))
        write_labelmap(result.labels, cfg.output_dir / "labels" / f"{path.stem}.png")
        records.append({"frame_id": path.stem, "detections": [d.model_dump() for d in result.detections]})
        instances += len(result.detections)
    _write_text(cfg.output_dir / "detections.jsonl", "".join(json.dumps(r) + "\n" for r in records))
    click.echo(f"{spec.display_name}: {len(files)} frames, {instances} instances -> {cfg.output_dir}")


@cli.command(name="eval")
@click.option("--gt", type=PATH, required=True, help="Ground-truth label directory")
@click.option("--pred", type=PATH, required=True, help="Predicted label directory")
@click.option("--tau", type=float, default=None, help="NSD tolerance in pixels")
@click.option("--name", type=str, default=None, help="Algorithm name used in the summary")
@click.option("--manifest", type=PATH, default=None, help="Manifest with nuisance tags for stratified scores")
@click.pass_context
def evaluate(ctx, gt, pred, tau, name, manifest):
    """Score predicted label maps against ground truth, frame by frame."""
    cfg = _resolve(ctx, "eval", gt=gt, pred=pred, tau=tau, name=name, manifest=manifest)
    gt_dir = _label_dir(cfg.gt, "annotations")
    pred_dir = _label_dir(cfg.pred, "labels")

    pairs: List[Tuple[str, np.ndarray, np.ndarray]] = []
    for gt_path in sorted(gt_dir.glob("*.png")):
        truth = read_labelmap(gt_path)
        pred_path = pred_dir / gt_path.name
        # a frame without a prediction file counts as predicting nothing
        prediction = read_labelmap(pred_path) if pred_path.is_file() else np.zeros_like(truth)
        pairs.append((gt_path.stem, truth, prediction))
    if not pairs:
        raise DataIOError(f"No ground-truth label maps in {gt_dir}")

    evaluations = evaluate_frames(pairs, cfg.tau)
    write_frame_evals(evaluations, cfg.output_dir / "frame_evals.jsonl")
    mi_dsc, mi_nsd = aggregate_algorithm(evaluations, cfg.percentile)
    click.echo(f"{cfg.name}: {len(evaluations)} frames | MI_DSC p{cfg.percentile:g} {mi_dsc:.3f} | MI_NSD {mi_nsd:.3f}")

    manifest_path = cfg.manifest or (cfg.gt / MANIFEST_NAME if (cfg.gt / MANIFEST_NAME).is_file() else None)
    if manifest_path is not None:
        records = load_manifest(manifest_path, check_paths=False)
        tags = {record.frame_id: record.nuisance_tags for record in records.frames}
        strata = stratify_by_tag(evaluations, tags, cfg.percentile)
        _write_json(cfg.output_dir / "strata.json", {tag: {"mi_dsc": d, "mi_nsd": n} for tag, (d, n) in strata.items()})
        for tag, (d, n) in strata.items():
            click.echo(f"  {tag}: MI_DSC {d:.3f} | MI_NSD {n:.3f}")


@cli.command()
@click.option("--frame-scores", multiple=True, help="NAME=PATH of a frame_evals.jsonl file; repeatable")
@click.option("--aggregates", type=PATH, default=None, help="CSV of already aggregated scores")
@click.option("--stage", type=click.Choice(["1", "2", "3"]), default=None, help="Stage label of the report")
@click.option("--percentile", type=float, default=None, help="Robustness percentile")
@click.option("--format", "report_format", type=click.Choice(list(REPORT_SUFFIX)), default=None)
@click.pass_context
def rank(ctx, frame_scores, aggregates, stage, percentile, report_format):
    """Aggregate and rank algorithms into stage reports."""
    cfg = _resolve(
        ctx,
        "rank",
        frame_scores=list(frame_scores) or None,
        aggregates=aggregates,
        stage=stage,
        percentile=percentile,
        report_format=report_format,
    )
    if not cfg.frame_scores and cfg.aggregates is None:
        raise click.UsageError("rank needs --frame-scores or --aggregates")

    reports = []
    if cfg.frame_scores:
        named = _parse_named_paths(cfg.frame_scores)
        algorithms = {name: read_frame_evals(path) for name, path in named.items()}
        label = cfg.stage if cfg.stage != "train" else "3"
        reports.append(build_stage_report(algorithms, cfg.percentile, stage=label))
    if cfg.aggregates is not None:
        if not cfg.aggregates.is_file():
            raise DataIOError(f"Aggregates file not found: {cfg.aggregates}")
        for label, entries in sorted(parse_aggregates(cfg.aggregates.read_text(encoding="utf-8")).items()):
            reports.append(report_from_aggregates(entries, label, cfg.percentile))

    for report in reports:
        path = cfg.output_dir / f"report_stage{report.stage}{REPORT_SUFFIX[cfg.report_format]}"
        _write_text(path, emit_report(report, cfg.report_format))
        click.echo(f"Stage {report.stage}")
        click.echo(emit_report(report, "csv"), nl=False)


@cli.command()
@click.option("--variant", type=str, default=None, help="Variant to benchmark")
@click.option("--compare/--no-compare", default=None, help="Benchmark all four variants and check their ordering")
@click.option("--frames", type=int, default=None, help="Frames in the synthetic sequence")
@click.option("--image-size", type=int, default=None, help="Square frame extent, divisible by 32")
@click.option("--repetitions", type=int, default=None)
@click.option("--warmup", type=int, default=None)
@click.option("--parallel/--sequential", default=None, help="Infer frames on a thread pool")
@click.option("--workers", type=int, default=None)
@click.option("--weights", type=PATH, default=None, help="Weights file for a single variant")
@click.pass_context
def bench(ctx, variant, compare, frames, image_size, repetitions, warmup, parallel, workers, weights):
    """Throughput benchmark over a synthetic frame sequence."""
    cfg = _resolve(
        ctx,
        "bench",
        variant=variant,
        compare=compare,
        frames=frames,
        image_size=image_size,
        repetitions=repetitions,
        warmup=warmup,
        parallel=parallel,
        workers=workers,
        weights=weights,
    )
    if cfg.compare and cfg.weights is not None:
        raise click.UsageError("--weights applies to a single variant, not --compare")
    variants = all_variants(display_confidence=cfg.confidence, weights_seed=cfg.seed) if cfg.compare else [_variant(cfg)]
    reports = [op_count_report(spec, (cfg.image_size, cfg.image_size)) for spec in variants]
    sequence = prepare_frames(frame.image for frame in synth_sequence(cfg.frames, cfg.seed, cfg.image_size))

    if cfg.weights is not None:
        pipeline = SegmentationPipeline.from_file(cfg.weights, variants[0])
        results = {
            variants[0].insertion: measure_throughput(
                pipeline, sequence, cfg.repetitions, cfg.warmup, cfg.parallel, cfg.workers
            )
        }
    else:
        results = benchmark_variants(
            sequence, variants, cfg.seed, cfg.repetitions, cfg.warmup, cfg.parallel, cfg.workers
        )

    for insertion, result in results.items():
        _write_text(cfg.output_dir / f"bench_{insertion}.json", result.model_dump_json(indent=2))
    _write_json(cfg.output_dir / "op_counts.json", [report.model_dump(mode="json") for report in reports])
    table = bench_table(results)
    _write_text(cfg.output_dir / "bench_table.csv", table)
    click.echo(table, nl=False)

    if cfg.compare and not cfg.parallel:
        checks = check_throughput_ordering(results)
        _write_json(cfg.output_dir / "ordering.json", [check.model_dump() for check in checks])
        for check in checks:
            status = "REVERSED" if check.reversed else "ok"
            click.echo(f"  {check.faster} >= {check.slower}: {status}")


@cli.command()
@click.option("--seeds", type=int, default=None, help="Number of seeds, starting at --seed")
@click.pass_context
def gradcheck(ctx, seeds):
    """Finite-difference check of the criss-cross attention backward pass."""
    cfg = _resolve(ctx, "gradcheck", seeds=seeds)
    attention = AttentionConfig(channels=4, reduction=2)
    per_seed = {}
    for seed in range(cfg.seed, cfg.seed + cfg.seeds):
        per_seed[str(seed)] = gradient_check(attention, seed, height=4, width=4)
    worst = max(max(groups.values()) for groups in per_seed.values())
    _write_json(cfg.output_dir / "gradcheck.json", {"tolerance": GRADCHECK_TOLERANCE, "max_error": worst, "seeds": per_seed})
    click.echo(f"gradcheck: {cfg.seeds} seeds, max relative error {worst:.2e}")
    if worst > GRADCHECK_TOLERANCE:
        raise ContractViolation(f"Gradient check failed: max relative error {worst:.2e} > {GRADCHECK_TOLERANCE}")


@cli.command()
@click.pass_context
def selftest(ctx):
    """Run the reduced-size invariant suite of every module."""
    cfg = _resolve(ctx, "selftest")
    report = run_selftest(cfg.seed)
    _write_text(cfg.output_dir / "selftest.json", report.model_dump_json(indent=2))
    for check in report.checks:
        click.echo(f"{'PASS' if check.passed else 'FAIL'} {check.name} ({check.seconds:.2f}s) {check.detail}")
    if not report.passed:
        failed = [check.name for check in report.checks if not check.passed]
        raise ContractViolation(f"Selftest failed: {', '.join(failed)}")


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI on argv and return its exit status instead of exiting."""
    try:
        result = cli.main(args=list(argv) if argv is not None else None, prog_name="ccseg", standalone_mode=False)
        return result if isinstance(result, int) else 0
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        return 1
    except (ContractViolation, ConfigurationError, ValidationError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        click.echo(f"Error: {e}", err=True)
        return 1
    except OSError as e:
        logger.error(f"{type(e).__name__}: {e}")
        click.echo(f"I/O error: {e}", err=True)
        return 2


def main() -> None:
    raise SystemExit(run())
