"""
Throughput benchmark and analytic complexity report.

Protocol: frames are preloaded, warmup passes are discarded, then the whole
sequence is inferred `repetitions` times; each repetition yields one fps
value (frames / elapsed) and the reported figure is their arithmetic mean.
Timing covers infer_frame only, no disk I/O.
"""

import csv
import hashlib
import io
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ccseg.core.errors import ConfigurationError, ContractViolation
from ccseg.evaluation.aggregation_ranking import percentile
from ccseg.nn.ccam_attention import affinity_entry_count
from ccseg.nn.tensor_kernels import conv_output_extent
from ccseg.pipeline.anchors import pyramid_extent
from ccseg.pipeline.clock import NullClock, StageClock
from ccseg.pipeline.pipeline import FrameResult, SegmentationPipeline, image_to_tensor
from ccseg.pipeline.variant import BACKBONE_LEVELS, PYRAMID_LEVELS, VariantSpec
from ccseg.pipeline.weights_file import init_weights
from ccseg.schemas import BenchResult, OpCountReport, OpCountRow, OrderingCheck
from ccseg.utils.logger import bench_logger as logger, log_bench_run, log_stage_timing

DEFAULT_REPETITIONS = 10
DEFAULT_WARMUP = 2

# (faster, slower) insertion pairs: each slower variant does strictly more work
EXPECTED_ORDERING: Tuple[Tuple[str, str], ...] = (
    ("none", "backbone"),
    ("backbone", "both"),
    ("none", "fpn"),
    ("fpn", "both"),
)


def prepare_frames(frames: Iterable[np.ndarray]) -> List[np.ndarray]:
    """Convert (H, W, 3) uint8 frames to pipeline tensors; tensors pass through."""
    prepared = []
    for frame in frames:
        arr = np.asarray(frame)
        if arr.ndim == 3 and arr.shape[2] == 3 and arr.dtype == np.uint8:
            arr = image_to_tensor(arr)
        prepared.append(arr)
    return prepared


def output_digest(results: Sequence[FrameResult]) -> str:
    """SHA-256 over the label maps and detection boxes of a run."""
    digest = hashlib.sha256()
    for result in results:
        digest.update(np.ascontiguousarray(result.labels, dtype=np.int64).tobytes())
        for detection in result.detections:
            digest.update(np.asarray(detection.box, dtype=np.float64).tobytes())
            digest.update(np.float64(detection.class_confidence).tobytes())
    return digest.hexdigest()


def _run_once(
    pipeline: SegmentationPipeline,
    frames: Sequence[np.ndarray],
    clock: StageClock,
    parallel: bool,
    workers: int,
) -> Tuple[float, List[FrameResult]]:
    start = time.perf_counter()
    if parallel:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(pipeline.infer, frames))
    else:
        results = [pipeline.infer(frame, clock) for frame in frames]
    return time.perf_counter() - start, results


def measure_throughput(
    pipeline: SegmentationPipeline,
    frames: Sequence[np.ndarray],
    repetitions: int = DEFAULT_REPETITIONS,
    warmup: int = DEFAULT_WARMUP,
    parallel: bool = False,
    workers: int = 4,
) -> BenchResult:
    """
    Benchmark a pipeline over a preloaded frame sequence.

    Args:
        pipeline: Pipeline under test
        frames: (3, H, W) tensors or (H, W, 3) uint8 frames
        repetitions: Measured passes over the sequence
        warmup: Discarded passes run first
        parallel: Infer frames on a thread pool; reported as a separate mode
        workers: Thread count in parallel mode

    Returns:
        BenchResult; raises ContractViolation if any pass produced different outputs
    """
    frames = prepare_frames(frames)
    if not frames:
        raise ContractViolation("measure_throughput needs a nonempty frame sequence")
    if repetitions < 1:
        raise ContractViolation(f"repetitions must be >= 1, got {repetitions}")
    name = pipeline.variant.display_name
    mode = "parallel" if parallel else "sequential"

    for index in range(warmup):
        elapsed, _ = _run_once(pipeline, frames, NullClock(), parallel, workers)
        log_bench_run(logger, name, index, len(frames) / elapsed, len(frames), warmup=True)

    runs: List[float] = []
    totals = StageClock()
    reference: Optional[str] = None
    for index in range(repetitions):
        clock = NullClock() if parallel else StageClock()
        elapsed, results = _run_once(pipeline, frames, clock, parallel, workers)
        digest = output_digest(results)
        if reference is None:
            reference = digest
        elif digest != reference:
            raise ContractViolation(f"{name}: outputs of run {index} differ from run 0")
        runs.append(len(frames) / elapsed)
        totals.merge(clock)
        log_bench_run(logger, name, index, runs[-1], len(frames))

    stage_seconds = {} if parallel else {stage: seconds / repetitions for stage, seconds in totals.seconds.items()}
    if stage_seconds:
        log_stage_timing(logger, name, stage_seconds)

    _, height, width = frames[0].shape
    return BenchResult(
        variant=name,
        image_size=(height, width),
        runs=runs,
        mean_fps=sum(runs) / len(runs),
        repetitions=repetitions,
        warmup=warmup,
        frames=len(frames),
        mode=mode,
        stage_seconds=stage_seconds,
        output_digest=reference,
    )


def benchmark_variants(
    frames: Sequence[np.ndarray],
    variants: Sequence[VariantSpec],
    seed: int = 0,
    repetitions: int = DEFAULT_REPETITIONS,
    warmup: int = DEFAULT_WARMUP,
    parallel: bool = False,
    workers: int = 4,
) -> Dict[str, BenchResult]:
    """measure_throughput for each variant with seeded weights; keyed by insertion."""
    frames = prepare_frames(frames)
    results = {}
    for variant in variants:
        pipeline = SegmentationPipeline(init_weights(variant, seed=seed), variant)
        results[variant.insertion] = measure_throughput(pipeline, frames, repetitions, warmup, parallel, workers)
        logger.info(f"{variant.display_name}: {results[variant.insertion].mean_fps:.2f} fps")
    return results


def check_throughput_ordering(results: Mapping[str, BenchResult]) -> List[OrderingCheck]:
    """
    Compare every expected (faster, slower) pair present in results.

    A pair counts as reversed only when the slower variant's 5th-percentile
    run fps is above the faster variant's mean fps.
    """
    checks = []
    for faster, slower in EXPECTED_ORDERING:
        if faster not in results or slower not in results:
            continue
        fast, slow = results[faster], results[slower]
        if fast.mode != "sequential" or slow.mode != "sequential":
            raise ContractViolation("Ordering checks use sequential benchmark results only")
        slow_p05 = percentile(slow.runs, 0.05)
        checks.append(
            OrderingCheck(
                faster=fast.variant,
                slower=slow.variant,
                faster_mean_fps=fast.mean_fps,
                slower_mean_fps=slow.mean_fps,
                slower_p05_fps=slow_p05,
                reversed=slow_p05 > fast.mean_fps,
            )
        )
    return checks


def bench_table(
    results: Mapping[str, BenchResult],
    scores: Optional[Mapping[str, Tuple[float, float]]] = None,
) -> str:
    """CSV with columns name, MI_DSC, MI_NSD, FPS; scores keyed by variant display name."""
    scores = scores or {}
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(("name", "MI_DSC", "MI_NSD", "FPS"))
    for result in results.values():
        dsc, nsd = scores.get(result.variant, (None, None))
        writer.writerow(
            (
                result.variant,
                "" if dsc is None else f"{dsc:.3f}",
                "" if nsd is None else f"{nsd:.3f}",
                f"{result.mean_fps:.2f}",
            )
        )
    return buffer.getvalue()


def _conv_macs(c_out: int, c_in: int, k: int, h: int, w: int) -> int:
    return c_out * c_in * k * k * h * w


def attention_macs(channels: int, qk_channels: int, height: int, width: int, passes: int) -> int:
    """Projections, affinities and aggregation per pass, plus the 2C -> C fusion."""
    hw = height * width
    context = height + width - 1
    per_pass = (2 * qk_channels * channels + channels * channels) * hw
    per_pass += qk_channels * hw * context + channels * hw * context
    return passes * per_pass + 2 * channels * channels * hw


def _attention_row(stage: str, site: str, channels: int, height: int, width: int, variant: VariantSpec) -> OpCountRow:
    cfg = variant.attention_config(channels)
    return OpCountRow(
        stage=stage,
        site=site,
        height=height,
        width=width,
        criss_cross_entries=affinity_entry_count(height, width),
        dense_entries=(height * width) ** 2,
        macs=attention_macs(channels, cfg.qk_channels, height, width, cfg.recurrence),
    )


def op_count_report(variant: VariantSpec, image_size: Tuple[int, int]) -> OpCountReport:
    """
    Analytic affinity-entry and multiply-accumulate counts; nothing is executed.

    Attention rows carry the criss-cross affinity entries of one pass at the
    site, H*W*(H+W-1), next to the dense non-local count (H*W)^2.
    """
    height, width = image_size
    if height % 32 or width % 32:
        raise ConfigurationError(f"Image extents must be divisible by 32, got {height}x{width}")
    rows: List[OpCountRow] = []

    h, w = conv_output_extent(height, 3, 2, 1), conv_output_extent(width, 3, 2, 1)
    macs = _conv_macs(variant.stem_channels, 3, 3, h, w)
    h2, w2 = conv_output_extent(h, 3, 2, 1), conv_output_extent(w, 3, 2, 1)
    macs += _conv_macs(variant.stem_channels, variant.stem_channels, 3, h2, w2)
    h, w, c_in = h2, w2, variant.stem_channels
    stage_extents = {}
    for level, c_out in zip(BACKBONE_LEVELS, variant.backbone_channels):
        h, w = conv_output_extent(h, 3, 2, 1), conv_output_extent(w, 3, 2, 1)
        macs += _conv_macs(c_out, c_in, 3, h, w)
        macs += 2 * variant.blocks_per_stage * _conv_macs(c_out, c_out, 3, h, w)
        stage_extents[level] = (c_out, h, w)
        c_in = c_out
    rows.append(OpCountRow(stage="backbone", macs=macs))

    if variant.backbone_attention:
        for level, (channels, lh, lw) in stage_extents.items():
            rows.append(_attention_row("attention", f"backbone.{level}", channels, lh, lw, variant))

    f = variant.fpn_channels
    levels = {level: (pyramid_extent(height, int(level[1])), pyramid_extent(width, int(level[1]))) for level in PYRAMID_LEVELS}
    macs = 0
    for level, (c, lh, lw) in stage_extents.items():
        macs += _conv_macs(f, c, 1, lh, lw)
    for level in ("P3", "P4", "P5"):
        macs += _conv_macs(f, f, 3, *levels[level])
    macs += _conv_macs(f, f, 3, *levels["P6"]) + _conv_macs(f, f, 3, *levels["P7"])
    rows.append(OpCountRow(stage="fpn", macs=macs))

    if variant.fpn_attention:
        for level in PYRAMID_LEVELS:
            rows.append(_attention_row("attention", f"fpn.{level}", f, *levels[level], variant))

    p = variant.proto_channels
    p3h, p3w = levels["P3"]
    macs = _conv_macs(p, f, 3, p3h, p3w) + _conv_macs(p, p, 3, p3h, p3w)
    macs += _conv_macs(p, p, 3, 2 * p3h, 2 * p3w) + _conv_macs(variant.prototype_count, p, 1, 2 * p3h, 2 * p3w)
    a = variant.anchors_per_position
    head_out = a * (variant.num_classes + 4 + variant.prototype_count)
    for lh, lw in levels.values():
        macs += _conv_macs(f, f, 3, lh, lw) + _conv_macs(head_out, f, 3, lh, lw)
    rows.append(OpCountRow(stage="heads", macs=macs))

    return OpCountReport(variant=variant.display_name, image_size=(height, width), rows=rows)
