"""
Reduced-size invariant suite run by `ccseg selftest`.

Each check returns (passed, detail); exceptions count as failures.
"""

import time
from typing import Callable, List, Tuple

import numpy as np
from pydantic import BaseModel

from ccseg.bench.harness import op_count_report
from ccseg.data.manifest import filter_empty_frames, split_train_val
from ccseg.evaluation.aggregation_ranking import percentile, rank_algorithms
from ccseg.evaluation.robust_metrics import distance_transform, dsc, match_instances, nsd
from ccseg.nn.ccam_attention import (
    AttentionConfig,
    CCWeights,
    affinity_entry_count,
    gradient_check,
    influence_map,
    rcca_forward,
    rcca_forward_reference,
)
from ccseg.nn.tensor_kernels import bilinear_resize, conv2d, softmax_axis
from ccseg.pipeline.anchors import generate_anchors
from ccseg.pipeline.pipeline import infer_frame
from ccseg.pipeline.variant import PYRAMID_LEVELS, VariantSpec, all_variants
from ccseg.pipeline.weights_file import init_weights, zero_attention_paths
from ccseg.schemas import DatasetManifest, FrameRecord
from ccseg.utils.logger import main_logger as logger

CheckResult = Tuple[bool, str]

# Stage-3 MI_DSC aggregates of the published leaderboard
LEADERBOARD_MI_DSC = (
    ("www", 0.31),
    ("Uniandes", 0.26),
    ("SQUASH", 0.22),
    ("CASIA_SRL", 0.19),
    ("fisensee", 0.17),
    ("caresyntax", 0.0),
    ("VIE", 0.0),
    ("CCAM-Backbone", 0.313),
    ("CCAM-Full", 0.308),
    ("CCAM-FPN", 0.0),
    ("Base", 0.0),
)


class CheckOutcome(BaseModel):
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0


class SelfTestReport(BaseModel):
    seed: int
    checks: List[CheckOutcome] = []

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


def _kernels(seed: int) -> CheckResult:
    out = conv2d(np.ones((1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1), stride=1, padding=1)
    soft = softmax_axis(np.log(np.array([1.0, 2.0, 7.0])), axis=0)
    ramp = bilinear_resize(np.array([[[0.0, 1.0]]]), 1, 4)
    ok = (
        out[0, 1, 1] == 9.0
        and out[0, 0, 0] == 4.0
        and np.allclose(soft, [0.1, 0.2, 0.7], atol=1e-12)
        and np.allclose(ramp[0, 0], [0.0, 0.25, 0.75, 1.0], atol=1e-12)
    )
    return ok, "conv2d, softmax and bilinear closed forms"


def _criss_cross_structure(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    cfg = AttentionConfig(channels=4, reduction=2)
    weights = CCWeights.initialize(cfg, rng)
    x = rng.standard_normal((4, 6, 6))
    one = influence_map(cfg, weights, x, (2, 3), passes=1)
    expected = {(2, c) for c in range(6)} | {(r, 3) for r in range(6)}
    two = influence_map(cfg, weights, x, (2, 3), passes=2)
    oracle = np.max(np.abs(rcca_forward(x, weights, cfg) - rcca_forward_reference(x, weights, cfg)))
    ok = one == expected and len(two) == 36 and oracle <= 1e-10 and affinity_entry_count(8, 8) == 960
    return ok, f"1-pass {len(one)} positions, 2-pass {len(two)}, oracle gap {oracle:.2e}"


def _gradients(seed: int) -> CheckResult:
    report = gradient_check(AttentionConfig(channels=2, reduction=1), seed)
    worst = max(report.values())
    return worst <= 1e-4, f"max relative error {worst:.2e}"


def _metrics(seed: int) -> CheckResult:
    y = np.zeros((4, 4), dtype=bool)
    y[0, :4] = True
    y_hat = np.zeros((4, 4), dtype=bool)
    y_hat[0, 1:4] = True
    y_hat[1, 0:3] = True
    left = np.zeros((8, 8), dtype=bool)
    left[:, 3] = True
    right = np.zeros((8, 8), dtype=bool)
    right[:, 4] = True

    rng = np.random.default_rng(seed)
    points = rng.random((16, 16)) < 0.05
    points[0, 0] = True
    coords = np.argwhere(points)
    grid = np.indices((16, 16)).reshape(2, -1).T
    brute = np.sqrt(((grid[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2)).min(axis=1).reshape(16, 16)

    gt = np.zeros((6, 6), dtype=np.int64)
    gt[:2, :2] = 1
    gt[4:, 4:] = 2
    ok = (
        dsc(y, y_hat) == 0.6
        and nsd(left, right, 1.0) == 1.0
        and nsd(left, right, 0.5) == 0.0
        and np.array_equal(distance_transform(points, 16, 16), brute)
        and match_instances(gt, gt) == [(1, 1), (2, 2)]
    )
    return ok, "dsc, nsd, distance transform and matching oracles"


def _aggregation(seed: int) -> CheckResult:
    p_a = percentile([i / 100 for i in range(101)], 0.05)
    p_b = percentile([i / 100 for i in range(1, 101)], 0.05)
    rows = rank_algorithms(list(LEADERBOARD_MI_DSC))
    order = [row.name for row in rows[:7]]
    tied = {row.rank_dsc for row in rows[7:]}
    ok = (
        abs(p_a - 0.05) < 1e-12
        and abs(p_b - 0.0595) < 1e-12
        and order == ["CCAM-Backbone", "www", "CCAM-Full", "Uniandes", "SQUASH", "CASIA_SRL", "fisensee"]
        and tied == {8}
    )
    return ok, f"p05 {p_a:.4f} / {p_b:.4f}, zero tie ranks {sorted(tied)}"


def _pipeline(seed: int) -> CheckResult:
    spec = VariantSpec()
    anchors = sum(
        len(generate_anchors(int(level[1]), (256, 256), (scale,), spec.anchor_ratios))
        for level, scale in zip(PYRAMID_LEVELS, spec.anchor_scales)
    )
    image = np.random.default_rng(seed).random((3, 64, 64))
    base = None
    same = True
    for variant in all_variants(weights_seed=seed):
        store = zero_attention_paths(init_weights(variant, attention_insertion="both"), variant)
        labels = infer_frame(image, store, variant).labels
        if base is None:
            base = labels
        same = same and np.array_equal(base, labels)
    return anchors == 4080 and same, f"{anchors} anchors at 256x256, zeroed attention equivalence {same}"


def _datakit(seed: int) -> CheckResult:
    frames = [
        FrameRecord(frame_id=f"f{i}", procedure="p", stage="train", image_path="i", annotation_path="a")
        for i in range(5983)
    ]
    manifest = DatasetManifest(frames=frames)
    annotations = {f"f{i}": np.zeros((1, 1)) if i < 996 else np.ones((1, 1)) for i in range(5983)}
    filtered = filter_empty_frames(manifest, annotations)
    train, val = split_train_val(filtered.manifest, 0.85, seed)
    ok = filtered.removed == 996 and len(train.frames) == 4239 and len(val.frames) == 748
    return ok, f"{len(filtered.manifest.frames)} kept, split {len(train.frames)}/{len(val.frames)}"


def _complexity(seed: int) -> CheckResult:
    report = op_count_report(VariantSpec(insertion="backbone"), (512, 512))
    site = next(row for row in report.rows if row.site == "backbone.C3")
    ratio = affinity_entry_count(64, 64) / (64 * 64) ** 2
    ok = site.criss_cross_entries == 520_192 and site.dense_entries == 16_777_216 and ratio < 0.04
    return ok, f"64x64 site {site.criss_cross_entries} vs {site.dense_entries} entries"


CHECKS: List[Tuple[str, Callable[[int], CheckResult]]] = [
    ("tensor_kernels", _kernels),
    ("ccam_structure", _criss_cross_structure),
    ("ccam_gradients", _gradients),
    ("robust_metrics", _metrics),
    ("aggregation_ranking", _aggregation),
    ("seg_pipeline", _pipeline),
    ("datakit", _datakit),
    ("complexity", _complexity),
]


def run_selftest(seed: int = 0) -> SelfTestReport:
    report = SelfTestReport(seed=seed)
    for name, check in CHECKS:
        start = time.perf_counter()
        try:
            passed, detail = check(seed)
        except Exception as e:
            passed, detail = False, f"{type(e).__name__}: {e}"
        outcome = CheckOutcome(name=name, passed=bool(passed), detail=detail, seconds=time.perf_counter() - start)
        report.checks.append(outcome)
        logger.info(f"Selftest {name}: {'PASS' if passed else 'FAIL'} - {detail}")
    return report
