"""
Tests for the segmentation pipeline: shapes, variants, anchors, NMS, masks and inference.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from ccseg.core.errors import ConfigurationError, WeightsLoadError
from ccseg.pipeline.anchors import DetectionBatch, box_iou, decode_boxes, fast_nms, generate_anchors
from ccseg.pipeline.clock import StageClock
from ccseg.pipeline.masks import assemble_masks, mask_logits
from ccseg.pipeline.network import extract_features, head_forward, protonet_forward
from ccseg.pipeline.pipeline import SegmentationPipeline, image_to_tensor, infer_frame
from ccseg.pipeline.variant import PYRAMID_LEVELS, VariantSpec, all_variants
from ccseg.pipeline.weights_file import (
    WeightStore,
    check_compatible,
    init_weights,
    read_weights,
    write_weights,
    zero_attention_paths,
)


@pytest.fixture(scope="module")
def image_256():
    return np.random.default_rng(21).random((3, 256, 256))


@pytest.fixture
def image_64():
    return np.random.default_rng(8).random((3, 64, 64))


def _silenced(store: WeightStore, variant: VariantSpec) -> WeightStore:
    """Store whose classifier puts every anchor firmly on background."""
    bias = np.zeros(variant.anchors_per_position * variant.num_classes)
    bias[1::variant.num_classes] = -50.0
    return store.updated({"head.cls.weight": np.zeros_like(store.require("head.cls.weight")), "head.cls.bias": bias})


# Variants and shapes

def test_variant_display_names():
    names = [variant.display_name for variant in all_variants()]
    assert names == ["Base YOLACT++", "CCAM-Backbone", "CCAM-FPN", "CCAM-Full"]
    assert VariantSpec.from_name("CCAM-Full").insertion == "both"
    with pytest.raises(ConfigurationError):
        VariantSpec.from_name("CCAM-Everything")


@pytest.mark.parametrize("insertion", ["none", "backbone", "fpn", "both"])
def test_shape_contract_at_256(insertion, image_256):
    variant = VariantSpec(insertion=insertion)
    store = init_weights(variant, seed=0)
    features = extract_features(image_256, store, variant)
    assert features.backbone["C3"].shape == (32, 32, 32)
    assert features.backbone["C4"].shape == (64, 16, 16)
    assert features.backbone["C5"].shape == (128, 8, 8)
    extents = {"P3": 32, "P4": 16, "P5": 8, "P6": 4, "P7": 2}
    for level in PYRAMID_LEVELS:
        assert features.pyramid[level].shape == (64, extents[level], extents[level])

    prototypes = protonet_forward(features.pyramid["P3"], store, variant)
    assert prototypes.shape == (8, 64, 64)

    head = head_forward(features.pyramid["P3"], store, variant)
    assert head.class_logits.shape == (3072, 2)
    assert head.box_regressions.shape == (3072, 4)
    assert head.coefficients.shape == (3072, 8)
    assert np.all(np.abs(head.coefficients) < 1.0)


def test_zeroed_backbone_attention_reproduces_base(image_64, small_variant):
    base_variant = small_variant.with_insertion("none")
    backbone_variant = small_variant.with_insertion("backbone")
    base = extract_features(image_64, init_weights(base_variant, seed=4), base_variant)
    zeroed = extract_features(image_64, init_weights(backbone_variant, seed=4, zero_attention=True), backbone_variant)
    for level in PYRAMID_LEVELS:
        assert np.array_equal(base.pyramid[level], zeroed.pyramid[level])


def test_all_variants_agree_under_zeroed_attention(image_64, small_variant):
    store = zero_attention_paths(init_weights(small_variant, seed=2), small_variant)
    outputs = [
        infer_frame(image_64, store, small_variant.with_insertion(insertion))
        for insertion in ("none", "backbone", "fpn", "both")
    ]
    for result in outputs[1:]:
        assert np.array_equal(result.labels, outputs[0].labels)
        assert [d.box for d in result.detections] == [d.box for d in outputs[0].detections]


def test_rejects_extent_not_divisible_by_32(small_variant, small_weights):
    with pytest.raises(ConfigurationError, match="divisible by 32"):
        extract_features(np.zeros((3, 48, 64)), small_weights, small_variant)


def test_zero_weights_give_zero_prototypes_and_uniform_classes(small_variant, small_weights):
    zeros = WeightStore({name: np.zeros_like(arr) for name, arr in small_weights.items()})
    p3 = np.random.default_rng(0).random((small_variant.fpn_channels, 8, 8))
    assert not protonet_forward(p3, zeros, small_variant).any()
    head = head_forward(p3, zeros, small_variant)
    assert not head.class_logits.any()


# Anchors, decoding and NMS

def test_anchor_total_at_256():
    variant = VariantSpec()
    total = sum(
        len(generate_anchors(int(level[1]), (256, 256), (scale,), variant.anchor_ratios))
        for level, scale in zip(PYRAMID_LEVELS, variant.anchor_scales)
    )
    assert total == 3 * (32 ** 2 + 16 ** 2 + 8 ** 2 + 4 ** 2 + 2 ** 2) == 4080


def test_square_anchor_geometry():
    anchors = generate_anchors(3, (256, 256), (16.0,), (1.0,))
    # grid position (i=1, j=1), stride 8
    assert np.allclose(anchors[33], [4.0, 4.0, 20.0, 20.0])
    assert np.allclose(anchors[0], [0.0, 0.0, 12.0, 12.0])


def test_anchors_are_clipped():
    anchors = generate_anchors(7, (256, 256), (256.0,), (1.0, 0.5, 2.0))
    assert anchors.min() >= 0.0
    assert anchors.max() <= 256.0


def test_generate_anchors_needs_scales():
    with pytest.raises(ConfigurationError):
        generate_anchors(3, (256, 256), ())


def test_decode_boxes(rng):
    anchors = np.array([[10.0, 20.0, 30.0, 60.0], [0.0, 0.0, 8.0, 8.0]])
    assert np.allclose(decode_boxes(anchors, np.zeros((2, 4))), anchors)
    shifted = decode_boxes(anchors[:1], np.array([[0.5, 0.0, 0.0, 0.0]]))
    assert np.allclose(shifted, [[20.0, 20.0, 40.0, 60.0]])
    reg = rng.standard_normal((1, 4)) * 0.3
    w, h = 20.0, 40.0
    cx, cy = 20.0 + reg[0, 0] * w, 40.0 + reg[0, 1] * h
    bw, bh = w * np.exp(reg[0, 2]), h * np.exp(reg[0, 3])
    expected = [cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2]
    assert np.allclose(decode_boxes(anchors[:1], reg)[0], expected, atol=1e-12)


def _batch(boxes, scores):
    boxes = np.asarray(boxes, dtype=np.float64)
    return DetectionBatch(boxes, np.asarray(scores, dtype=np.float64), np.zeros((len(boxes), 2)))


def test_fast_nms_identical_boxes():
    kept = fast_nms(_batch([[0, 0, 10, 10], [0, 0, 10, 10]], [0.8, 0.9]), 0.5, 200)
    assert kept.scores.tolist() == [0.9]


def test_fast_nms_disjoint_boxes_survive():
    kept = fast_nms(_batch([[0, 0, 5, 5], [10, 10, 15, 15], [20, 0, 25, 5]], [0.5, 0.7, 0.6]), 0.5, 200)
    assert kept.scores.tolist() == [0.7, 0.6, 0.5]


def test_fast_nms_suppresses_through_suppressed_box():
    boxes = [[0, 0, 10, 1], [2.5, 0, 12.5, 1], [5, 0, 15, 1]]
    ious = box_iou(np.asarray(boxes, dtype=np.float64), np.asarray(boxes, dtype=np.float64))
    assert ious[0, 1] == pytest.approx(0.6)
    assert ious[1, 2] == pytest.approx(0.6)
    assert ious[0, 2] < 0.5
    kept = fast_nms(_batch(boxes, [0.9, 0.8, 0.7]), 0.5, 200)
    assert kept.scores.tolist() == [0.9]


def test_fast_nms_top_k():
    boxes = [[i * 10, 0, i * 10 + 5, 5] for i in range(5)]
    kept = fast_nms(_batch(boxes, [0.1, 0.2, 0.3, 0.4, 0.5]), 0.5, 2)
    assert kept.scores.tolist() == [0.5, 0.4]


# Mask assembly

def test_mask_saturates_on_selected_prototype():
    prototypes = np.zeros((2, 16, 16))
    prototypes[0, :8, :] = 1.0
    prototypes[1, 8:, :] = 1.0
    coefficients = np.array([[10.0, 0.0]])
    box = np.array([[0.0, 0.0, 64.0, 64.0]])
    probability = 1.0 / (1.0 + np.exp(-mask_logits(prototypes, coefficients[0])))
    assert probability[:8].min() > 0.999
    masks = assemble_masks(prototypes, box, coefficients, (64, 64))
    expected = np.zeros((64, 64), dtype=bool)
    expected[:32] = True
    assert np.array_equal(masks[0], expected)


def test_zero_coefficients_give_empty_mask():
    prototypes = np.random.default_rng(1).random((3, 8, 8))
    masks = assemble_masks(prototypes, np.array([[0.0, 0.0, 32.0, 32.0]]), np.zeros((1, 3)), (32, 32))
    assert not masks.any()


def test_masks_are_cropped_to_box():
    prototypes = np.ones((1, 8, 8))
    masks = assemble_masks(prototypes, np.array([[4.0, 8.0, 20.0, 16.0]]), np.array([[10.0]]), (32, 32))
    rows, cols = np.nonzero(masks[0])
    assert rows.min() == 8 and rows.max() == 15
    assert cols.min() == 4 and cols.max() == 19


def test_mask_logits_linear(rng):
    prototypes = rng.standard_normal((4, 6, 6))
    c1, c2 = rng.standard_normal(4), rng.standard_normal(4)
    combined = mask_logits(prototypes, c1 + c2)
    assert np.max(np.abs(combined - mask_logits(prototypes, c1) - mask_logits(prototypes, c2))) < 1e-9


# End-to-end inference

def test_zero_confidence_gives_empty_frame(image_64, small_variant, small_weights):
    result = infer_frame(image_64, _silenced(small_weights, small_variant), small_variant)
    assert not result.labels.any()
    assert result.detections == []


def test_inference_is_deterministic(image_64, small_variant, small_weights):
    first = infer_frame(image_64, small_weights, small_variant)
    second = infer_frame(image_64, small_weights, small_variant)
    assert np.array_equal(first.labels, second.labels)
    assert first.detections == second.detections


def test_inference_is_identical_across_threads(image_64, small_variant, small_weights):
    pipeline = SegmentationPipeline(small_weights, small_variant)
    reference = pipeline.infer(image_64).labels
    with ThreadPoolExecutor(max_workers=4) as pool:
        results = list(pool.map(pipeline.infer, [image_64] * 4))
    assert all(np.array_equal(result.labels, reference) for result in results)


def test_labels_are_contiguous_and_ordered_by_confidence(image_64, small_variant, small_weights):
    result = infer_frame(image_64, small_weights, small_variant)
    ids = np.unique(result.labels)
    assert ids.tolist() == list(range(len(result.detections) + 1))
    confidences = [d.class_confidence for d in result.detections]
    assert confidences == sorted(confidences, reverse=True)
    assert all(c >= small_variant.display_confidence for c in confidences)


def test_base_ignores_attention_tensors(image_64, small_variant, small_weights):
    base = small_variant.with_insertion("none")
    with_attention = infer_frame(image_64, small_weights, base)
    stripped = infer_frame(image_64, small_weights.without_prefix("ccam."), base)
    assert np.array_equal(with_attention.labels, stripped.labels)


def test_stage_clock_records_stages(image_64, small_variant, small_weights):
    clock = StageClock()
    infer_frame(image_64, small_weights, small_variant, clock)
    for stage in ("backbone", "attention", "fpn", "heads", "nms", "assembly"):
        assert clock.seconds[stage] > 0.0


def test_image_to_tensor_range():
    rgb = np.full((32, 32, 3), 255, dtype=np.uint8)
    tensor = image_to_tensor(rgb)
    assert tensor.shape == (3, 32, 32)
    assert tensor.max() == 1.0


# Weights

def test_pipeline_names_missing_attention_tensor(small_variant):
    store = init_weights(small_variant.with_insertion("none"), seed=0)
    with pytest.raises(WeightsLoadError) as excinfo:
        SegmentationPipeline(store, small_variant)
    assert excinfo.value.tensor_name.startswith("ccam.")


def test_weights_file_stores_float32(tmp_path, small_variant, small_weights):
    path = tmp_path / "weights.bin"
    write_weights(small_weights, path)
    loaded = read_weights(path)
    assert loaded.names() == small_weights.names()
    for name, arr in small_weights.items():
        assert np.array_equal(loaded.require(name), arr.astype(np.float32).astype(np.float64))
    check_compatible(loaded, small_variant)

    again = tmp_path / "again.bin"
    write_weights(loaded, again)
    assert again.read_bytes() == path.read_bytes()


def test_weights_file_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTSEG" + b"\x00" * 16)
    with pytest.raises(WeightsLoadError, match="magic"):
        read_weights(path)


def test_weights_file_rejects_truncation(tmp_path, small_weights):
    path = tmp_path / "weights.bin"
    write_weights(small_weights, path)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(WeightsLoadError, match="Truncated"):
        read_weights(path)
