"""
Desk-scale YOLACT-style network: residual backbone, FPN, protonet and head.

Backbone: two stride-2 stem convolutions, then three stages, each a stride-2
convolution followed by residual blocks; stage outputs C3/C4/C5 sit at
strides 8/16/32. FPN builds P3..P5 from lateral 1x1 convolutions, bilinear
top-down upsampling and 3x3 smoothing; P6 and P7 come from stride-2
convolutions. Criss-cross attention refines backbone and/or pyramid outputs
depending on the variant.
"""

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ccseg.core.errors import ConfigurationError
from ccseg.nn.ccam_attention import rcca_forward
from ccseg.nn.tensor_kernels import activation, bilinear_resize, conv2d
from ccseg.pipeline.clock import NullClock, StageClock
from ccseg.pipeline.variant import BACKBONE_LEVELS, PYRAMID_LEVELS, VariantSpec
from ccseg.pipeline.weights_file import WeightStore
from ccseg.utils.validators import as_tensor, check_extent


@dataclass(frozen=True)
class FeatureMaps:
    backbone: Dict[str, np.ndarray]
    pyramid: Dict[str, np.ndarray]


@dataclass(frozen=True)
class HeadOutput:
    """Per-anchor predictions of one pyramid level, anchors in generate_anchors order."""

    class_logits: np.ndarray
    box_regressions: np.ndarray
    coefficients: np.ndarray


def _conv(store: WeightStore, name: str, x: np.ndarray, stride: int = 1) -> np.ndarray:
    kernel = store.require(f"{name}.weight")
    return conv2d(x, kernel, store.require(f"{name}.bias"), stride=stride, padding=kernel.shape[-1] // 2)


def _relu(x: np.ndarray) -> np.ndarray:
    return activation(x, "relu")


def _attend(maps: Dict[str, np.ndarray], site: str, store: WeightStore, variant: VariantSpec) -> Dict[str, np.ndarray]:
    refined = {}
    for level, x in maps.items():
        cfg = variant.attention_config(x.shape[0])
        weights = store.attention(f"ccam.{site}.{level.lower()}.", variant, x.shape[0])
        refined[level] = rcca_forward(x, weights, cfg)
    return refined


def extract_features(
    image: np.ndarray,
    store: WeightStore,
    variant: VariantSpec,
    clock: Optional[StageClock] = None,
) -> FeatureMaps:
    """
    Backbone maps C3..C5 and pyramid maps P3..P7 of a (3, H, W) image.

    Args:
        image: Float image, H and W divisible by 32
        store: Pipeline weights
        variant: Architecture and attention placement
        clock: Optional stage timer

    Returns:
        FeatureMaps
    """
    clock = clock or NullClock()
    image = as_tensor(image, "image", rank=3)
    check_extent("image", "channels", image.shape[0], 3)
    _, height, width = image.shape
    if height % 32 or width % 32:
        raise ConfigurationError(f"Image extents must be divisible by 32, got {height}x{width}")

    with clock.stage("backbone"):
        x = _relu(_conv(store, "backbone.stem1", image, stride=2))
        x = _relu(_conv(store, "backbone.stem2", x, stride=2))
        backbone = {}
        for stage, level in enumerate(BACKBONE_LEVELS, start=1):
            x = _relu(_conv(store, f"backbone.stage{stage}.down", x, stride=2))
            for block in range(1, variant.blocks_per_stage + 1):
                y = _relu(_conv(store, f"backbone.stage{stage}.block{block}.conv1", x))
                y = _conv(store, f"backbone.stage{stage}.block{block}.conv2", y)
                x = _relu(x + y)
            backbone[level] = x

    if variant.backbone_attention:
        with clock.stage("attention"):
            backbone = _attend(backbone, "backbone", store, variant)

    with clock.stage("fpn"):
        lateral = {
            level: _conv(store, f"fpn.lateral{n}", backbone[level])
            for n, level in zip((3, 4, 5), BACKBONE_LEVELS)
        }
        top = lateral["C5"]
        merged = {"P5": top}
        for source, target in (("C4", "P4"), ("C3", "P3")):
            lat = lateral[source]
            top = lat + bilinear_resize(top, lat.shape[1], lat.shape[2])
            merged[target] = top
        pyramid = {level: _conv(store, f"fpn.smooth{level[1]}", merged[level]) for level in ("P3", "P4", "P5")}
        pyramid["P6"] = _conv(store, "fpn.down6", pyramid["P5"], stride=2)
        pyramid["P7"] = _conv(store, "fpn.down7", pyramid["P6"], stride=2)
        pyramid = {level: pyramid[level] for level in PYRAMID_LEVELS}

    if variant.fpn_attention:
        with clock.stage("attention"):
            pyramid = _attend(pyramid, "fpn", store, variant)

    return FeatureMaps(backbone=backbone, pyramid=pyramid)


def protonet_forward(p3: np.ndarray, store: WeightStore, variant: VariantSpec) -> np.ndarray:
    """k relu-activated prototype maps at quarter input resolution."""
    x = _relu(_conv(store, "proto.conv1", p3))
    x = _relu(_conv(store, "proto.conv2", x))
    x = bilinear_resize(x, 2 * x.shape[1], 2 * x.shape[2])
    x = _relu(_conv(store, "proto.conv3", x))
    prototypes = _relu(_conv(store, "proto.out", x))
    check_extent("prototypes", "k", prototypes.shape[0], variant.prototype_count)
    return prototypes


def _flatten_anchor_major(x: np.ndarray, anchors: int) -> np.ndarray:
    """(anchors * d, h, w) -> (h * w * anchors, d)."""
    channels, h, w = x.shape
    per_anchor = channels // anchors
    return x.reshape(anchors, per_anchor, h, w).transpose(2, 3, 0, 1).reshape(h * w * anchors, per_anchor)


def head_forward(p: np.ndarray, store: WeightStore, variant: VariantSpec) -> HeadOutput:
    """Shared prediction head applied to one pyramid level."""
    a = variant.anchors_per_position
    x = _relu(_conv(store, "head.conv", p))
    logits = _flatten_anchor_major(_conv(store, "head.cls", x), a)
    boxes = _flatten_anchor_major(_conv(store, "head.box", x), a)
    coefficients = activation(_flatten_anchor_major(_conv(store, "head.coef", x), a), "tanh")
    return HeadOutput(class_logits=logits, box_regressions=boxes, coefficients=coefficients)
