"""
End-to-end instance segmentation of single frames.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from ccseg.core.errors import ContractViolation
from ccseg.nn.tensor_kernels import softmax_axis
from ccseg.pipeline.anchors import DetectionBatch, clip_boxes, decode_boxes, fast_nms, generate_anchors
from ccseg.pipeline.clock import NullClock, StageClock
from ccseg.pipeline.masks import assemble_masks
from ccseg.pipeline.network import extract_features, head_forward, protonet_forward
from ccseg.pipeline.variant import PYRAMID_LEVELS, VariantSpec
from ccseg.pipeline.weights_file import WeightStore, check_compatible, read_weights
from ccseg.schemas import Detection
from ccseg.utils.logger import pipeline_logger as logger


@dataclass(frozen=True)
class FrameResult:
    labels: np.ndarray
    detections: List[Detection]


def image_to_tensor(rgb: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 image -> (3, H, W) float64 in [0, 1]."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ContractViolation(f"Expected an (H, W, 3) RGB image, got shape {rgb.shape}")
    return np.ascontiguousarray(rgb.transpose(2, 0, 1), dtype=np.float64) / 255.0


def _level_anchors(variant: VariantSpec, image_size: Tuple[int, int]) -> Dict[str, np.ndarray]:
    return {
        level: generate_anchors(int(level[1]), image_size, (scale,), variant.anchor_ratios)
        for level, scale in zip(PYRAMID_LEVELS, variant.anchor_scales)
    }


def _paint(masks: np.ndarray, shape: Tuple[int, int]) -> Tuple[np.ndarray, List[int]]:
    """Label map from confidence-ordered masks; earlier masks win contested pixels."""
    labels = np.zeros(shape, dtype=np.int64)
    painted: List[int] = []
    for index, mask in enumerate(masks):
        free = mask & (labels == 0)
        if not free.any():
            continue
        painted.append(index)
        labels[free] = len(painted)
    return labels, painted


def infer_frame(
    image: np.ndarray,
    store: WeightStore,
    variant: VariantSpec,
    clock: Optional[StageClock] = None,
) -> FrameResult:
    """
    Segment one (3, H, W) image.

    Detections below variant.display_confidence are dropped. Instance ids
    follow descending confidence starting at 1; a detection whose mask is
    empty, or fully claimed by more confident instances, gets no id.
    """
    clock = clock or NullClock()
    features = extract_features(image, store, variant, clock)
    _, height, width = image.shape

    with clock.stage("heads"):
        prototypes = protonet_forward(features.pyramid["P3"], store, variant)
        anchors = _level_anchors(variant, (height, width))
        outputs = [head_forward(features.pyramid[level], store, variant) for level in PYRAMID_LEVELS]
        all_anchors = np.concatenate([anchors[level] for level in PYRAMID_LEVELS])
        logits = np.concatenate([out.class_logits for out in outputs])
        regressions = np.concatenate([out.box_regressions for out in outputs])
        coefficients = np.concatenate([out.coefficients for out in outputs])
        scores = softmax_axis(logits, axis=1)[:, 1:].max(axis=1)

    with clock.stage("nms"):
        candidates = np.nonzero(scores > variant.pre_nms_confidence)[0]
        boxes = clip_boxes(decode_boxes(all_anchors[candidates], regressions[candidates]), (height, width))
        proper = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
        batch = DetectionBatch(boxes[proper], scores[candidates][proper], coefficients[candidates][proper])
        kept = fast_nms(batch, variant.nms_iou, variant.top_k)
        shown = kept.take(np.nonzero(kept.scores >= variant.display_confidence)[0])

    with clock.stage("assembly"):
        masks = assemble_masks(prototypes, shown.boxes, shown.coefficients, (height, width))
        labels, painted = _paint(masks, (height, width))

    detections = [
        Detection(
            class_confidence=float(shown.scores[i]),
            box=tuple(float(v) for v in shown.boxes[i]),
            mask_coefficients=[float(c) for c in shown.coefficients[i]],
        )
        for i in painted
    ]
    return FrameResult(labels=labels, detections=detections)


class SegmentationPipeline:
    """Weights bound to a variant; immutable once constructed."""

    def __init__(self, store: WeightStore, variant: VariantSpec):
        check_compatible(store, variant)
        self._store = store
        self._variant = variant
        logger.info(f"Pipeline ready - {variant.display_name} | {len(store)} tensors")

    @classmethod
    def from_file(cls, path: Path, variant: VariantSpec) -> "SegmentationPipeline":
        return cls(read_weights(path), variant)

    @property
    def variant(self) -> VariantSpec:
        return self._variant

    @property
    def store(self) -> WeightStore:
        return self._store

    def infer(self, image: np.ndarray, clock: Optional[StageClock] = None) -> FrameResult:
        return infer_frame(image, self._store, self._variant, clock)

    def infer_rgb(self, rgb: np.ndarray, clock: Optional[StageClock] = None) -> FrameResult:
        return self.infer(image_to_tensor(rgb), clock)
