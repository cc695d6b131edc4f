"""
Anchors, box decoding and Fast NMS.

Boxes are (x0, y0, x1, y1) in pixel units. Anchors of a level are ordered
row-major over the level grid, then by scale, then by aspect ratio, which is
the same order the prediction head flattens its outputs in.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from ccseg.core.errors import ConfigurationError, ContractViolation
from ccseg.nn.tensor_kernels import conv_output_extent

# Regressed log-size offsets are clamped so exp() stays finite
MAX_LOG_SCALE = float(np.log(1000.0 / 16.0))


def pyramid_extent(size: int, level: int) -> int:
    """Grid extent of pyramid level P<level> for an input extent divisible by 32."""
    if level <= 5:
        return size >> level
    extent = size >> 5
    for _ in range(level - 5):
        extent = conv_output_extent(extent, 3, 2, 1)
    return extent


def generate_anchors(
    level: int,
    image_size: Tuple[int, int],
    scales: Sequence[float],
    ratios: Sequence[float] = (1.0, 0.5, 2.0),
) -> np.ndarray:
    """
    Anchor boxes of one pyramid level.

    Args:
        level: Pyramid level l; stride is 2**l
        image_size: (height, width) of the input image
        scales: Anchor side lengths for this level
        ratios: Width/height aspect ratios

    Returns:
        (grid_h * grid_w * len(scales) * len(ratios), 4) boxes clipped to the image
    """
    if len(scales) == 0:
        raise ConfigurationError("generate_anchors needs at least one scale")
    if len(ratios) == 0:
        raise ConfigurationError("generate_anchors needs at least one aspect ratio")
    height, width = image_size
    stride = 2 ** level
    grid_h, grid_w = pyramid_extent(height, level), pyramid_extent(width, level)

    cy, cx = np.meshgrid(
        (np.arange(grid_h) + 0.5) * stride,
        (np.arange(grid_w) + 0.5) * stride,
        indexing="ij",
    )
    shapes = np.array(
        [(s * np.sqrt(r), s / np.sqrt(r)) for s in scales for r in ratios],
        dtype=np.float64,
    )
    centers = np.stack([cx.ravel(), cy.ravel()], axis=1)
    half = shapes / 2.0

    x0 = centers[:, None, 0] - half[None, :, 0]
    y0 = centers[:, None, 1] - half[None, :, 1]
    x1 = centers[:, None, 0] + half[None, :, 0]
    y1 = centers[:, None, 1] + half[None, :, 1]
    anchors = np.stack([x0, y0, x1, y1], axis=2).reshape(-1, 4)
    return clip_boxes(anchors, image_size)


def clip_boxes(boxes: np.ndarray, image_size: Tuple[int, int]) -> np.ndarray:
    height, width = image_size
    clipped = boxes.copy()
    clipped[:, [0, 2]] = np.clip(clipped[:, [0, 2]], 0.0, width)
    clipped[:, [1, 3]] = np.clip(clipped[:, [1, 3]], 0.0, height)
    return clipped


def decode_boxes(anchors: np.ndarray, regressions: np.ndarray) -> np.ndarray:
    """
    Center/size decoding: cx' = cx + dx*w, cy' = cy + dy*h, w' = w*exp(dw), h' = h*exp(dh).
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    regressions = np.asarray(regressions, dtype=np.float64)
    if anchors.shape != regressions.shape or anchors.ndim != 2 or anchors.shape[1] != 4:
        raise ContractViolation(
            f"decode_boxes expects matching (N, 4) arrays, got {anchors.shape} and {regressions.shape}"
        )
    widths = anchors[:, 2] - anchors[:, 0]
    heights = anchors[:, 3] - anchors[:, 1]
    cx = anchors[:, 0] + 0.5 * widths + regressions[:, 0] * widths
    cy = anchors[:, 1] + 0.5 * heights + regressions[:, 1] * heights
    w = widths * np.exp(np.minimum(regressions[:, 2], MAX_LOG_SCALE))
    h = heights * np.exp(np.minimum(regressions[:, 3], MAX_LOG_SCALE))
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (N, 4) and (M, 4) boxes."""
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


@dataclass(frozen=True)
class DetectionBatch:
    """Struct-of-arrays view of candidate detections."""

    boxes: np.ndarray
    scores: np.ndarray
    coefficients: np.ndarray

    def __len__(self) -> int:
        return int(self.scores.shape[0])

    def take(self, index: np.ndarray) -> "DetectionBatch":
        return DetectionBatch(self.boxes[index], self.scores[index], self.coefficients[index])


def fast_nms(batch: DetectionBatch, iou_threshold: float, top_k: int) -> DetectionBatch:
    """
    One-shot matrix NMS.

    Detections are sorted by confidence and truncated to top_k; detection i
    survives iff its IoU with every higher-scoring detection, suppressed or
    not, is at most iou_threshold. This can suppress more than sequential NMS.
    """
    if len(batch) == 0:
        return batch
    order = np.argsort(-batch.scores, kind="stable")[:top_k]
    ranked = batch.take(order)
    ious = np.triu(box_iou(ranked.boxes, ranked.boxes), k=1)
    keep = ious.max(axis=0) <= iou_threshold
    return ranked.take(np.nonzero(keep)[0])
