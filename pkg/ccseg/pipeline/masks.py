"""
Prototype mask assembly.

A detection's mask is sigmoid(sum_j c_j P_j), cropped to the detection box at
prototype resolution, thresholded strictly above 0.5 and upsampled
(nearest) to the image, where it is cropped to the exact box once more.
"""

from typing import Tuple

import numpy as np

from ccseg.core.errors import ContractViolation
from ccseg.nn.tensor_kernels import activation
from ccseg.utils.validators import as_tensor, check_extent

MASK_THRESHOLD = 0.5


def mask_logits(prototypes: np.ndarray, coefficients: np.ndarray) -> np.ndarray:
    """Linear combination of (k, h, w) prototypes by a length-k or (N, k) coefficient array."""
    prototypes = as_tensor(prototypes, "prototypes", rank=3)
    coefficients = np.asarray(coefficients, dtype=np.float64)
    check_extent("mask coefficients", "k", coefficients.shape[-1], prototypes.shape[0])
    return np.tensordot(coefficients, prototypes, axes=([-1], [0]))


def _box_window(boxes: np.ndarray, scale_x: float, scale_y: float, h: int, w: int) -> np.ndarray:
    """(N, h, w) boolean windows of pixels whose centers lie in the scaled boxes."""
    xs = (np.arange(w) + 0.5) / scale_x
    ys = (np.arange(h) + 0.5) / scale_y
    inside_x = (xs[None, :] >= boxes[:, 0, None]) & (xs[None, :] < boxes[:, 2, None])
    inside_y = (ys[None, :] >= boxes[:, 1, None]) & (ys[None, :] < boxes[:, 3, None])
    return inside_y[:, :, None] & inside_x[:, None, :]


def _nearest_index(out_size: int, in_size: int) -> np.ndarray:
    return np.minimum(((np.arange(out_size) + 0.5) * in_size / out_size).astype(np.int64), in_size - 1)


def assemble_masks(
    prototypes: np.ndarray,
    boxes: np.ndarray,
    coefficients: np.ndarray,
    image_size: Tuple[int, int],
) -> np.ndarray:
    """
    Binary instance masks for a set of detections.

    Args:
        prototypes: (k, h, w) prototype maps
        boxes: (N, 4) detection boxes in image pixels
        coefficients: (N, k) mask coefficients
        image_size: (height, width) of the image

    Returns:
        (N, height, width) boolean masks
    """
    prototypes = as_tensor(prototypes, "prototypes", rank=3)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    height, width = image_size
    if len(boxes) == 0:
        return np.zeros((0, height, width), dtype=bool)
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.ndim != 2 or len(coefficients) != len(boxes):
        raise ContractViolation(f"{len(boxes)} boxes but coefficients of shape {coefficients.shape}")
    _, h, w = prototypes.shape

    probabilities = activation(mask_logits(prototypes, coefficients), "sigmoid")
    coarse = probabilities * _box_window(boxes, w / width, h / height, h, w)
    binary = coarse > MASK_THRESHOLD

    rows = _nearest_index(height, h)
    cols = _nearest_index(width, w)
    full = binary[:, rows][:, :, cols]
    return full & _box_window(boxes, 1.0, 1.0, height, width)
