"""
PNG I/O for frames and instance label maps.

Label maps are 8-bit single-channel PNGs: 0 is background, 1..N are
instrument instances.
"""

from pathlib import Path
from typing import Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from ccseg.core.errors import DataIOError, LabelMapError, UnwritableOutputError
from ccseg.utils.logger import data_logger as logger
from ccseg.utils.validators import as_label_map, instance_ids, is_contiguous

MAX_INSTANCES = 255


def relabel_contiguous(labels: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Order-preserving remap of the nonzero labels onto 1..N; returns (labels, changed)."""
    labels = as_label_map(labels)
    if is_contiguous(labels):
        return labels, False
    ids = instance_ids(labels)
    lookup = np.zeros(int(labels.max()) + 1, dtype=np.int64)
    lookup[ids] = np.arange(1, len(ids) + 1)
    return lookup[labels], True


def _open(path: Path) -> Image.Image:
    path = Path(path)
    if not path.is_file():
        raise DataIOError(f"File not found: {path}")
    try:
        image = Image.open(path)
        image.load()
    except (UnidentifiedImageError, OSError) as e:
        raise DataIOError(f"Unreadable image {path}: {e}") from e
    return image


def _ensure_parent(path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise UnwritableOutputError(f"Cannot create directory {path.parent}: {e}") from e


def read_labelmap(path: Path) -> np.ndarray:
    """
    Read an instance label map.

    Non-contiguous labels such as {0, 1, 3} are remapped to {0, 1, 2}, keeping
    their order, and a warning is logged.
    """
    path = Path(path)
    try:
        image = _open(path)
    except DataIOError as e:
        raise LabelMapError(str(e)) from e
    if image.mode != "L":
        raise LabelMapError(f"Label map {path} must be single-channel 8-bit, got mode {image.mode}")
    labels, changed = relabel_contiguous(np.asarray(image, dtype=np.int64))
    if changed:
        logger.warning(f"Remapped non-contiguous labels in {path} to 1..{labels.max()}")
    return labels


def write_labelmap(labels, path: Path) -> None:
    labels = as_label_map(labels)
    if labels.size and labels.max() > MAX_INSTANCES:
        raise LabelMapError(f"Label map holds id {labels.max()}; at most {MAX_INSTANCES} instances fit in 8 bits")
    path = Path(path)
    _ensure_parent(path)
    try:
        Image.fromarray(labels.astype(np.uint8)).save(path, format="PNG")
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write label map {path}: {e}") from e


def read_image(path: Path) -> np.ndarray:
    """(H, W, 3) uint8 RGB frame."""
    return np.asarray(_open(path).convert("RGB"), dtype=np.uint8)


def write_image(rgb: np.ndarray, path: Path) -> None:
    path = Path(path)
    _ensure_parent(path)
    try:
        Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path, format="PNG")
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write image {path}: {e}") from e
