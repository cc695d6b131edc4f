"""
Input validation utilities for the ccseg toolkit.
Every public operation checks its preconditions through these helpers so that
contract failures carry a message naming the offending argument or dimension.
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from ccseg.core.errors import ContractViolation
from ccseg.utils.logger import get_logger

logger = get_logger(__name__)


def as_tensor(x, name: str = "tensor", rank: Optional[int] = None) -> np.ndarray:
    """
    Coerce an array-like to a C-ordered float64 tensor.

    Args:
        x: Array-like input
        name: Argument name used in error messages
        rank: Required number of dimensions, if any

    Returns:
        float64 ndarray
    """
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if rank is not None and arr.ndim != rank:
        raise ContractViolation(f"{name} must have rank {rank}, got shape {arr.shape}")
    return arr


def check_extent(name: str, dimension: str, actual: int, expected: int) -> None:
    """Raise if a named dimension differs from its expected extent."""
    if actual != expected:
        raise ContractViolation(f"{name}: dimension '{dimension}' is {actual}, expected {expected}")


def check_same_shape(a: np.ndarray, b: np.ndarray, names: Tuple[str, str] = ("a", "b")) -> None:
    """Raise if two arrays differ in shape."""
    if a.shape != b.shape:
        raise ContractViolation(f"{names[0]} shape {a.shape} does not match {names[1]} shape {b.shape}")


def check_positive(name: str, value: int) -> None:
    if value < 1:
        raise ContractViolation(f"{name} must be >= 1, got {value}")


def check_fraction(name: str, value: float, open_interval: bool = False) -> None:
    """Raise unless value lies in [0, 1] (or (0, 1) when open_interval)."""
    if open_interval:
        ok = 0.0 < value < 1.0
    else:
        ok = 0.0 <= value <= 1.0
    if not ok:
        bounds = "(0, 1)" if open_interval else "[0, 1]"
        raise ContractViolation(f"{name} must lie in {bounds}, got {value}")


def as_binary_mask(mask, name: str = "mask") -> np.ndarray:
    """Coerce a 2-D array-like to a boolean mask."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def as_label_map(labels, name: str = "label map") -> np.ndarray:
    """
    Coerce a 2-D array-like to an instance label map.

    Labels must be nonnegative integers; 0 is background.
    """
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.dtype.kind == "f":
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ContractViolation(f"{name} contains non-integer labels")
        arr = arr.astype(np.int64)
    elif arr.dtype.kind not in "iub":
        raise ContractViolation(f"{name} has unsupported dtype {arr.dtype}")
    if arr.size and arr.min() < 0:
        raise ContractViolation(f"{name} contains negative labels")
    return arr.astype(np.int64, copy=False)


def instance_ids(labels: np.ndarray) -> np.ndarray:
    """Sorted nonzero labels present in a label map."""
    ids = np.unique(labels)
    return ids[ids != 0]


def is_contiguous(labels: np.ndarray) -> bool:
    """True when the label set is exactly {0..N} (0 may be absent only if N = 0)."""
    ids = instance_ids(labels)
    return bool(np.array_equal(ids, np.arange(1, len(ids) + 1)))


def check_unique(names: Sequence[str], what: str = "name") -> None:
    """Raise on the first duplicated entry."""
    seen = set()
    for name in names:
        if name in seen:
            raise ContractViolation(f"Duplicate {what}: {name}")
        seen.add(name)
