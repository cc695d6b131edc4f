"""
Per-frame multi-instance metrics: DSC, normalized surface Dice (NSD),
one-to-one instance matching and the frame-level MI_DSC / MI_NSD pair.
"""

import json
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from pydantic import ValidationError
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from ccseg.core.errors import ContractViolation, DataIOError, MalformedRecordError, UnwritableOutputError
from ccseg.schemas import FrameEval, MatchedPair
from ccseg.utils.logger import log_frame_eval, metrics_logger as logger
from ccseg.utils.validators import as_binary_mask, as_label_map, check_same_shape, instance_ids

DEFAULT_TAU = 13.0

# When both sides hold more instances than this, the assignment solver
# replaces the tie-breaking search.
EXHAUSTIVE_LIMIT = 6
_TIE_TOLERANCE = 1e-12

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def dsc(y, y_hat) -> float:
    """Dice similarity 2|Y ∩ Ŷ| / (|Y| + |Ŷ|); at least one mask must be nonempty."""
    y = as_binary_mask(y, "Y")
    y_hat = as_binary_mask(y_hat, "Yhat")
    check_same_shape(y, y_hat, ("Y", "Yhat"))
    total = int(y.sum()) + int(y_hat.sum())
    if total == 0:
        raise ContractViolation("dsc is undefined for two empty masks")
    return 2.0 * int(np.logical_and(y, y_hat).sum()) / total


def boundary(mask) -> np.ndarray:
    """
    Boundary pixels of a nonempty mask.

    A mask pixel is on the boundary when one of its 4-neighbours lies outside
    the mask; everything beyond the image edge counts as outside.
    """
    mask = as_binary_mask(mask)
    if not mask.any():
        raise ContractViolation("boundary of an empty mask")
    interior = ndimage.binary_erosion(mask, structure=_FOUR_CONNECTED, border_value=0)
    return mask & ~interior


def distance_transform(points, width: int, height: int) -> np.ndarray:
    """
    Exact Euclidean distance from every pixel to the nearest point of a set.

    Args:
        points: (height, width) boolean mask, or an (n, 2) array of (row, col) pixels
        width: Map width
        height: Map height

    Returns:
        (height, width) float64 distance map, 0 at member pixels
    """
    arr = np.asarray(points)
    if arr.ndim == 2 and arr.shape == (height, width) and arr.dtype == bool:
        members = arr
    else:
        coords = arr.reshape(-1, 2).astype(np.int64)
        if coords.size and (
            coords[:, 0].min() < 0 or coords[:, 0].max() >= height
            or coords[:, 1].min() < 0 or coords[:, 1].max() >= width
        ):
            raise ContractViolation(f"point set extends beyond the {height}x{width} map")
        members = np.zeros((height, width), dtype=bool)
        members[coords[:, 0], coords[:, 1]] = True
    if not members.any():
        raise ContractViolation("distance_transform of an empty point set")
    return ndimage.distance_transform_edt(~members).astype(np.float64)


def _surface_overlap(border_y: np.ndarray, border_y_hat: np.ndarray, tau: float) -> float:
    height, width = border_y.shape
    to_y_hat = distance_transform(border_y_hat, width, height)
    to_y = distance_transform(border_y, width, height)
    close = int((to_y_hat[border_y] <= tau).sum()) + int((to_y[border_y_hat] <= tau).sum())
    return close / (int(border_y.sum()) + int(border_y_hat.sum()))


def nsd(y, y_hat, tau: float = DEFAULT_TAU) -> float:
    """
    Normalized surface Dice at tolerance tau (pixels).

    Fraction of both boundaries lying within tau of the other boundary.
    """
    y = as_binary_mask(y, "Y")
    y_hat = as_binary_mask(y_hat, "Yhat")
    check_same_shape(y, y_hat, ("Y", "Yhat"))
    if tau < 0:
        raise ContractViolation(f"tau must be nonnegative, got {tau}")
    if not y.any() or not y_hat.any():
        raise ContractViolation("nsd needs two nonempty masks")
    return _surface_overlap(boundary(y), boundary(y_hat), tau)


def dsc_matrix(gt: np.ndarray, pred: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Pairwise instance DSC of two label maps.

    Returns:
        (gt ids, pred ids, (len(gt ids), len(pred ids)) DSC matrix)
    """
    gt_ids = instance_ids(gt)
    pred_ids = instance_ids(pred)
    n, m = len(gt_ids), len(pred_ids)
    if n == 0 or m == 0:
        return gt_ids, pred_ids, np.zeros((n, m))

    gt_index = np.searchsorted(gt_ids, gt.ravel()) + 1
    gt_index[gt.ravel() == 0] = 0
    pred_index = np.searchsorted(pred_ids, pred.ravel()) + 1
    pred_index[pred.ravel() == 0] = 0

    joint = np.bincount(gt_index * (m + 1) + pred_index, minlength=(n + 1) * (m + 1)).reshape(n + 1, m + 1)
    intersection = joint[1:, 1:].astype(np.float64)
    gt_area = joint[1:, :].sum(axis=1).astype(np.float64)
    pred_area = joint[:, 1:].sum(axis=0).astype(np.float64)
    return gt_ids, pred_ids, 2.0 * intersection / (gt_area[:, None] + pred_area[None, :])


def _optimum(scores: np.ndarray) -> float:
    """Largest total of a one-to-one assignment on a possibly empty score matrix."""
    if scores.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(scores, maximize=True)
    return float(scores[rows, cols].sum())


def _exhaustive_assignment(scores: np.ndarray) -> List[Tuple[int, int]]:
    """
    Best partial one-to-one assignment over eligible (score > 0) pairs, ties
    going to the lexicographically smallest pair list.

    Rows are settled in order: each takes the smallest column that still lets
    the remaining rows reach the optimum, otherwise it stays unmatched. This
    returns what a full enumeration with the same tie-break returns, in
    O(N * M) solver calls, so a 6 x 50 frame stays cheap.
    """
    n, m = scores.shape
    free = list(range(m))
    pairs: List[Tuple[int, int]] = []
    for row in range(n):
        below = scores[row + 1:]
        target = _optimum(scores[row:][:, free])
        for col in free:
            if scores[row, col] <= 0:
                continue
            rest = [c for c in free if c != col]
            if scores[row, col] + _optimum(below[:, rest]) >= target - _TIE_TOLERANCE:
                pairs.append((row, col))
                free.remove(col)
                break
    return pairs


def _solver_assignment(scores: np.ndarray) -> List[Tuple[int, int]]:
    rows, cols = linear_sum_assignment(scores, maximize=True)
    return sorted((int(i), int(j)) for i, j in zip(rows, cols) if scores[i, j] > 0)


def match_instances(gt, pred) -> List[Tuple[int, int]]:
    """
    One-to-one matching of ground-truth and predicted instances.

    Maximizes the summed DSC over pairs with DSC > 0. When either side holds
    at most EXHAUSTIVE_LIMIT instances, ties are broken by the
    lexicographically smallest (gt id, pred id) list; larger frames go to the
    assignment solver.

    Returns:
        Sorted list of (gt id, pred id) pairs
    """
    gt = as_label_map(gt, "ground truth")
    pred = as_label_map(pred, "prediction")
    check_same_shape(gt, pred, ("ground truth", "prediction"))
    gt_ids, pred_ids, scores = dsc_matrix(gt, pred)
    if scores.size == 0:
        return []
    if min(scores.shape) <= EXHAUSTIVE_LIMIT:
        pairs = _exhaustive_assignment(scores)
    else:
        pairs = _solver_assignment(scores)
    return [(int(gt_ids[i]), int(pred_ids[j])) for i, j in pairs]


def frame_scores(gt, pred, tau: float = DEFAULT_TAU, frame_id: str = "") -> FrameEval:
    """
    MI_DSC and MI_NSD of one frame.

    Matched pairs contribute their DSC/NSD; every unmatched instance on either
    side contributes 0 to a mean over matched + unmatched_gt + unmatched_pred.
    A frame with no instances on either side scores (1, 1); a frame where only
    one side is empty scores (0, 0).
    """
    gt = as_label_map(gt, "ground truth")
    pred = as_label_map(pred, "prediction")
    check_same_shape(gt, pred, ("ground truth", "prediction"))

    n_gt = len(instance_ids(gt))
    n_pred = len(instance_ids(pred))
    if n_gt == 0 and n_pred == 0:
        evaluation = FrameEval(frame_id=frame_id, mi_dsc=1.0, mi_nsd=1.0)
    elif n_gt == 0 or n_pred == 0:
        evaluation = FrameEval(frame_id=frame_id, mi_dsc=0.0, mi_nsd=0.0, n_gt=n_gt, n_pred=n_pred)
    else:
        matches = []
        for gt_id, pred_id in match_instances(gt, pred):
            y, y_hat = gt == gt_id, pred == pred_id
            matches.append(MatchedPair(gt_id=gt_id, pred_id=pred_id, dsc=dsc(y, y_hat), nsd=nsd(y, y_hat, tau)))
        denominator = n_gt + n_pred - len(matches)
        evaluation = FrameEval(
            frame_id=frame_id,
            mi_dsc=sum(pair.dsc for pair in matches) / denominator,
            mi_nsd=sum(pair.nsd for pair in matches) / denominator,
            matches=matches,
            n_gt=n_gt,
            n_pred=n_pred,
            n_matched=len(matches),
        )

    log_frame_eval(
        logger, frame_id, evaluation.mi_dsc, evaluation.mi_nsd,
        evaluation.n_gt, evaluation.n_pred, evaluation.n_matched,
    )
    return evaluation


def write_frame_evals(evaluations: Iterable[FrameEval], path: Path) -> int:
    """Write one JSON object per frame; returns the number of records."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        count = 0
        with path.open("w", encoding="utf-8") as handle:
            for evaluation in evaluations:
                handle.write(json.dumps(evaluation.to_record()) + "\n")
                count += 1
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write frame evaluations to {path}: {e}") from e
    return count


def read_frame_evals(path: Path) -> List[FrameEval]:
    """Parse a JSON-lines file written by write_frame_evals."""
    path = Path(path)
    if not path.is_file():
        raise DataIOError(f"Frame evaluation file not found: {path}")
    evaluations = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            evaluations.append(FrameEval.model_validate(json.loads(line)))
        except (json.JSONDecodeError, ValidationError) as e:
            raise MalformedRecordError(f"{path.name}:{number}", str(e)) from e
    return evaluations


def evaluate_frames(
    pairs: Sequence[Tuple[str, np.ndarray, np.ndarray]],
    tau: float = DEFAULT_TAU,
) -> List[FrameEval]:
    """frame_scores over (frame id, gt, pred) triples, in input order."""
    return [frame_scores(gt, pred, tau, frame_id) for frame_id, gt, pred in pairs]
