"""
Tests for DSC, NSD, distance transform, instance matching and frame scores.
"""

import json
from itertools import permutations

import numpy as np
import pytest

from ccseg.core.errors import ContractViolation, DataIOError, MalformedRecordError
from ccseg.evaluation.robust_metrics import (
    _exhaustive_assignment,
    boundary,
    distance_transform,
    dsc,
    dsc_matrix,
    evaluate_frames,
    frame_scores,
    match_instances,
    nsd,
    read_frame_evals,
    write_frame_evals,
)


def _random_blobs(rng, size=12, max_instances=5):
    labels = np.zeros((size, size), dtype=np.int64)
    for label in range(1, int(rng.integers(1, max_instances + 1)) + 1):
        r, c = rng.integers(0, size - 2, size=2)
        h, w = rng.integers(2, 6, size=2)
        labels[r:r + h, c:c + w] = label
    return labels


def _brute_force_nearest(points: np.ndarray) -> np.ndarray:
    coords = np.argwhere(points)
    grid = np.indices(points.shape).reshape(2, -1).T
    squared = ((grid[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2)
    return np.sqrt(squared.min(axis=1)).reshape(points.shape)


def _best_total(scores: np.ndarray) -> float:
    n, m = scores.shape
    k = max(n, m)
    padded = np.zeros((k, k))
    padded[:n, :m] = scores
    return max(sum(padded[i, p[i]] for i in range(k)) for p in permutations(range(k)))


def _lexicographic_best(scores: np.ndarray):
    """Every partial one-to-one assignment over positive pairs; max total, then smallest sorted pair list."""
    n, m = scores.shape
    transpose = n > m
    small, large = (m, n) if transpose else (n, m)
    candidates = []

    def extend(index, used, pairs):
        if index == small:
            candidates.append(sorted(pairs))
            return
        extend(index + 1, used, pairs)
        for other in range(large):
            i, j = (other, index) if transpose else (index, other)
            if other not in used and scores[i, j] > 0:
                extend(index + 1, used | {other}, pairs + [(i, j)])

    extend(0, frozenset(), [])
    best_total = max(sum(scores[i, j] for i, j in pairs) for pairs in candidates)
    return min(p for p in candidates if sum(scores[i, j] for i, j in p) >= best_total - 1e-12)


def _boundary_by_neighbours(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1)
    interior = (
        padded[1:-1, 1:-1] & padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return mask & ~interior


def _nsd_by_pairwise_distances(a: np.ndarray, b: np.ndarray, tau: float) -> float:
    border_a = np.argwhere(_boundary_by_neighbours(a))
    border_b = np.argwhere(_boundary_by_neighbours(b))
    distances = np.sqrt(((border_a[:, None, :] - border_b[None, :, :]) ** 2).sum(axis=2))
    close = int((distances.min(axis=1) <= tau).sum()) + int((distances.min(axis=0) <= tau).sum())
    return close / (len(border_a) + len(border_b))


def _nonempty_mask(rng, size=12):
    mask = rng.random((size, size)) < rng.uniform(0.1, 0.6)
    mask[tuple(rng.integers(0, size, size=2))] = True
    return mask


def _two_gt_one_pred():
    """gt A, B and pred P with DSC(A, P) = 0.8 and DSC(B, P) = 0.3."""
    gt = np.zeros((2, 40), dtype=np.int64)
    gt[0, 6:36] = 1
    gt[0, 0:6] = 2
    gt[1, 0:4] = 2
    pred = np.zeros((2, 40), dtype=np.int64)
    pred[0, 0:30] = 1
    return gt, pred


# DSC

def test_dsc_examples():
    y = np.zeros((4, 4), dtype=bool)
    y[0, :] = True
    y_hat = np.zeros((4, 4), dtype=bool)
    y_hat[0, 1:] = True
    y_hat[1, :3] = True
    assert dsc(y, y_hat) == 0.6
    assert dsc(y, y) == 1.0
    assert dsc(y, np.roll(y, 2, axis=0)) == 0.0


def test_dsc_symmetric(rng):
    for _ in range(20):
        a, b = rng.random((8, 8)) < 0.4, rng.random((8, 8)) < 0.4
        a[0, 0] = True
        assert dsc(a, b) == dsc(b, a)


def test_dsc_matches_pixel_count(rng):
    for _ in range(100):
        a, b = _nonempty_mask(rng), rng.random((12, 12)) < 0.3
        both = sum(1 for x, y in zip(a.ravel(), b.ravel()) if x and y)
        assert dsc(a, b) == 2.0 * both / (int(a.sum()) + int(b.sum()))


def test_dsc_of_two_empty_masks():
    with pytest.raises(ContractViolation):
        dsc(np.zeros((3, 3), dtype=bool), np.zeros((3, 3), dtype=bool))


def test_dsc_shape_mismatch():
    with pytest.raises(ContractViolation, match="shape"):
        dsc(np.ones((3, 3), dtype=bool), np.ones((3, 4), dtype=bool))


# Boundary and distance transform

def test_boundary_examples():
    single = np.zeros((5, 5), dtype=bool)
    single[2, 2] = True
    assert np.array_equal(boundary(single), single)

    square = np.zeros((8, 8), dtype=bool)
    square[2:6, 2:6] = True
    assert boundary(square).sum() == 12

    full = np.ones((6, 6), dtype=bool)
    ring = full.copy()
    ring[1:5, 1:5] = False
    assert np.array_equal(boundary(full), ring)


def test_distance_transform_pythagoras():
    distances = distance_transform(np.array([[0, 0]]), 8, 8)
    assert distances[3, 4] == 5.0
    assert distances[0, 0] == 0.0


def test_distance_transform_matches_brute_force(rng):
    for _ in range(100):
        points = rng.random((16, 16)) < rng.uniform(0.01, 0.2)
        points[tuple(rng.integers(0, 16, size=2))] = True
        assert np.array_equal(distance_transform(points, 16, 16), _brute_force_nearest(points))


def test_distance_transform_empty_set():
    with pytest.raises(ContractViolation, match="empty"):
        distance_transform(np.zeros((4, 4), dtype=bool), 4, 4)


def test_distance_transform_point_outside_map():
    with pytest.raises(ContractViolation, match="beyond"):
        distance_transform(np.array([[4, 0]]), 4, 4)


# NSD

def test_nsd_examples():
    a = np.zeros((32, 32), dtype=bool)
    a[5, 5] = True
    b = np.zeros((32, 32), dtype=bool)
    b[5, 25] = True
    assert nsd(a, a) == 1.0
    assert nsd(a, b, 13.0) == 0.0

    left = np.zeros((8, 8), dtype=bool)
    left[:, 3] = True
    right = np.zeros((8, 8), dtype=bool)
    right[:, 4] = True
    assert nsd(left, right, 1.0) == 1.0
    assert nsd(left, right, 0.5) == 0.0


def test_boundary_matches_neighbour_rule(rng):
    for _ in range(100):
        mask = _nonempty_mask(rng)
        assert np.array_equal(boundary(mask), _boundary_by_neighbours(mask))


def test_nsd_matches_pairwise_oracle(rng):
    for _ in range(100):
        a, b = _nonempty_mask(rng), _nonempty_mask(rng)
        tau = float(rng.choice([0.0, 1.0, 1.5, 2.0, 3.0, 13.0]))
        assert abs(nsd(a, b, tau) - _nsd_by_pairwise_distances(a, b, tau)) <= 1e-9


def test_nsd_symmetric_and_monotone(rng):
    for _ in range(20):
        a = _random_blobs(rng, 16, 1) > 0
        b = _random_blobs(rng, 16, 1) > 0
        assert abs(nsd(a, b, 2.0) - nsd(b, a, 2.0)) < 1e-12
        values = [nsd(a, b, tau) for tau in (0.0, 1.0, 2.0, 4.0, 13.0)]
        assert values == sorted(values)


def test_metrics_invariant_under_translation(rng):
    for _ in range(10):
        a = np.zeros((24, 24), dtype=bool)
        b = np.zeros((24, 24), dtype=bool)
        a[4:10, 5:12] = rng.random((6, 7)) < 0.8
        b[6:12, 4:9] = rng.random((6, 5)) < 0.8
        a[6, 8] = b[8, 6] = True
        shifted_a = np.roll(a, (3, 4), axis=(0, 1))
        shifted_b = np.roll(b, (3, 4), axis=(0, 1))
        assert dsc(a, b) == dsc(shifted_a, shifted_b)
        assert abs(nsd(a, b, 2.0) - nsd(shifted_a, shifted_b, 2.0)) < 1e-9


# Matching

def test_identical_maps_match_identity():
    labels = np.zeros((10, 10), dtype=np.int64)
    labels[:3, :3] = 1
    labels[5:, 5:] = 2
    labels[0, 8:] = 3
    assert match_instances(labels, labels) == [(1, 1), (2, 2), (3, 3)]


def test_matching_prefers_higher_dsc():
    gt, pred = _two_gt_one_pred()
    _, _, scores = dsc_matrix(gt, pred)
    assert scores[0, 0] == pytest.approx(0.8)
    assert scores[1, 0] == pytest.approx(0.3)
    assert match_instances(gt, pred) == [(1, 1)]


def test_disjoint_prediction_is_unmatched():
    gt = np.zeros((6, 6), dtype=np.int64)
    gt[:2, :2] = 1
    pred = np.zeros((6, 6), dtype=np.int64)
    pred[4:, 4:] = 1
    assert match_instances(gt, pred) == []


def test_matching_equals_exhaustive_oracle(rng):
    for _ in range(100):
        gt, pred = _random_blobs(rng), _random_blobs(rng)
        gt_ids, pred_ids, scores = dsc_matrix(gt, pred)
        pairs = match_instances(gt, pred)
        index_gt = {int(v): i for i, v in enumerate(gt_ids)}
        index_pred = {int(v): j for j, v in enumerate(pred_ids)}
        total = sum(scores[index_gt[g], index_pred[p]] for g, p in pairs)
        assert len({g for g, _ in pairs}) == len(pairs) == len({p for _, p in pairs})
        assert all(scores[index_gt[g], index_pred[p]] > 0 for g, p in pairs)
        assert total == pytest.approx(_best_total(scores), abs=1e-12)


def test_matching_pairs_equal_lexicographic_oracle(rng):
    for _ in range(100):
        gt, pred = _random_blobs(rng, 12, 4), _random_blobs(rng, 12, 4)
        gt_ids, pred_ids, scores = dsc_matrix(gt, pred)
        expected = [(int(gt_ids[i]), int(pred_ids[j])) for i, j in _lexicographic_best(scores)]
        assert match_instances(gt, pred) == expected


def test_tied_rectangular_scores_take_smallest_pairs():
    scores = np.array([
        [0, .5, .5, 1, 0, 0, .5],
        [0, .5, .5, 1, .5, .5, .5],
        [0, 1, 1, .5, .5, 1, .5],
    ])
    assert _exhaustive_assignment(scores) == [(0, 1), (1, 3), (2, 2)]
    assert _exhaustive_assignment(scores.T) == _lexicographic_best(scores.T)


def test_tie_heavy_rectangular_scores(rng):
    for _ in range(100):
        shape = (int(rng.integers(1, 4)), int(rng.integers(7, 9)))
        if rng.random() < 0.5:
            shape = shape[::-1]
        scores = rng.choice([0.0, 0.5, 1.0], size=shape)
        assert _exhaustive_assignment(scores) == _lexicographic_best(scores)


def test_few_gt_many_predictions_break_ties_by_id():
    gt = np.zeros((2, 14), dtype=np.int64)
    gt[0, :] = 1
    pred = np.zeros((2, 14), dtype=np.int64)
    for label in range(1, 8):
        pred[0, 2 * label - 2:2 * label] = label
    assert match_instances(gt, pred) == [(1, 1)]
    assert match_instances(pred, gt) == [(1, 1)]


def test_wide_frames_stay_fast():
    labels = np.zeros((6, 100), dtype=np.int64)
    pred = np.zeros_like(labels)
    for label in range(1, 7):
        labels[label - 1, :] = label
    for label in range(1, 51):
        pred[:, 2 * label - 2:2 * label] = label
    pairs = match_instances(labels, pred)
    assert len(pairs) == 6
    assert pairs == sorted(pairs)


def test_large_frames_use_the_solver():
    labels = np.zeros((20, 20), dtype=np.int64)
    for label in range(1, 9):
        labels[2 * label, :] = label
    assert match_instances(labels, labels) == [(i, i) for i in range(1, 9)]


# Frame scores

def test_frame_scores_perfect_and_empty():
    labels = np.zeros((8, 8), dtype=np.int64)
    assert (frame_scores(labels, labels).mi_dsc, frame_scores(labels, labels).mi_nsd) == (1.0, 1.0)
    labels[1:4, 1:4] = 1
    labels[5:7, 5:7] = 2
    perfect = frame_scores(labels, labels)
    assert (perfect.mi_dsc, perfect.mi_nsd) == (1.0, 1.0)
    missed = frame_scores(labels, np.zeros_like(labels))
    assert (missed.mi_dsc, missed.mi_nsd) == (0.0, 0.0)
    hallucinated = frame_scores(np.zeros_like(labels), labels)
    assert (hallucinated.mi_dsc, hallucinated.mi_nsd) == (0.0, 0.0)


def test_frame_scores_unmatched_instance_halves_mean():
    gt, pred = _two_gt_one_pred()
    evaluation = frame_scores(gt, pred, tau=13.0, frame_id="f")
    assert evaluation.mi_dsc == pytest.approx(0.4)
    assert evaluation.mi_nsd == pytest.approx(nsd(gt == 1, pred == 1, 13.0) / 2)
    assert (evaluation.n_gt, evaluation.n_pred, evaluation.n_matched) == (2, 1, 1)


def test_spurious_instance_lowers_scores():
    gt = np.zeros((16, 16), dtype=np.int64)
    gt[2:6, 2:6] = 1
    pred = gt.copy()
    pred[2:6, 3:7] = 1
    base = frame_scores(gt, pred)
    pred[12:15, 12:15] = 2
    worse = frame_scores(gt, pred)
    assert worse.mi_dsc < base.mi_dsc
    assert worse.mi_nsd < base.mi_nsd


def test_frame_scores_bounded(rng):
    for _ in range(20):
        evaluation = frame_scores(_random_blobs(rng), _random_blobs(rng))
        assert 0.0 <= evaluation.mi_dsc <= 1.0
        assert 0.0 <= evaluation.mi_nsd <= 1.0


def test_frame_eval_file(tmp_path, rng):
    pairs = [(f"frame_{i}", _random_blobs(rng), _random_blobs(rng)) for i in range(4)]
    evaluations = evaluate_frames(pairs)
    assert [e.frame_id for e in evaluations] == ["frame_0", "frame_1", "frame_2", "frame_3"]
    path = tmp_path / "evals.jsonl"
    assert write_frame_evals(evaluations, path) == 4
    loaded = read_frame_evals(path)
    assert [(e.frame_id, e.mi_dsc, e.mi_nsd) for e in loaded] == [(e.frame_id, e.mi_dsc, e.mi_nsd) for e in evaluations]


def test_frame_eval_file_errors(tmp_path):
    with pytest.raises(DataIOError):
        read_frame_evals(tmp_path / "missing.jsonl")
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"frame_id": "a", "mi_dsc": 0.5, "mi_nsd": 0.5}) + "\n{not json}\n")
    with pytest.raises(MalformedRecordError) as excinfo:
        read_frame_evals(path)
    assert excinfo.value.frame_id == "bad.jsonl:2"
