"""
Robustness evaluation: per-frame multi-instance metrics, percentile aggregation and ranking.
"""

from .aggregation_ranking import aggregate_algorithm, build_stage_report, emit_report, percentile, rank_algorithms
from .robust_metrics import boundary, distance_transform, dsc, frame_scores, match_instances, nsd

__all__ = [
    "aggregate_algorithm",
    "boundary",
    "build_stage_report",
    "distance_transform",
    "dsc",
    "emit_report",
    "frame_scores",
    "match_instances",
    "nsd",
    "percentile",
    "rank_algorithms",
]
