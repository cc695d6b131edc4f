"""
Dense tensor kernels and recurrent criss-cross attention.
"""

from .ccam_attention import (
    AttentionConfig,
    CCWeights,
    affinity_entry_count,
    cc_affinity,
    cc_aggregate,
    gradient_check,
    influence_map,
    rcca_backward,
    rcca_forward,
)
from .tensor_kernels import activation, bilinear_resize, conv2d, matmul, softmax_axis

__all__ = [
    "AttentionConfig",
    "CCWeights",
    "activation",
    "affinity_entry_count",
    "bilinear_resize",
    "cc_affinity",
    "cc_aggregate",
    "conv2d",
    "gradient_check",
    "influence_map",
    "matmul",
    "rcca_backward",
    "rcca_forward",
    "softmax_axis",
]
