"""
YOLACT-style inference pipeline with criss-cross attention insertion variants.
"""

from .pipeline import FrameResult, SegmentationPipeline, image_to_tensor, infer_frame
from .variant import VariantSpec, all_variants
from .weights_file import WeightStore, init_weights, read_weights, write_weights

__all__ = [
    "FrameResult",
    "SegmentationPipeline",
    "VariantSpec",
    "WeightStore",
    "all_variants",
    "image_to_tensor",
    "infer_frame",
    "init_weights",
    "read_weights",
    "write_weights",
]
