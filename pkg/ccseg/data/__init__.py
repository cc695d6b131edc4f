"""
Dataset manifests, label-map I/O, augmentation and the synthetic corpus generator.
"""

from .augment import AugmentationConfig, augment
from .labelmap_io import read_image, read_labelmap, write_image, write_labelmap
from .manifest import filter_empty_frames, load_manifest, split_train_val, write_manifest
from .synth import synth_generate, synth_sequence

__all__ = [
    "AugmentationConfig",
    "augment",
    "filter_empty_frames",
    "load_manifest",
    "read_image",
    "read_labelmap",
    "split_train_val",
    "synth_generate",
    "synth_sequence",
    "write_image",
    "write_labelmap",
    "write_manifest",
]
