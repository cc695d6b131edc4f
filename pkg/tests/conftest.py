"""
Shared fixtures for the ccseg test suites.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from ccseg.data.synth import synth_generate  # noqa: E402
from ccseg.pipeline.variant import VariantSpec  # noqa: E402
from ccseg.pipeline.weights_file import init_weights  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_variant():
    """Narrow network so 64x64 frames run in well under a second."""
    return VariantSpec(
        insertion="both",
        stem_channels=4,
        backbone_channels=(8, 8, 8),
        blocks_per_stage=1,
        fpn_channels=8,
        proto_channels=8,
        prototype_count=4,
    )


@pytest.fixture
def small_weights(small_variant):
    return init_weights(small_variant, seed=3)


@pytest.fixture
def corpus(tmp_path):
    """A six-frame stage-1 synthetic corpus on disk."""
    out = tmp_path / "corpus"
    manifest = synth_generate("1", 6, seed=5, out_dir=out, image_size=64)
    return out, manifest
