"""
Model variants: where criss-cross attention sits in the network.
"""

from typing import Dict, List, Literal, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ccseg.core.errors import ConfigurationError
from ccseg.nn.ccam_attention import AttentionConfig

Insertion = Literal["none", "backbone", "fpn", "both"]

DISPLAY_NAMES: Dict[str, str] = {
    "none": "Base YOLACT++",
    "backbone": "CCAM-Backbone",
    "fpn": "CCAM-FPN",
    "both": "CCAM-Full",
}

BACKBONE_LEVELS: Tuple[str, ...] = ("C3", "C4", "C5")
PYRAMID_LEVELS: Tuple[str, ...] = ("P3", "P4", "P5", "P6", "P7")


class VariantSpec(BaseModel):
    """Architecture and post-processing settings of one model variant."""

    model_config = ConfigDict(frozen=True)

    insertion: Insertion = "none"

    # Network widths
    stem_channels: int = Field(16, ge=1)
    backbone_channels: Tuple[int, int, int] = (32, 64, 128)
    blocks_per_stage: int = Field(2, ge=0)
    fpn_channels: int = Field(64, ge=1)
    proto_channels: int = Field(32, ge=1)
    prototype_count: int = Field(8, ge=1)
    num_classes: int = Field(2, ge=2)

    # Anchors: one scale per pyramid level P3..P7
    anchor_scales: Tuple[float, ...] = (16.0, 32.0, 64.0, 128.0, 256.0)
    anchor_ratios: Tuple[float, ...] = (1.0, 0.5, 2.0)

    # Post-processing
    nms_iou: float = Field(0.5, ge=0.0, le=1.0)
    pre_nms_confidence: float = Field(0.05, ge=0.0, le=1.0)
    display_confidence: float = Field(0.3, ge=0.0, le=1.0)
    top_k: int = Field(200, ge=1)

    # Attention
    attention_reduction: int = Field(8, ge=1)
    attention_recurrence: int = Field(2, ge=1)
    share_attention_weights: bool = True

    # Seed used when weights are initialized for this variant
    weights_seed: int = 0

    @model_validator(mode="after")
    def check_anchor_layout(self):
        if len(self.anchor_scales) != len(PYRAMID_LEVELS):
            raise ValueError(
                f"anchor_scales needs one scale per level {PYRAMID_LEVELS}, got {len(self.anchor_scales)}"
            )
        if not self.anchor_ratios:
            raise ValueError("anchor_ratios must not be empty")
        return self

    @classmethod
    def from_name(cls, name: str, **overrides) -> "VariantSpec":
        """Build a variant from an insertion key or its display name."""
        for insertion, display in DISPLAY_NAMES.items():
            if name in (insertion, display):
                return cls(insertion=insertion, **overrides)
        raise ConfigurationError(f"Unknown variant '{name}'; expected one of {sorted(DISPLAY_NAMES)}")

    @property
    def display_name(self) -> str:
        return DISPLAY_NAMES[self.insertion]

    @property
    def backbone_attention(self) -> bool:
        return self.insertion in ("backbone", "both")

    @property
    def fpn_attention(self) -> bool:
        return self.insertion in ("fpn", "both")

    @property
    def anchors_per_position(self) -> int:
        return len(self.anchor_ratios)

    def attention_config(self, channels: int) -> AttentionConfig:
        return AttentionConfig(
            channels=channels,
            reduction=self.attention_reduction,
            recurrence=self.attention_recurrence,
            share_weights_across_recurrence=self.share_attention_weights,
        )

    def attention_sites(self, insertion: str = None) -> List[Tuple[str, int]]:
        """(weight prefix, channels) of every attention site used by an insertion mode."""
        insertion = insertion or self.insertion
        sites: List[Tuple[str, int]] = []
        if insertion in ("backbone", "both"):
            sites += [(f"ccam.backbone.{level.lower()}.", ch) for level, ch in zip(BACKBONE_LEVELS, self.backbone_channels)]
        if insertion in ("fpn", "both"):
            sites += [(f"ccam.fpn.{level.lower()}.", self.fpn_channels) for level in PYRAMID_LEVELS]
        return sites

    def with_insertion(self, insertion: Insertion) -> "VariantSpec":
        return self.model_copy(update={"insertion": insertion})


def all_variants(**overrides) -> List[VariantSpec]:
    """The four variants in reporting order: Base, Backbone, FPN, Full."""
    return [VariantSpec(insertion=key, **overrides) for key in ("none", "backbone", "fpn", "both")]
