"""
Training-time augmentation: photometric distortion, random scaling, random
sample cropping and random mirroring.

Photometric operations touch the image only. Geometric operations are applied
identically to image and label map; labels are always resampled with
nearest-neighbour so instance ids survive.
"""

from typing import Tuple

import numpy as np
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ccseg.utils.validators import as_label_map, check_extent


class AugmentationConfig(BaseModel):
    """Sampling ranges of every augmentation family."""

    model_config = ConfigDict(frozen=True)

    # Photometric
    brightness_delta: float = Field(32.0 / 255.0, ge=0.0, le=1.0)
    contrast_range: Tuple[float, float] = (0.5, 1.5)
    saturation_range: Tuple[float, float] = (0.5, 1.5)
    hue_delta_degrees: float = Field(18.0, ge=0.0, le=180.0)

    # Geometric
    scale_range: Tuple[float, float] = (1.0, 1.5)
    crop_range: Tuple[float, float] = (0.6, 1.0)
    crop_attempts: int = Field(50, ge=1)
    mirror_probability: float = Field(0.5, ge=0.0, le=1.0)

    seed: int = 0

    @model_validator(mode="after")
    def check_ranges(self):
        for name in ("contrast_range", "saturation_range", "scale_range", "crop_range"):
            low, high = getattr(self, name)
            if low > high:
                raise ValueError(f"{name} is empty: {low} > {high}")
            if low <= 0:
                raise ValueError(f"{name} must be positive, got {low}")
        if self.crop_range[1] > 1.0:
            raise ValueError(f"crop_range cannot exceed 1.0, got {self.crop_range[1]}")
        return self

    @classmethod
    def identity(cls) -> "AugmentationConfig":
        """Configuration whose every draw leaves the input unchanged."""
        return cls(
            brightness_delta=0.0,
            contrast_range=(1.0, 1.0),
            saturation_range=(1.0, 1.0),
            hue_delta_degrees=0.0,
            scale_range=(1.0, 1.0),
            crop_range=(1.0, 1.0),
            mirror_probability=0.0,
        )

    def rng(self, index: int = 0) -> np.random.Generator:
        """Per-sample generator derived from the configured seed."""
        return np.random.default_rng((self.seed, index))


def _photometric(rgb: np.ndarray, cfg: AugmentationConfig, draw: np.random.Generator) -> np.ndarray:
    brightness = draw.uniform(-cfg.brightness_delta, cfg.brightness_delta)
    contrast = draw.uniform(*cfg.contrast_range)
    saturation = draw.uniform(*cfg.saturation_range)
    hue = draw.uniform(-cfg.hue_delta_degrees, cfg.hue_delta_degrees)

    out = rgb
    if brightness != 0.0 or contrast != 1.0:
        pixels = rgb.astype(np.float64) / 255.0
        pixels = np.clip((pixels + brightness) * contrast, 0.0, 1.0)
        out = np.round(pixels * 255.0).astype(np.uint8)

    # PIL's HSV round trip is lossy, so it only runs when a change was drawn
    if saturation != 1.0 or hue != 0.0:
        hsv = np.asarray(Image.fromarray(out).convert("HSV"), dtype=np.float64)
        hsv[..., 0] = np.mod(np.round(hsv[..., 0] + hue / 360.0 * 256.0), 256.0)
        hsv[..., 1] = np.clip(np.round(hsv[..., 1] * saturation), 0.0, 255.0)
        height, width = hsv.shape[:2]
        shifted = Image.frombytes("HSV", (width, height), hsv.astype(np.uint8).tobytes())
        out = np.asarray(shifted.convert("RGB"))
    return out


def _resize_pair(rgb: np.ndarray, labels: np.ndarray, height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    image = np.asarray(Image.fromarray(rgb).resize((width, height), Image.BILINEAR))
    label_image = Image.fromarray(labels.astype(np.int32)).resize((width, height), Image.NEAREST)
    return image, np.asarray(label_image, dtype=np.int64)


def _crop_window(labels: np.ndarray, cfg: AugmentationConfig, draw: np.random.Generator) -> Tuple[int, int, int, int]:
    """(top, left, height, width) of a crop keeping at least one instance pixel when any exist."""
    height, width = labels.shape
    has_instances = bool(labels.any())
    crop_h = crop_w = None
    for _ in range(cfg.crop_attempts):
        fraction = draw.uniform(*cfg.crop_range)
        crop_h = max(1, int(round(height * fraction)))
        crop_w = max(1, int(round(width * fraction)))
        top = int(draw.integers(0, height - crop_h + 1))
        left = int(draw.integers(0, width - crop_w + 1))
        if not has_instances or labels[top:top + crop_h, left:left + crop_w].any():
            return top, left, crop_h, crop_w
    return (height - crop_h) // 2, (width - crop_w) // 2, crop_h, crop_w


def augment(
    rgb: np.ndarray,
    labels: np.ndarray,
    cfg: AugmentationConfig,
    draw: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Apply one random augmentation to an aligned image / label map pair.

    Args:
        rgb: (H, W, 3) uint8 image
        labels: (H, W) instance label map
        cfg: Sampling ranges
        draw: Source of randomness for this sample

    Returns:
        (image, label map), possibly with new extents after scaling and cropping
    """
    rgb = np.asarray(rgb, dtype=np.uint8)
    labels = as_label_map(labels)
    check_extent("image", "height", rgb.shape[0], labels.shape[0])
    check_extent("image", "width", rgb.shape[1], labels.shape[1])

    image = _photometric(rgb, cfg, draw)
    out_labels = labels

    scale = draw.uniform(*cfg.scale_range)
    if scale != 1.0:
        height, width = labels.shape
        image, out_labels = _resize_pair(
            image, out_labels, max(1, int(round(height * scale))), max(1, int(round(width * scale)))
        )

    if cfg.crop_range != (1.0, 1.0):
        top, left, crop_h, crop_w = _crop_window(out_labels, cfg, draw)
        image = image[top:top + crop_h, left:left + crop_w]
        out_labels = out_labels[top:top + crop_h, left:left + crop_w]

    if draw.random() < cfg.mirror_probability:
        image = image[:, ::-1]
        out_labels = out_labels[:, ::-1]

    return np.ascontiguousarray(image), np.ascontiguousarray(out_labels)
