"""
Synthetic surgical-scene corpus.

Frames show capsule-shaped instruments entering from the image border over a
smooth tissue-like texture. Stages mirror the challenge's difficulty design:

    train, 1   shared distribution (procedures proctocolectomy / rectal resection)
    2          same scenes over held-out background textures
    3          new procedure, shifted shape and texture families, heavy nuisances
               (specular highlights, haze, low light, near-transparent tools)

Every frame is a pure function of (seed, stage, frame index).
"""

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from PIL import Image

from ccseg.core.errors import ContractViolation, UnwritableOutputError
from ccseg.data.labelmap_io import relabel_contiguous, write_image, write_labelmap
from ccseg.data.manifest import MANIFEST_NAME, write_manifest
from ccseg.schemas import STAGES, DatasetManifest, FrameRecord
from ccseg.utils.logger import data_logger as logger

STAGE_PREFIX: Dict[str, str] = {"train": "train", "1": "s1", "2": "s2", "3": "s3"}
TRAIN_PROCEDURES = ("proctocolectomy", "rectal_resection")
HELD_OUT_PROCEDURE = "sigmoid_resection"
NUISANCE_TAGS = ("specular", "haze", "low_light", "transparent", "edge_small", "occluded")

# Background texture seeds: stage 2 and 3 draw from ranges disjoint from training
_TEXTURE_SEEDS: Dict[str, Tuple[int, int]] = {
    "train": (0, 10_000),
    "1": (0, 10_000),
    "2": (10_000, 20_000),
    "3": (20_000, 30_000),
}
_NUISANCE_PROBABILITY: Dict[str, float] = {"train": 0.1, "1": 0.1, "2": 0.15, "3": 0.5}
_SMALL_INSTANCE_FRACTION = 0.01


@dataclass(frozen=True)
class Instrument:
    """An instrument shaft: a segment from a border point inward with a radius profile."""

    x0: float
    y0: float
    angle: float
    length: float
    radius: float
    family: str
    transparent: bool = False

    @property
    def tip(self) -> Tuple[float, float]:
        return self.x0 + self.length * np.cos(self.angle), self.y0 + self.length * np.sin(self.angle)


@dataclass(frozen=True)
class SynthFrame:
    image: np.ndarray
    labels: np.ndarray
    procedure: str
    shape_families: List[str]
    nuisance_tags: List[str]


def _stage_code(stage: str) -> int:
    if stage not in STAGES:
        raise ContractViolation(f"Unknown stage '{stage}'; expected one of {STAGES}")
    return STAGES.index(stage)


def _frame_rng(seed: int, stage: str, index: int) -> np.random.Generator:
    return np.random.default_rng((seed, _stage_code(stage), index))


def _texture(texture_seed: int, size: int, shifted: bool) -> np.ndarray:
    """(size, size, 3) float background in [0, 1]."""
    rng = np.random.default_rng(texture_seed)
    coarse = rng.random((8, 8, 3))
    smooth = np.asarray(
        Image.fromarray(np.round(coarse * 255).astype(np.uint8)).resize((size, size), Image.BICUBIC),
        dtype=np.float64,
    ) / 255.0
    grain = rng.normal(0.0, 0.03, (size, size, 1))
    if shifted:
        base, spread = np.array([0.55, 0.42, 0.28]), np.array([0.25, 0.2, 0.15])
    else:
        base, spread = np.array([0.62, 0.22, 0.2]), np.array([0.25, 0.15, 0.12])
    return np.clip(base + spread * (smooth - 0.5) + grain, 0.0, 1.0)


def _draw_instrument(rng: np.random.Generator, size: int, stage: str) -> Instrument:
    side = int(rng.integers(0, 4))
    along = rng.uniform(0.1, 0.9) * size
    inward = (np.pi / 2, np.pi, -np.pi / 2, 0.0)[side]
    x0, y0 = ((along, 0.0), (size, along), (along, size), (0.0, along))[side]
    families = ("tapered", "forked") if stage == "3" else ("capsule",)
    return Instrument(
        x0=float(x0),
        y0=float(y0),
        angle=float(inward + rng.uniform(-0.7, 0.7)),
        length=float(rng.uniform(0.3, 0.7) * size),
        radius=float(rng.uniform(0.02, 0.05) * size),
        family=str(families[int(rng.integers(0, len(families)))]),
    )


def _segment_distance(xs: np.ndarray, ys: np.ndarray, a: Tuple[float, float], b: Tuple[float, float]):
    """Distance of every pixel to segment ab and the projection parameter t in [0, 1]."""
    dx, dy = b[0] - a[0], b[1] - a[1]
    norm = dx * dx + dy * dy
    t = np.clip(((xs - a[0]) * dx + (ys - a[1]) * dy) / norm, 0.0, 1.0) if norm > 0 else np.zeros_like(xs)
    return np.hypot(xs - (a[0] + t * dx), ys - (a[1] + t * dy)), t


def _instrument_mask(tool: Instrument, size: int) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    start = (tool.x0, tool.y0)
    tip = tool.tip
    distance, t = _segment_distance(xs, ys, start, tip)
    if tool.family == "tapered":
        mask = distance <= tool.radius * (1.0 - 0.6 * t)
    else:
        mask = distance <= tool.radius
    if tool.family == "forked":
        for turn in (-0.5, 0.5):
            jaw = (tip[0] + 0.2 * tool.length * np.cos(tool.angle + turn),
                   tip[1] + 0.2 * tool.length * np.sin(tool.angle + turn))
            jaw_distance, _ = _segment_distance(xs, ys, tip, jaw)
            mask |= jaw_distance <= 0.45 * tool.radius
    return mask


def _shade(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator, alpha: float) -> None:
    tone = rng.uniform(0.55, 0.85)
    ys = np.linspace(0.9, 1.1, image.shape[0])[:, None]
    metal = np.clip(tone * ys, 0.0, 1.0)[..., None] * np.ones(3)
    image[mask] = (1.0 - alpha) * image[mask] + alpha * np.broadcast_to(metal, image.shape)[mask]


def _apply_nuisances(image: np.ndarray, stage: str, rng: np.random.Generator) -> Tuple[np.ndarray, List[str]]:
    size = image.shape[0]
    p = _NUISANCE_PROBABILITY[stage]
    tags = []
    if rng.random() < p:
        tags.append("specular")
        ys, xs = np.mgrid[0:size, 0:size] + 0.5
        for _ in range(int(rng.integers(1, 4))):
            cx, cy = rng.uniform(0, size, 2)
            rx, ry = rng.uniform(0.03, 0.12, 2) * size
            glare = np.exp(-(((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2))
            image = image + glare[..., None] * (1.0 - image)
    if rng.random() < p:
        tags.append("haze")
        image = image + rng.uniform(0.3, 0.5) * (0.85 - image)
    if rng.random() < p:
        tags.append("low_light")
        image = image * rng.uniform(0.35, 0.6)
    return np.clip(image, 0.0, 1.0), tags


def _compose(
    background: np.ndarray,
    tools: List[Instrument],
    stage: str,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    size = background.shape[0]
    image = background.copy()
    labels = np.zeros((size, size), dtype=np.int64)
    areas = []
    tags = []
    for instance, tool in enumerate(tools, start=1):
        mask = _instrument_mask(tool, size)
        areas.append(int(mask.sum()))
        _shade(image, mask, rng, alpha=0.25 if tool.transparent else 1.0)
        labels[mask] = instance
        if tool.transparent and "transparent" not in tags:
            tags.append("transparent")

    visible = np.bincount(labels.ravel(), minlength=len(tools) + 1)[1:]
    if any(v < a for v, a in zip(visible, areas)):
        tags.append("occluded")
    if any(0 < v < _SMALL_INSTANCE_FRACTION * size * size for v in visible):
        tags.append("edge_small")

    image, nuisance = _apply_nuisances(image, stage, rng)
    image = np.clip(image + rng.normal(0.0, 0.01, image.shape), 0.0, 1.0)
    labels, _ = relabel_contiguous(labels)
    return np.round(image * 255.0).astype(np.uint8), labels, sorted(set(tags + nuisance))


def render_frame(stage: str, seed: int, index: int, image_size: int = 256) -> SynthFrame:
    """One synthetic frame; a pure function of its arguments."""
    rng = _frame_rng(seed, stage, index)
    low, high = _TEXTURE_SEEDS[stage]
    background = _texture(int(rng.integers(low, high)), image_size, shifted=stage == "3")
    count = int(rng.integers(0, 4))
    tools = [_draw_instrument(rng, image_size, stage) for _ in range(count)]
    if stage == "3":
        tools = [replace(tool, transparent=bool(rng.random() < 0.3)) for tool in tools]
    image, labels, tags = _compose(background, tools, stage, rng)
    procedure = HELD_OUT_PROCEDURE if stage == "3" else TRAIN_PROCEDURES[int(rng.integers(0, 2))]
    families = sorted({tool.family for tool in tools})
    return SynthFrame(image=image, labels=labels, procedure=procedure, shape_families=families, nuisance_tags=tags)


def synth_generate(
    stage: str,
    count: int,
    seed: int,
    out_dir: Path,
    image_size: int = 256,
) -> DatasetManifest:
    """
    Render a corpus of PNG frame/label pairs plus its manifest.

    Args:
        stage: One of train, 1, 2, 3
        count: Number of frames (0 gives an empty, valid corpus)
        seed: Corpus seed
        out_dir: Output directory; receives images/, annotations/ and manifest.json
        image_size: Square frame extent

    Returns:
        The written manifest
    """
    if count < 0:
        raise ContractViolation(f"count must be >= 0, got {count}")
    frames = (render_frame(stage, seed, index, image_size) for index in range(count))
    manifest = write_corpus(frames, stage, out_dir)
    logger.info(f"Generated stage {stage} corpus - {count} frames | seed {seed} | {out_dir}")
    return manifest


def write_corpus(frames: Iterable[SynthFrame], stage: str, out_dir: Path, prefix: Optional[str] = None) -> DatasetManifest:
    """Write rendered frames as PNG pairs under out_dir and return the written manifest."""
    _stage_code(stage)
    prefix = prefix or STAGE_PREFIX[stage]
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise UnwritableOutputError(f"Cannot create output directory {out_dir}: {e}") from e

    records = []
    for index, frame in enumerate(frames):
        frame_id = f"{prefix}_{index:05d}"
        image_path = f"images/{frame_id}.png"
        annotation_path = f"annotations/{frame_id}.png"
        write_image(frame.image, out_dir / image_path)
        write_labelmap(frame.labels, out_dir / annotation_path)
        records.append(
            FrameRecord(
                frame_id=frame_id,
                procedure=frame.procedure,
                stage=stage,
                image_path=image_path,
                annotation_path=annotation_path,
                instrument_count=int(frame.labels.max()),
                shape_families=frame.shape_families,
                nuisance_tags=frame.nuisance_tags,
            )
        )

    manifest = DatasetManifest(frames=records, root=out_dir)
    write_manifest(manifest, out_dir / MANIFEST_NAME)
    return manifest


def synth_sequence(
    count: int,
    seed: int,
    image_size: int = 256,
    stage: str = "1",
    drift: float = 0.02,
) -> List[SynthFrame]:
    """
    Temporally coherent clip: one scene whose instruments drift smoothly.

    Args:
        count: Number of frames
        seed: Clip seed
        image_size: Square frame extent
        stage: Stage whose distribution the scene is drawn from
        drift: Per-frame angular drift of each instrument (radians)

    Returns:
        SynthFrame list in temporal order
    """
    if count < 1:
        raise ContractViolation(f"A sequence needs at least one frame, got {count}")
    rng = np.random.default_rng((seed, _stage_code(stage), 1_000_003))
    low, high = _TEXTURE_SEEDS[stage]
    background = _texture(int(rng.integers(low, high)), image_size, shifted=stage == "3")
    tools = [_draw_instrument(rng, image_size, stage) for _ in range(int(rng.integers(1, 4)))]
    phases = rng.uniform(0.0, 2 * np.pi, len(tools))

    frames = []
    for t in range(count):
        moved = [
            replace(
                tool,
                angle=tool.angle + drift * np.sin(0.1 * t + phase) * 10,
                length=tool.length * (1.0 + 0.1 * np.sin(0.05 * t + phase)),
            )
            for tool, phase in zip(tools, phases)
        ]
        image, labels, tags = _compose(background, moved, stage, np.random.default_rng((seed, 0)))
        frames.append(
            SynthFrame(
                image=image,
                labels=labels,
                procedure=HELD_OUT_PROCEDURE if stage == "3" else TRAIN_PROCEDURES[0],
                shape_families=sorted({tool.family for tool in moved}),
                nuisance_tags=tags,
            )
        )
    return frames


def corpus_statistics(frames: List[SynthFrame]) -> Dict[str, object]:
    """Mean background intensity and shape-family histogram of rendered frames."""
    background_means = []
    families: Dict[str, int] = {}
    for frame in frames:
        background = frame.labels == 0
        if background.any():
            background_means.append(float(frame.image[background].mean()))
        for family in frame.shape_families:
            families[family] = families.get(family, 0) + 1
    return {
        "mean_background_intensity": float(np.mean(background_means)) if background_means else 0.0,
        "shape_families": families,
    }


def render_stage(stage: str, count: int, seed: int, image_size: int = 256) -> List[SynthFrame]:
    """In-memory equivalent of synth_generate."""
    return [render_frame(stage, seed, index, image_size) for index in range(count)]
