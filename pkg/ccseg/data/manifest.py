"""
Dataset manifests and training-set preprocessing.

A manifest is a JSON document:

    {"version": 1,
     "frames": [{"frame_id": "...", "procedure": "...", "stage": "train|1|2|3",
                 "image_path": "...", "annotation_path": "...", ...}]}

Record paths are relative to the manifest's directory unless absolute.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal, Mapping, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from ccseg.core.errors import (
    ContractViolation,
    DanglingPathError,
    DataIOError,
    MalformedRecordError,
    ManifestNotFoundError,
    UnwritableOutputError,
)
from ccseg.data.labelmap_io import read_labelmap
from ccseg.schemas import DatasetManifest, FrameRecord
from ccseg.utils.logger import data_logger as logger
from ccseg.utils.validators import check_fraction

MANIFEST_NAME = "manifest.json"

AnnotationSource = Union[Mapping[str, np.ndarray], Callable[[FrameRecord], np.ndarray]]


def load_manifest(path: Path, check_paths: bool = True) -> DatasetManifest:
    """
    Load and validate a manifest.

    Args:
        path: Manifest JSON file
        check_paths: Require every image and annotation path to exist

    Returns:
        DatasetManifest rooted at the manifest's directory

    Raises:
        ManifestNotFoundError: The file does not exist
        MalformedRecordError: A record is incomplete or invalid (names the frame id)
        DanglingPathError: A record path does not exist (names the frame id)
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestNotFoundError(f"Manifest not found: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError) as e:
        raise DataIOError(f"Cannot read manifest {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise MalformedRecordError("<manifest>", f"invalid JSON: {e}") from e
    if not isinstance(document, dict) or not isinstance(document.get("frames", []), list):
        raise MalformedRecordError("<manifest>", "expected an object with a 'frames' list")

    records = []
    seen = set()
    for index, raw in enumerate(document.get("frames", [])):
        frame_id = str(raw.get("frame_id", f"#{index}")) if isinstance(raw, dict) else f"#{index}"
        try:
            record = FrameRecord.model_validate(raw)
        except ValidationError as e:
            fields = ", ".join(".".join(str(p) for p in err["loc"]) for err in e.errors())
            raise MalformedRecordError(frame_id, f"invalid or missing fields: {fields}") from e
        if record.frame_id in seen:
            raise MalformedRecordError(record.frame_id, "duplicate frame id")
        seen.add(record.frame_id)
        records.append(record)

    manifest = DatasetManifest(version=int(document.get("version", 1)), frames=records, root=path.parent)
    if check_paths:
        for record in manifest.frames:
            for relative in (record.image_path, record.annotation_path):
                if not manifest.resolve(relative).is_file():
                    raise DanglingPathError(record.frame_id, relative)

    logger.info(f"Loaded manifest {path} - {manifest.counts()}")
    return manifest


def write_manifest(manifest: DatasetManifest, path: Path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write manifest {path}: {e}") from e


@dataclass(frozen=True)
class FilterResult:
    manifest: DatasetManifest
    removed: int
    status: Literal["ok", "empty"]


def _annotation_loader(manifest: DatasetManifest, annotations: Optional[AnnotationSource]):
    if annotations is None:
        return lambda record: read_labelmap(manifest.resolve(record.annotation_path))
    if callable(annotations):
        return annotations

    def lookup(record: FrameRecord) -> np.ndarray:
        try:
            return annotations[record.frame_id]
        except KeyError:
            raise DataIOError(f"No annotation for frame '{record.frame_id}'") from None

    return lookup


def filter_empty_frames(manifest: DatasetManifest, annotations: Optional[AnnotationSource] = None) -> FilterResult:
    """
    Drop training frames whose label map is all background.

    Frames of the test stages are kept untouched.

    Args:
        manifest: Dataset manifest
        annotations: frame id -> label map, or a loader taking a FrameRecord;
            label maps are read from disk when omitted

    Returns:
        FilterResult with the filtered manifest, the removal count and a
        status of "empty" when no training frame survives
    """
    load = _annotation_loader(manifest, annotations)
    kept = []
    removed = 0
    for record in manifest.frames:
        if record.stage == "train" and not np.any(np.asarray(load(record))):
            removed += 1
            continue
        kept.append(record)

    filtered = manifest.replace_frames(kept)
    status = "ok"
    if filtered.counts()["train"] == 0:
        status = "empty"
        logger.warning(f"Empty-frame filter left no training frames ({removed} removed)")
    else:
        logger.info(f"Removed {removed} empty training frames, {filtered.counts()['train']} remain")
    return FilterResult(manifest=filtered, removed=removed, status=status)


def split_train_val(
    manifest: DatasetManifest,
    fraction: float = 0.85,
    seed: int = 0,
) -> Tuple[DatasetManifest, DatasetManifest]:
    """
    Seeded partition of the training frames.

    The training part holds round(n * fraction) frames, halves rounding up.
    """
    check_fraction("fraction", fraction, open_interval=True)
    frames = manifest.by_stage("train")
    n = len(frames)
    if n == 0:
        raise ContractViolation("split_train_val needs at least one training frame")
    n_train = int(np.floor(n * fraction + 0.5))
    order = np.random.default_rng(seed).permutation(n)
    train = [frames[i] for i in sorted(order[:n_train])]
    val = [frames[i] for i in sorted(order[n_train:])]
    return manifest.replace_frames(train), manifest.replace_frames(val)
