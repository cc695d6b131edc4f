"""
Tests for manifests, preprocessing, augmentation, label-map I/O and the synthetic corpus.
"""

import json

import numpy as np
import pytest

from ccseg.core.errors import (
    ContractViolation,
    DanglingPathError,
    LabelMapError,
    MalformedRecordError,
    ManifestNotFoundError,
)
from ccseg.data.augment import AugmentationConfig, augment
from ccseg.data.labelmap_io import read_labelmap, write_labelmap
from ccseg.data.manifest import filter_empty_frames, load_manifest, split_train_val, write_manifest
from ccseg.data.synth import corpus_statistics, render_frame, render_stage, synth_generate, synth_sequence
from ccseg.schemas import DatasetManifest, FrameRecord

CHALLENGE_COUNTS = {"train": 5983, "1": 663, "2": 514, "3": 2880}
EMPTY_TRAINING_FRAMES = 996


def _record(frame_id, stage, procedure="proctocolectomy"):
    return {
        "frame_id": frame_id,
        "procedure": procedure,
        "stage": stage,
        "image_path": f"images/{frame_id}.png",
        "annotation_path": f"annotations/{frame_id}.png",
    }


def _challenge_manifest():
    frames = [
        FrameRecord(**_record(f"{stage}_{i:05d}", stage))
        for stage, count in CHALLENGE_COUNTS.items()
        for i in range(count)
    ]
    return DatasetManifest(frames=frames)


def _write_document(tmp_path, frames):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"version": 1, "frames": frames}))
    return path


def _challenge_annotations(record):
    index = int(record.frame_id.rsplit("_", 1)[1])
    if record.stage == "train" and index < EMPTY_TRAINING_FRAMES:
        return np.zeros((2, 2), dtype=np.int64)
    return np.array([[0, 1], [0, 0]])


# Manifest

def test_manifest_counts_per_stage(tmp_path):
    frames = [
        _record(f"{stage}_{i:05d}", stage)
        for stage, count in CHALLENGE_COUNTS.items()
        for i in range(count)
    ]
    manifest = load_manifest(_write_document(tmp_path, frames), check_paths=False)
    assert manifest.counts() == CHALLENGE_COUNTS
    assert manifest.counts_by_procedure()["proctocolectomy"]["3"] == 2880


def test_empty_manifest(tmp_path):
    manifest = load_manifest(_write_document(tmp_path, []))
    assert manifest.counts() == {"train": 0, "1": 0, "2": 0, "3": 0}


def test_missing_manifest(tmp_path):
    with pytest.raises(ManifestNotFoundError):
        load_manifest(tmp_path / "absent.json")


def test_record_missing_field_names_frame(tmp_path):
    broken = _record("train_00007", "train")
    del broken["procedure"]
    path = _write_document(tmp_path, [_record("train_00001", "train"), broken])
    with pytest.raises(MalformedRecordError) as excinfo:
        load_manifest(path, check_paths=False)
    assert excinfo.value.frame_id == "train_00007"
    assert "procedure" in str(excinfo.value)


def test_record_with_unknown_stage(tmp_path):
    path = _write_document(tmp_path, [_record("x", "4")])
    with pytest.raises(MalformedRecordError, match="stage"):
        load_manifest(path, check_paths=False)


def test_duplicate_frame_id(tmp_path):
    path = _write_document(tmp_path, [_record("a", "1"), _record("a", "2")])
    with pytest.raises(MalformedRecordError, match="duplicate"):
        load_manifest(path, check_paths=False)


def test_dangling_path(tmp_path):
    path = _write_document(tmp_path, [_record("s1_00000", "1")])
    with pytest.raises(DanglingPathError) as excinfo:
        load_manifest(path)
    assert excinfo.value.frame_id == "s1_00000"


def test_manifest_round_trip(tmp_path, corpus):
    out, manifest = corpus
    copy_path = tmp_path / "copy" / "manifest.json"
    write_manifest(manifest, copy_path)
    reloaded = load_manifest(copy_path, check_paths=False)
    assert [r.frame_id for r in reloaded.frames] == [r.frame_id for r in manifest.frames]
    assert load_manifest(out / "manifest.json").counts()["1"] == 6


# Preprocessing

def test_filter_empty_training_frames():
    result = filter_empty_frames(_challenge_manifest(), _challenge_annotations)
    assert result.removed == EMPTY_TRAINING_FRAMES
    assert result.status == "ok"
    assert result.manifest.counts() == {"train": 4987, "1": 663, "2": 514, "3": 2880}


def test_filter_keeps_empty_test_frames():
    manifest = DatasetManifest(frames=[FrameRecord(**_record("s3_0", "3"))])
    result = filter_empty_frames(manifest, {"s3_0": np.zeros((4, 4))})
    assert result.removed == 0
    assert result.manifest.counts()["3"] == 1


def test_filter_all_empty():
    manifest = DatasetManifest(frames=[FrameRecord(**_record(f"t{i}", "train")) for i in range(3)])
    result = filter_empty_frames(manifest, lambda record: np.zeros((4, 4)))
    assert result.status == "empty"
    assert result.removed == 3
    assert result.manifest.counts()["train"] == 0


def test_split_after_filtering():
    filtered = filter_empty_frames(_challenge_manifest(), _challenge_annotations).manifest
    train, val = split_train_val(filtered, 0.85, seed=0)
    assert (len(train.frames), len(val.frames)) == (4239, 748)
    ids = {r.frame_id for r in train.frames} | {r.frame_id for r in val.frames}
    assert len(ids) == 4987


def test_split_is_deterministic_and_seeded():
    manifest = DatasetManifest(frames=[FrameRecord(**_record(f"t{i}", "train")) for i in range(40)])
    first = [r.frame_id for r in split_train_val(manifest, 0.5, seed=3)[0].frames]
    again = [r.frame_id for r in split_train_val(manifest, 0.5, seed=3)[0].frames]
    other = [r.frame_id for r in split_train_val(manifest, 0.5, seed=4)[0].frames]
    assert first == again
    assert first != other


def test_split_single_frame():
    manifest = DatasetManifest(frames=[FrameRecord(**_record("t0", "train"))])
    train, val = split_train_val(manifest, 0.85)
    assert (len(train.frames), len(val.frames)) == (1, 0)


def test_split_preconditions():
    with pytest.raises(ContractViolation):
        split_train_val(DatasetManifest(), 0.85)
    manifest = DatasetManifest(frames=[FrameRecord(**_record("t0", "train"))])
    with pytest.raises(ContractViolation):
        split_train_val(manifest, 1.0)


# Augmentation

def _square_scene(size=16):
    labels = np.zeros((size, size), dtype=np.int64)
    labels[4:8, 2:6] = 1
    rgb = np.zeros((size, size, 3), dtype=np.uint8)
    rgb[labels == 1] = 200
    return rgb, labels


def test_identity_augmentation_is_a_no_op(rng):
    rgb = rng.integers(0, 256, (12, 10, 3), dtype=np.uint8)
    labels = np.zeros((12, 10), dtype=np.int64)
    labels[3:6, 2:9] = 1
    image, out = augment(rgb, labels, AugmentationConfig.identity(), rng)
    assert np.array_equal(image, rgb)
    assert np.array_equal(out, labels)


def test_mirror_flips_image_and_labels(rng):
    rgb, labels = _square_scene()
    cfg = AugmentationConfig.identity().model_copy(update={"mirror_probability": 1.0})
    image, out = augment(rgb, labels, cfg, rng)
    assert np.array_equal(out, labels[:, ::-1])
    assert np.array_equal(image, rgb[:, ::-1])


def test_scaling_grows_instance_area(rng):
    rgb, labels = _square_scene()
    cfg = AugmentationConfig.identity().model_copy(update={"scale_range": (2.0, 2.0)})
    image, out = augment(rgb, labels, cfg, rng)
    assert out.shape == (32, 32) and image.shape == (32, 32, 3)
    assert abs((out == 1).sum() / (labels == 1).sum() - 4.0) <= 0.4
    assert set(np.unique(out)) == {0, 1}


def test_crop_keeps_an_instance(rng):
    rgb, labels = _square_scene()
    cfg = AugmentationConfig.identity().model_copy(update={"crop_range": (0.5, 0.5)})
    for _ in range(10):
        _, out = augment(rgb, labels, cfg, rng)
        assert out.shape == (8, 8)
        assert out.any()


def test_photometric_leaves_labels_alone(rng):
    rgb, labels = _square_scene()
    cfg = AugmentationConfig(scale_range=(1.0, 1.0), crop_range=(1.0, 1.0), mirror_probability=0.0)
    _, out = augment(rgb, labels, cfg, rng)
    assert np.array_equal(out, labels)


def test_augmentation_config_rejects_empty_range():
    with pytest.raises(ValueError):
        AugmentationConfig(scale_range=(1.5, 1.0))


# Label maps

def test_labelmap_round_trip(tmp_path):
    labels = np.array([[0, 1, 1], [2, 0, 0]])
    write_labelmap(labels, tmp_path / "a.png")
    assert np.array_equal(read_labelmap(tmp_path / "a.png"), labels)


def test_labelmap_remaps_non_contiguous(tmp_path):
    write_labelmap(np.array([[0, 1], [3, 3]]), tmp_path / "gap.png")
    labels = read_labelmap(tmp_path / "gap.png")
    assert np.array_equal(labels, np.array([[0, 1], [2, 2]]))


def test_labelmap_too_many_instances(tmp_path):
    with pytest.raises(LabelMapError):
        write_labelmap(np.array([[0, 256]]), tmp_path / "big.png")


def test_labelmap_missing_file(tmp_path):
    with pytest.raises(LabelMapError):
        read_labelmap(tmp_path / "absent.png")


# Synthetic corpus

def test_synth_empty_corpus(tmp_path):
    manifest = synth_generate("2", 0, seed=1, out_dir=tmp_path / "empty", image_size=32)
    assert manifest.frames == []
    assert load_manifest(tmp_path / "empty" / "manifest.json").counts()["2"] == 0


def test_synth_rejects_unknown_stage(tmp_path):
    with pytest.raises(ContractViolation):
        synth_generate("4", 1, seed=1, out_dir=tmp_path)


def test_synth_is_reproducible():
    first = render_frame("3", seed=9, index=4, image_size=48)
    again = render_frame("3", seed=9, index=4, image_size=48)
    assert np.array_equal(first.image, again.image)
    assert np.array_equal(first.labels, again.labels)
    assert first.nuisance_tags == again.nuisance_tags


def test_synth_labels_are_contiguous():
    for frame in render_stage("1", 12, seed=2, image_size=48):
        assert set(np.unique(frame.labels)) == set(range(int(frame.labels.max()) + 1))


def test_synth_corpus_files(corpus):
    out, manifest = corpus
    assert len(manifest.frames) == 6
    record = manifest.frames[0]
    assert record.frame_id == "s1_00000"
    labels = read_labelmap(out / record.annotation_path)
    assert labels.shape == (64, 64)
    assert int(labels.max()) == record.instrument_count


def test_stage_three_shifts_the_distribution():
    early = corpus_statistics(render_stage("1", 10, seed=0, image_size=48))
    late = corpus_statistics(render_stage("3", 10, seed=0, image_size=48))
    assert set(early["shape_families"]) <= {"capsule"}
    assert set(late["shape_families"]) <= {"tapered", "forked"}
    assert early["mean_background_intensity"] != late["mean_background_intensity"]


def test_held_out_procedure():
    procedures = {frame.procedure for frame in render_stage("3", 5, seed=1, image_size=32)}
    assert procedures == {"sigmoid_resection"}


def test_synth_sequence():
    frames = synth_sequence(5, seed=3, image_size=48)
    assert len(frames) == 5
    assert all(frame.labels.max() >= 1 for frame in frames)
    assert not np.array_equal(frames[0].labels, frames[4].labels)
    with pytest.raises(ContractViolation):
        synth_sequence(0, seed=3)
