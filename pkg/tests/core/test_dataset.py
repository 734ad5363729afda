"""Tests for split loading and handoff files."""

import numpy as np
import pytest

from mugak.core.datamodel import AnnotatedVideo, write_annotations
from mugak.core.dataset import (
    HandoffRecord,
    load_handoff,
    load_handoffs,
    load_split,
    load_video,
    write_handoff,
)
from mugak.core.errors import InvalidInputError, TensorFileError
from mugak.core.synthgen import DatasetSpec, pyramid_shapes, write_dataset
from mugak.core.tensorio import write_tensors


def test_load_split_pools_levels(tmp_path):
    distribution = DatasetSpec(pyramid=pyramid_shapes(2), duration_range=(4.0, 4.5))
    annotations = write_dataset(2, distribution, 5, tmp_path, max_workers=2)
    records = load_split(tmp_path, max_workers=2)
    assert [r.video_id for r in records] == [a.id for a in annotations]
    assert records[0].level_channels == [8, 16]
    assert records[0].frame_count == annotations[0].frame_count


def test_load_split_duplicate_ids(tmp_path):
    video = AnnotatedVideo(id="v", duration=4.0, fps=30, boundaries=[])
    write_annotations([video, video], tmp_path / "annotations.json")
    with pytest.raises(InvalidInputError):
        load_split(tmp_path)


def test_load_video_missing_features(tmp_path):
    video = AnnotatedVideo(id="v", duration=4.0, fps=30, boundaries=[])
    with pytest.raises(FileNotFoundError):
        load_video(video, tmp_path)


def test_handoff_write_load(tmp_path):
    record = HandoffRecord(
        video_id="v",
        timestamps=np.array([0.05, 0.15, 0.25]),
        confidences=np.array([0.1, 0.8, 0.2], dtype=np.float32),
        representations=np.ones((3, 4), dtype=np.float32),
    )
    write_handoff(record, tmp_path)
    loaded = load_handoff(tmp_path / "v.mtz")
    assert loaded.video_id == "v"
    assert np.array_equal(loaded.timestamps, record.timestamps)
    track = loaded.track()
    assert track.confidences == pytest.approx([0.1, 0.8, 0.2])


def test_handoff_missing_array(tmp_path):
    write_tensors(tmp_path / "v.mtz", {"timestamps": np.zeros(2)}, {"video_id": "v"})
    with pytest.raises(TensorFileError):
        load_handoff(tmp_path / "v.mtz")


def test_load_handoffs_missing_file(tmp_path):
    video = AnnotatedVideo(id="absent", duration=4.0, fps=30, boundaries=[])
    with pytest.raises(FileNotFoundError):
        load_handoffs(tmp_path, [video])
