"""Loading dataset splits and the stage-2 handoff files."""

import concurrent.futures
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from mugak.core.datamodel import AnnotatedVideo, load_annotations
from mugak.core.ddmnet import BoundaryConfidenceTrack
from mugak.core.errors import InvalidInputError, TensorFileError
from mugak.core.featbank import pool_frames
from mugak.core.synthgen import load_video_features
from mugak.core.tensorio import read_tensors, write_tensors
from mugak.core.telemetry import logger


@dataclass(frozen=True)
class VideoRecord:
    """An annotated video with its spatially pooled feature levels, each (frames, C_l)."""

    annotation: AnnotatedVideo
    pooled: List[np.ndarray]

    @property
    def video_id(self) -> str:
        return self.annotation.id

    @property
    def frame_count(self) -> int:
        return int(self.pooled[0].shape[0])

    @property
    def level_channels(self) -> List[int]:
        return [int(level.shape[1]) for level in self.pooled]


@dataclass(frozen=True)
class HandoffRecord:
    """Local-stage output for one video: one row per sampled frame."""

    video_id: str
    timestamps: np.ndarray
    confidences: np.ndarray
    representations: np.ndarray

    def track(self) -> BoundaryConfidenceTrack:
        return BoundaryConfidenceTrack(
            video_id=self.video_id,
            timestamps=self.timestamps.tolist(),
            confidences=self.confidences.tolist(),
        )


def _check_unique(annotations: Sequence[AnnotatedVideo]) -> None:
    seen = set()
    for video in annotations:
        if video.id in seen:
            raise InvalidInputError(f"duplicate video id {video.id!r}")
        seen.add(video.id)


def load_video(annotation: AnnotatedVideo, features_dir: Path) -> VideoRecord:
    path = Path(features_dir) / f"{annotation.id}.mtz"
    if not path.exists():
        raise FileNotFoundError(f"missing feature file {path}")
    pooled = pool_frames(load_video_features(path))
    return VideoRecord(annotation=annotation, pooled=pooled)


def load_split(split_dir: Path, max_workers: int = 1) -> List[VideoRecord]:
    """Annotations plus pooled features of every video in ``split_dir``."""
    split_dir = Path(split_dir)
    annotations = load_annotations(split_dir / "annotations.json")
    _check_unique(annotations)
    features_dir = split_dir / "features"
    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as pool:
        records = list(pool.map(lambda a: load_video(a, features_dir), annotations))
    logger.debug(f"Loaded {len(records)} videos from {split_dir}")
    return records


def level_channels(records: Sequence[VideoRecord]) -> List[int]:
    """Channel widths shared by every record."""
    if not records:
        raise InvalidInputError("dataset is empty")
    channels = records[0].level_channels
    for record in records[1:]:
        if record.level_channels != channels:
            raise InvalidInputError(
                f"{record.video_id} has levels {record.level_channels}, expected {channels}"
            )
    return channels


def handoff_path(handoff_dir: Path, video_id: str) -> Path:
    return Path(handoff_dir) / f"{video_id}.mtz"


def write_handoff(record: HandoffRecord, handoff_dir: Path) -> Path:
    path = handoff_path(handoff_dir, record.video_id)
    write_tensors(
        path,
        {
            "timestamps": record.timestamps.astype(np.float64),
            "confidences": record.confidences.astype(np.float32),
            "representations": record.representations.astype(np.float32),
        },
        {"video_id": record.video_id},
    )
    return path


def load_handoff(path: Path) -> HandoffRecord:
    arrays, meta = read_tensors(path)
    try:
        return HandoffRecord(
            video_id=meta["video_id"],
            timestamps=arrays["timestamps"],
            confidences=arrays["confidences"],
            representations=arrays["representations"],
        )
    except KeyError as e:
        raise TensorFileError(f"{path}: handoff file lacks {e}") from e


def load_handoffs(
    handoff_dir: Path, annotations: Sequence[AnnotatedVideo]
) -> Dict[str, HandoffRecord]:
    """Handoff records keyed by video id, in annotation order."""
    records: Dict[str, HandoffRecord] = {}
    for video in annotations:
        path = handoff_path(handoff_dir, video.id)
        if not path.exists():
            raise FileNotFoundError(f"missing handoff file {path}")
        records[video.id] = load_handoff(path)
    return records
