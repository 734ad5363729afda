"""Deterministic synthetic feature-pyramid videos with known boundaries.

Each video is a sequence of segments. Inside a segment every pyramid level
holds a latent vector that drifts linearly in time; at a junction the latent
jumps according to the change kind:

* ``low_level``  - only level 0 statistics shift (brightness/environment)
* ``high_level`` - the top-level latent is resampled (semantic change)
* ``speed``      - only the drift rate changes

A frame's level-l map is ``latent_l[c] + pattern_l[h, w, c] + noise`` where
the fixed spatial pattern has zero mean over (h, w), so spatial pooling of a
noiseless frame returns the latent exactly.
"""

import concurrent.futures
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from mugak.core.datamodel import AnnotatedVideo, write_annotations
from mugak.core.tensorio import read_tensors, write_tensors
from mugak.core.telemetry import log_event, logger

MIN_SEGMENT_SECONDS = 1.0
SEPARABILITY_FACTOR = 10.0

PyramidShape = Tuple[int, int, int]


class ChangeKind(str, Enum):
    LOW_LEVEL = "low_level"
    HIGH_LEVEL = "high_level"
    SPEED = "speed"


def pyramid_shapes(m: int) -> List[PyramidShape]:
    """Backbone-like (H, W, C) per level: resolution halves, channels double."""
    if m < 1:
        raise ValueError("m must be >= 1")
    shapes: List[PyramidShape] = []
    for level in range(m):
        side = max(1, 16 >> level)
        shapes.append((side, side, 8 << level))
    return shapes


class SyntheticVideoSpec(BaseModel):
    """Parameters of one synthetic video."""

    model_config = ConfigDict(frozen=True)

    video_id: str = "synthetic"
    segment_count: int = Field(1, ge=1)
    duration_range: Tuple[float, float] = (4.0, 10.0)
    fps: float = 30.0
    drift_rate_range: Tuple[float, float] = (0.0, 0.3)
    noise_sigma: float = Field(0.05, ge=0.0)
    change_kinds: Optional[List[ChangeKind]] = None
    change_kind_weights: Tuple[float, float, float] = (0.3, 0.6, 0.1)
    min_jump: float = Field(2.0, ge=0.0)
    pyramid: List[PyramidShape] = Field(default_factory=lambda: pyramid_shapes(3))
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "SyntheticVideoSpec":
        low, high = self.duration_range
        if not (0 < low <= high):
            raise ValueError(f"duration_range {self.duration_range} is empty")
        if not self.fps > 0:
            raise ValueError("fps must be > 0")
        if high < self.segment_count * MIN_SEGMENT_SECONDS:
            raise ValueError(
                f"duration_range cannot fit {self.segment_count} segments of "
                f"{MIN_SEGMENT_SECONDS}s"
            )
        r_low, r_high = self.drift_rate_range
        if not (0 <= r_low <= r_high):
            raise ValueError("drift_rate_range must satisfy 0 <= min <= max")
        if self.change_kinds is not None and len(self.change_kinds) != self.segment_count - 1:
            raise ValueError("change_kinds needs exactly segment_count - 1 entries")
        if not self.pyramid:
            raise ValueError("pyramid must have at least one level")
        for (h0, w0, c0), (h1, w1, c1) in zip(self.pyramid, self.pyramid[1:]):
            if not (h1 < h0 and w1 < w0 and c1 > c0):
                raise ValueError("pyramid levels must shrink spatially and grow in channels")
        return self


class SyntheticVideo(BaseModel):
    """Annotation plus per-level feature maps of shape (frames, H_l, W_l, C_l)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    annotation: AnnotatedVideo
    frames: List[np.ndarray]
    change_kinds: List[ChangeKind] = Field(default_factory=list)

    @property
    def frame_count(self) -> int:
        return int(self.frames[0].shape[0])


class DatasetSpec(BaseModel):
    """Distribution that per-video specs are drawn from."""

    model_config = ConfigDict(frozen=True)

    segment_count_range: Tuple[int, int] = (1, 5)
    duration_range: Tuple[float, float] = (4.0, 10.0)
    fps: float = 30.0
    drift_rate_range: Tuple[float, float] = (0.0, 0.3)
    noise_sigma: float = 0.05
    change_kind_weights: Tuple[float, float, float] = (0.3, 0.6, 0.1)
    min_jump: float = 2.0
    pyramid: List[PyramidShape] = Field(default_factory=lambda: pyramid_shapes(3))
    id_prefix: str = "vid"

    def draw(self, index: int, rng: np.random.Generator, seed: int) -> SyntheticVideoSpec:
        low, high = self.segment_count_range
        max_fit = max(1, int(self.duration_range[1] // MIN_SEGMENT_SECONDS))
        segment_count = int(rng.integers(low, min(high, max_fit) + 1))
        return SyntheticVideoSpec(
            video_id=f"{self.id_prefix}_{index:05d}",
            segment_count=segment_count,
            duration_range=self.duration_range,
            fps=self.fps,
            drift_rate_range=self.drift_rate_range,
            noise_sigma=self.noise_sigma,
            change_kind_weights=self.change_kind_weights,
            min_jump=self.min_jump,
            pyramid=self.pyramid,
            seed=seed,
        )


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else np.eye(dim)[0]


def _jump(
    rng: np.random.Generator, current: np.ndarray, floor: float, resample: bool
) -> np.ndarray:
    """New latent at least ``floor`` away from ``current``."""
    if resample:
        proposal = rng.standard_normal(current.shape[0]) * 2.0
    else:
        proposal = current + _unit(rng, current.shape[0]) * floor * rng.uniform(1.0, 1.5)
    delta = proposal - current
    norm = np.linalg.norm(delta)
    if norm < floor:
        direction = delta / norm if norm > 0 else _unit(rng, current.shape[0])
        proposal = current + direction * floor
    return proposal


def _segment_edges(rng: np.random.Generator, duration: float, count: int) -> np.ndarray:
    slack = duration - count * MIN_SEGMENT_SECONDS
    shares = rng.dirichlet(np.ones(count)) if count > 1 else np.ones(1)
    lengths = MIN_SEGMENT_SECONDS + slack * shares
    return np.concatenate([[0.0], np.cumsum(lengths)[:-1]])


def generate(spec: SyntheticVideoSpec) -> SyntheticVideo:
    """Generate one video; identical specs give bit-identical outputs."""
    rng = np.random.default_rng(spec.seed)
    levels = len(spec.pyramid)
    top = levels - 1

    duration = float(rng.uniform(*spec.duration_range))
    duration = max(duration, spec.segment_count * MIN_SEGMENT_SECONDS)
    starts = _segment_edges(rng, duration, spec.segment_count)
    boundaries = [float(b) for b in starts[1:]]

    if spec.change_kinds is not None:
        kinds = list(spec.change_kinds)
    else:
        weights = np.asarray(spec.change_kind_weights, dtype=np.float64)
        choices = list(ChangeKind)
        picks = rng.choice(len(choices), size=spec.segment_count - 1, p=weights / weights.sum())
        kinds = [choices[int(i)] for i in picks]

    r_low, r_high = spec.drift_rate_range
    # a jump must dominate any within-segment frame-to-frame drift
    floor = max(spec.min_jump, (SEPARABILITY_FACTOR + 1.0) * r_high / spec.fps)

    # per-segment state: base latent per level, drift direction per level, rate
    bases: List[List[np.ndarray]] = [[rng.standard_normal(c) for (_, _, c) in spec.pyramid]]
    directions: List[List[np.ndarray]] = [[_unit(rng, c) for (_, _, c) in spec.pyramid]]
    rates: List[float] = [float(rng.uniform(r_low, r_high))]
    for k, kind in enumerate(kinds):
        span = starts[k + 1] - starts[k]
        carried = [
            bases[k][lvl] + rates[k] * span * directions[k][lvl] for lvl in range(levels)
        ]
        rate = rates[k]
        if kind is ChangeKind.LOW_LEVEL:
            carried[0] = _jump(rng, carried[0], floor, resample=False)
        elif kind is ChangeKind.HIGH_LEVEL:
            carried[top] = _jump(rng, carried[top], floor, resample=True)
        elif r_high > r_low:
            # the new rate differs from the old one by at least a quarter of the range
            quarter = 0.25 * (r_high - r_low)
            if rate <= 0.5 * (r_low + r_high):
                rate = float(rng.uniform(rate + quarter, r_high))
            else:
                rate = float(rng.uniform(r_low, rate - quarter))
        bases.append(carried)
        directions.append([d.copy() for d in directions[k]])
        rates.append(rate)

    patterns = []
    for h, w, c in spec.pyramid:
        pattern = rng.standard_normal((h, w, c)) * 0.5
        patterns.append(pattern - pattern.mean(axis=(0, 1), keepdims=True))

    frame_count = max(1, int(round(duration * spec.fps)))
    times = np.arange(frame_count) / spec.fps
    segment_of = np.searchsorted(starts, times, side="right") - 1

    frames: List[np.ndarray] = []
    for lvl, (h, w, c) in enumerate(spec.pyramid):
        latent = np.empty((frame_count, c))
        for k in range(spec.segment_count):
            mask = segment_of == k
            elapsed = (times[mask] - starts[k])[:, None]
            latent[mask] = bases[k][lvl] + rates[k] * elapsed * directions[k][lvl]
        maps = latent[:, None, None, :] + patterns[lvl][None]
        if spec.noise_sigma > 0:
            maps = maps + rng.standard_normal(maps.shape) * spec.noise_sigma
        frames.append(maps.astype(np.float32))

    annotation = AnnotatedVideo(
        id=spec.video_id, duration=duration, frame_rate=spec.fps, boundaries=boundaries
    )
    return SyntheticVideo(annotation=annotation, frames=frames, change_kinds=kinds)


def write_video(video: SyntheticVideo, features_dir: Path) -> Path:
    """Write the feature file ``<features_dir>/<id>.mtz``."""
    path = Path(features_dir) / f"{video.annotation.id}.mtz"
    arrays = {f"level_{i}": maps for i, maps in enumerate(video.frames)}
    meta = {
        "video_id": video.annotation.id,
        "fps": video.annotation.frame_rate,
        "duration": video.annotation.duration,
        "change_kinds": [k.value for k in video.change_kinds],
    }
    write_tensors(path, arrays, meta)
    return path


def load_video_features(path: Path) -> List[np.ndarray]:
    """Per-level (frames, H, W, C) float32 arrays of a feature file."""
    arrays, _ = read_tensors(path)
    return [arrays[f"level_{i}"] for i in range(len(arrays))]


def _draw_specs(count: int, distribution: DatasetSpec, seed: int) -> List[SyntheticVideoSpec]:
    if count < 1:
        raise ValueError("count must be >= 1")
    root = np.random.SeedSequence(seed)
    specs: List[SyntheticVideoSpec] = []
    for index, child in enumerate(root.spawn(count)):
        video_seed = int(child.generate_state(1, dtype=np.uint32)[0])
        spec_rng = np.random.default_rng(child.spawn(1)[0])
        specs.append(distribution.draw(index, spec_rng, video_seed))
    return specs


def _log_dataset(count: int, seed: int, annotations: List[AnnotatedVideo]) -> None:
    log_event(
        "dataset_generated",
        {"count": count, "seed": seed, "boundaries": sum(len(a.boundaries) for a in annotations)},
    )


def generate_dataset(
    count: int, distribution: DatasetSpec, seed: int, max_workers: int = 1
) -> List[SyntheticVideo]:
    """Generate ``count`` videos with distinct ids, kept in memory."""
    specs = _draw_specs(count, distribution, seed)
    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as pool:
        videos = list(pool.map(generate, specs))
    _log_dataset(count, seed, [v.annotation for v in videos])
    return videos


def write_dataset(
    count: int, distribution: DatasetSpec, seed: int, out_dir: Path, max_workers: int = 1
) -> List[AnnotatedVideo]:
    """Generate the same videos as ``generate_dataset`` straight to disk.

    Writes ``out_dir/annotations.json`` plus one feature file per video under
    ``out_dir/features``; frames are dropped once written.
    """
    out_dir = Path(out_dir)
    features_dir = out_dir / "features"

    def produce(spec: SyntheticVideoSpec) -> AnnotatedVideo:
        video = generate(spec)
        write_video(video, features_dir)
        return video.annotation

    specs = _draw_specs(count, distribution, seed)
    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as pool:
        annotations = list(pool.map(produce, specs))
    write_annotations(annotations, out_dir / "annotations.json")
    logger.info(f"Wrote {count} synthetic videos to {out_dir}")
    _log_dataset(count, seed, annotations)
    return annotations


def boundary_jump_norms(video: SyntheticVideo, level: int) -> Tuple[np.ndarray, float]:
    """Pooled level feature jump at each boundary and max within-segment step.

    Used to check the separability floor of noiseless videos.
    """
    pooled = video.frames[level].mean(axis=(1, 2)).astype(np.float64)
    times = np.arange(pooled.shape[0]) / video.annotation.frame_rate
    segment_of = np.searchsorted(np.asarray(video.annotation.boundaries), times, side="right")
    steps = np.linalg.norm(np.diff(pooled, axis=0), axis=1)
    boundary_steps = set(np.flatnonzero(np.diff(segment_of)).tolist())
    jumps = np.array([steps[i] for i in sorted(boundary_steps)])
    within = [steps[i] for i in range(steps.shape[0]) if i not in boundary_steps]
    return jumps, float(max(within)) if within else 0.0

