"""Training loops and checkpoints for the local and global stages."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from mugak.core.config import PipelineConfig
from mugak.core.datamodel import AnnotatedVideo
from mugak.core.dataset import HandoffRecord, VideoRecord, level_channels
from mugak.core.ddmnet import DDMNet, balanced_local_loss, label_frame
from mugak.core.decoder import BoundaryDecoder, batch_set_prediction_loss, boundary_attentive
from mugak.core.errors import DivergenceError, InvalidInputError, TensorFileError
from mugak.core.sampling import (
    extract_clip,
    make_windows,
    pad_window,
    sample_frames,
    window_ground_truth,
)
from mugak.core.tensorio import read_tensors, write_tensors
from mugak.core.telemetry import log_event, logger


def configure_torch(seed: int, num_threads: int = 1) -> None:
    """Seed torch and pin the numeric mode used for reproducible runs."""
    torch.manual_seed(seed)
    torch.set_num_threads(num_threads)
    torch.use_deterministic_algorithms(True, warn_only=True)


@dataclass(frozen=True)
class LocalSample:
    video: int
    center: int
    time: float
    label: int


@dataclass(frozen=True)
class DecoderWindow:
    """One padded window of boundary-attentive features and its normalized targets."""

    video_id: str
    memory: np.ndarray
    targets: List[float]
    origin: float
    span: float


@dataclass
class TrainingResult:
    model: nn.Module
    epoch_losses: List[float] = field(default_factory=list)
    steps: int = 0


def _check_loss(loss: torch.Tensor, stage: str, epoch: int, step: int, lr: float) -> None:
    if not torch.isfinite(loss):
        raise DivergenceError(
            f"{stage} stage diverged at epoch {epoch} step {step} (lr={lr}): loss={loss.item()}"
        )


def _epoch_order(count: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(count)


def local_samples(records: Sequence[VideoRecord], cfg: PipelineConfig) -> List[LocalSample]:
    """Every sampled frame of every video, labelled against its ground truth."""
    samples: List[LocalSample] = []
    for index, record in enumerate(records):
        for center in sample_frames(record.frame_count, cfg.eval_stride):
            time = center / cfg.fps
            samples.append(
                LocalSample(
                    video=index,
                    center=center,
                    time=time,
                    label=label_frame(time, record.annotation, cfg.positive_radius),
                )
            )
    return samples


def local_batch(
    records: Sequence[VideoRecord],
    samples: Sequence[LocalSample],
    cfg: PipelineConfig,
    dtype: torch.dtype = torch.float32,
) -> Tuple[List[torch.Tensor], torch.Tensor]:
    """Stack clips of ``samples`` into m tensors (B, T, C_l) plus labels (B,)."""
    per_level: List[List[np.ndarray]] = [[] for _ in records[samples[0].video].pooled]
    for sample in samples:
        record = records[sample.video]
        indices = extract_clip(sample.center, cfg.w, cfg.s, record.frame_count)
        for level, pooled in enumerate(record.pooled):
            per_level[level].append(pooled[indices])
    clips = [torch.as_tensor(np.stack(level)).to(dtype) for level in per_level]
    labels = torch.as_tensor([s.label for s in samples], dtype=dtype)
    return clips, labels


def local_step(
    model: DDMNet,
    optimizer: torch.optim.Optimizer,
    clips: Sequence[torch.Tensor],
    labels: torch.Tensor,
    epoch: int = 0,
    step: int = 0,
) -> float:
    """One optimizer step on a batch; returns the loss before the update."""
    optimizer.zero_grad()
    loss = balanced_local_loss(model(clips).confidence, labels)
    _check_loss(loss, "local", epoch, step, optimizer.param_groups[0]["lr"])
    loss.backward()
    optimizer.step()
    return float(loss.item())


def train_local(
    records: Sequence[VideoRecord], cfg: PipelineConfig, model: Optional[DDMNet] = None
) -> TrainingResult:
    """Train the local context model on every sampled frame of ``records``."""
    channels = level_channels(records)
    configure_torch(cfg.seed, cfg.num_threads)
    model = model or DDMNet.from_config(cfg, channels)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr_local)
    samples = local_samples(records, cfg)
    positives = sum(s.label for s in samples)
    logger.info(
        f"Training local stage on {len(samples)} frames ({positives} positive) "
        f"for {cfg.epochs_local} epochs"
    )

    result = TrainingResult(model=model)
    model.train()
    for epoch in range(cfg.epochs_local):
        order = _epoch_order(len(samples), cfg.seed, epoch)
        losses = []
        for step, start in enumerate(range(0, len(order), cfg.batch_local)):
            batch = [samples[i] for i in order[start : start + cfg.batch_local]]
            clips, labels = local_batch(records, batch, cfg)
            loss = local_step(model, optimizer, clips, labels, epoch, step)
            logger.debug(f"local epoch {epoch} step {step}: loss {loss:.6f}")
            losses.append(loss)
            result.steps += 1
        mean_loss = float(np.mean(losses)) if losses else math.nan
        result.epoch_losses.append(mean_loss)
        log_event("local_epoch", {"epoch": epoch, "loss": mean_loss, "steps": len(losses)})
    model.eval()
    return result


def video_windows(
    handoff: HandoffRecord, annotation: Optional[AnnotatedVideo], cfg: PipelineConfig
) -> List[DecoderWindow]:
    """Cut one video's boundary-attentive sequence into padded decoder windows."""
    memory = boundary_attentive(handoff.representations, handoff.confidences).numpy()
    interval = cfg.sample_interval
    span = cfg.window_len * interval
    windows = []
    for start, effective in make_windows(
        memory.shape[0], cfg.window_len, cfg.resolved_window_stride
    ):
        origin = float(handoff.timestamps[start]) - interval / 2
        targets: List[float] = []
        if annotation is not None:
            targets = window_ground_truth(
                annotation.boundaries, origin, span, effective * interval
            )
        windows.append(
            DecoderWindow(
                video_id=handoff.video_id,
                memory=pad_window(memory, start, effective, cfg.window_len),
                targets=targets,
                origin=origin,
                span=span,
            )
        )
    return windows


def training_windows(
    handoffs: Mapping[str, HandoffRecord],
    annotations: Sequence[AnnotatedVideo],
    cfg: PipelineConfig,
) -> List[DecoderWindow]:
    """Windows of every annotated video, minus those holding more boundaries than queries."""
    windows = []
    for video in annotations:
        for window in video_windows(handoffs[video.id], video, cfg):
            if len(window.targets) > cfg.num_queries:
                log_event(
                    "window_skipped",
                    {
                        "video_id": video.id,
                        "origin": window.origin,
                        "boundaries": len(window.targets),
                        "num_queries": cfg.num_queries,
                    },
                    level=logging.WARNING,
                )
                continue
            windows.append(window)
    return windows


def decoder_step(
    model: BoundaryDecoder,
    optimizer: torch.optim.Optimizer,
    windows: Sequence[DecoderWindow],
    cfg: PipelineConfig,
    epoch: int = 0,
    step: int = 0,
) -> float:
    """One optimizer step on a batch of windows; returns the loss before the update."""
    dtype = next(model.parameters()).dtype
    memory = torch.as_tensor(np.stack([w.memory for w in windows])).to(dtype)
    optimizer.zero_grad()
    loss = batch_set_prediction_loss(
        model(memory), [w.targets for w in windows], cfg.lambda_loc, cfg.lambda_cls
    )
    _check_loss(loss, "decoder", epoch, step, optimizer.param_groups[0]["lr"])
    loss.backward()
    optimizer.step()
    return float(loss.item())


def train_decoder(
    handoffs: Mapping[str, HandoffRecord],
    annotations: Sequence[AnnotatedVideo],
    cfg: PipelineConfig,
    model: Optional[BoundaryDecoder] = None,
) -> TrainingResult:
    """Train the boundary decoder with the set prediction loss."""
    windows = training_windows(handoffs, annotations, cfg)
    if not windows:
        raise InvalidInputError("no decoder training windows")
    width = windows[0].memory.shape[1]
    if width != cfg.feature_dim:
        raise InvalidInputError(f"representations have width {width}, expected {cfg.feature_dim}")

    configure_torch(cfg.seed, cfg.num_threads)
    model = model or BoundaryDecoder.from_config(cfg)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.lr_decoder, weight_decay=cfg.weight_decay
    )
    logger.info(f"Training decoder on {len(windows)} windows for {cfg.epochs_decoder} epochs")

    result = TrainingResult(model=model)
    model.train()
    for epoch in range(cfg.epochs_decoder):
        order = _epoch_order(len(windows), cfg.seed, epoch)
        losses = []
        for step, start in enumerate(range(0, len(order), cfg.batch_decoder)):
            batch = [windows[i] for i in order[start : start + cfg.batch_decoder]]
            loss = decoder_step(model, optimizer, batch, cfg, epoch, step)
            logger.debug(f"decoder epoch {epoch} step {step}: loss {loss:.6f}")
            losses.append(loss)
            result.steps += 1
        mean_loss = float(np.mean(losses)) if losses else math.nan
        result.epoch_losses.append(mean_loss)
        log_event("decoder_epoch", {"epoch": epoch, "loss": mean_loss, "steps": len(losses)})
    model.eval()
    return result


def save_checkpoint(
    model: nn.Module,
    path: Path,
    stage: str,
    cfg: PipelineConfig,
    extra: Optional[Mapping[str, Any]] = None,
) -> Path:
    """Write the model's state dict and the config snapshot to a tensor container."""
    arrays = {name: t.detach().cpu().numpy() for name, t in model.state_dict().items()}
    meta: Dict[str, Any] = {"stage": stage, "config": cfg.snapshot(), **(extra or {})}
    write_tensors(Path(path), arrays, meta)
    logger.info(f"Saved {stage} checkpoint to {path}")
    return Path(path)


def _read_checkpoint(path: Path, stage: str) -> Tuple[Dict[str, torch.Tensor], Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing {stage} checkpoint {path}")
    arrays, meta = read_tensors(path)
    if meta.get("stage") != stage:
        raise TensorFileError(f"{path} is a {meta.get('stage')!r} checkpoint, not {stage!r}")
    return {name: torch.as_tensor(np.array(a)) for name, a in arrays.items()}, meta


def checkpoint_config(path: Path, stage: str) -> PipelineConfig:
    """Config snapshot a checkpoint was trained with."""
    _, meta = _read_checkpoint(path, stage)
    return PipelineConfig.model_validate(meta["config"])


def load_local_checkpoint(path: Path) -> Tuple[DDMNet, PipelineConfig]:
    state, meta = _read_checkpoint(path, "local")
    cfg = PipelineConfig.model_validate(meta["config"])
    model = DDMNet.from_config(cfg, meta["level_channels"])
    model.load_state_dict(state)
    model.eval()
    return model, cfg


def load_decoder_checkpoint(path: Path) -> Tuple[BoundaryDecoder, PipelineConfig]:
    state, meta = _read_checkpoint(path, "decoder")
    cfg = PipelineConfig.model_validate(meta["config"])
    model = BoundaryDecoder.from_config(cfg)
    model.load_state_dict(state)
    model.eval()
    return model, cfg
