"""End-to-end orchestration of the four stages over a working directory."""

import concurrent.futures
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from mugak.core.config import PipelineConfig
from mugak.core.datamodel import (
    AnnotatedVideo,
    BoundaryPrediction,
    EvalReport,
    load_annotations,
    write_predictions,
    write_report,
)
from mugak.core.dataset import (
    HandoffRecord,
    VideoRecord,
    handoff_path,
    level_channels,
    load_handoffs,
    load_split,
    write_handoff,
)
from mugak.core.ddmnet import DDMNet, clip_batch, extract_boundaries
from mugak.core.decoder import BoundaryDecoder, decode_window, emit_predictions
from mugak.core.errors import ConfigError, InvalidInputError, StageOrderError
from mugak.core.evaluator import evaluate_files
from mugak.core.manifest import RunManifest, WorkdirLayout
from mugak.core.sampling import clip_index_matrix, sample_frames
from mugak.core.synthgen import DatasetSpec, pyramid_shapes, write_dataset
from mugak.core.telemetry import log_event, logger
from mugak.core.training import (
    checkpoint_config,
    configure_torch,
    load_decoder_checkpoint,
    load_local_checkpoint,
    save_checkpoint,
    train_decoder,
    train_local,
    video_windows,
)

FEATURIZE_BATCH = 64
LOCAL_ONLY_SUFFIX = "_local"


def _finish(
    layout: WorkdirLayout,
    stage: str,
    started: float,
    split: Optional[str] = None,
    checkpoint: Optional[Path] = None,
    seed: Optional[int] = None,
) -> None:
    seconds = time.perf_counter() - started
    manifest = RunManifest.open(layout.manifest)
    manifest.record_stage(stage, split=split, checkpoint=checkpoint, seed=seed, seconds=seconds)
    manifest.save(layout.manifest)
    log_event("stage_complete", {"stage": stage, "split": split, "seconds": round(seconds, 3)})


def dataset_distribution(cfg: PipelineConfig, id_prefix: str = "vid") -> DatasetSpec:
    return DatasetSpec(fps=cfg.fps, pyramid=pyramid_shapes(cfg.m), id_prefix=id_prefix)


def generate_split(
    cfg: PipelineConfig, count: int, seed: int, workdir: Path, split: str
) -> List[AnnotatedVideo]:
    """Generate a synthetic split under ``<workdir>/data/<split>``, ids prefixed by the split."""
    layout = WorkdirLayout(workdir)
    annotations = write_dataset(
        count,
        dataset_distribution(cfg, id_prefix=split),
        seed,
        layout.split_dir(split),
        max_workers=cfg.max_concurrency,
    )
    manifest = RunManifest.open(layout.manifest)
    manifest.datasets[split] = str(layout.split_dir(split))
    manifest.seeds[f"gen_{split}"] = seed
    manifest.save(layout.manifest)
    return annotations


def run_train_local(cfg: PipelineConfig, workdir: Path, split: str = "train") -> Path:
    """Train the local stage on a split and write ``checkpoints/local.mtz``."""
    layout = WorkdirLayout(workdir)
    if not layout.annotations(split).exists():
        raise StageOrderError(f"no dataset at {layout.split_dir(split)}; run gen first")
    started = time.perf_counter()
    records = load_split(layout.split_dir(split), cfg.max_concurrency)
    result = train_local(records, cfg)
    path = save_checkpoint(
        result.model,
        layout.local_checkpoint,
        "local",
        cfg,
        {"level_channels": level_channels(records), "epoch_losses": result.epoch_losses},
    )
    manifest = RunManifest.open(layout.manifest)
    manifest.config = cfg.snapshot()
    manifest.save(layout.manifest)
    _finish(layout, "train-local", started, split=split, checkpoint=path, seed=cfg.seed)
    return path


def featurize_video(model: DDMNet, record: VideoRecord, cfg: PipelineConfig) -> HandoffRecord:
    """Confidence and fused representation at every sampled frame of one video."""
    centers = sample_frames(record.frame_count, cfg.eval_stride)
    if not centers:
        raise InvalidInputError(f"{record.video_id} is too short to sample")
    indices = clip_index_matrix(centers, cfg.w, cfg.s, record.frame_count)
    dtype = next(model.parameters()).dtype
    confidences = []
    representations = []
    with torch.no_grad():
        for start in range(0, len(centers), FEATURIZE_BATCH):
            out = model(clip_batch(record.pooled, indices[start : start + FEATURIZE_BATCH], dtype))
            confidences.append(out.confidence.double().clamp(0.0, 1.0).numpy())
            representations.append(out.representation.numpy())
    return HandoffRecord(
        video_id=record.video_id,
        timestamps=np.asarray(centers, dtype=np.float64) / cfg.fps,
        confidences=np.concatenate(confidences),
        representations=np.concatenate(representations),
    )


def featurize(
    cfg: PipelineConfig, workdir: Path, split: str, model: Optional[DDMNet] = None
) -> List[Path]:
    """Run the trained local stage over a split and write one handoff file per video."""
    layout = WorkdirLayout(workdir)
    if model is None:
        if not layout.local_checkpoint.exists():
            raise StageOrderError("featurize needs a local checkpoint; run train-local first")
        model, trained = load_local_checkpoint(layout.local_checkpoint)
        cfg = cfg.adopt(trained)
    started = time.perf_counter()
    records = load_split(layout.split_dir(split), cfg.max_concurrency)
    if level_channels(records) != model.level_channels:
        raise InvalidInputError(
            f"split has levels {level_channels(records)}, checkpoint expects {model.level_channels}"
        )

    configure_torch(cfg.seed, cfg.num_threads)
    handoff_dir = layout.handoff_dir(split)
    with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.max_concurrency) as pool:
        handoffs = list(pool.map(lambda r: featurize_video(model, r, cfg), records))
    paths = [write_handoff(h, handoff_dir) for h in handoffs]
    logger.info(f"Featurized {len(paths)} videos into {handoff_dir}")
    _finish(layout, "featurize", started, split=split)
    return paths


def _handoffs_complete(layout: WorkdirLayout, split: str) -> Tuple[bool, List[AnnotatedVideo]]:
    annotations = load_annotations(layout.annotations(split))
    handoff_dir = layout.handoff_dir(split)
    complete = all(handoff_path(handoff_dir, v.id).exists() for v in annotations)
    return complete, annotations


def run_train_decoder(cfg: PipelineConfig, workdir: Path, split: str = "train") -> Path:
    """Train the decoder on a featurized split and write ``checkpoints/decoder.mtz``."""
    layout = WorkdirLayout(workdir)
    complete, annotations = _handoffs_complete(layout, split)
    if not complete:
        raise StageOrderError("train-decoder needs handoff files; run featurize first")
    if layout.local_checkpoint.exists():
        local_cfg = checkpoint_config(layout.local_checkpoint, "local")
        if cfg.sampling() != local_cfg.sampling():
            logger.warning(f"Using the local checkpoint's sampling {local_cfg.sampling()}")
            cfg = cfg.with_overrides(**local_cfg.sampling())
    started = time.perf_counter()
    handoffs = load_handoffs(layout.handoff_dir(split), annotations)
    result = train_decoder(handoffs, annotations, cfg)
    path = save_checkpoint(
        result.model,
        layout.decoder_checkpoint,
        "decoder",
        cfg,
        {"epoch_losses": result.epoch_losses},
    )
    _finish(layout, "train-decoder", started, split=split, checkpoint=path, seed=cfg.seed)
    return path


def dedupe_predictions(
    preds: Sequence[BoundaryPrediction], radius: float
) -> List[BoundaryPrediction]:
    """Drop any prediction closer than ``radius`` to a more confident one; sorted by time."""
    kept: List[BoundaryPrediction] = []
    for p in sorted(preds, key=lambda p: (-p.confidence, p.time)):
        if all(abs(p.time - k.time) >= radius for k in kept):
            kept.append(p)
    return sorted(kept, key=lambda p: p.time)


def clamp_predictions(
    preds: Sequence[BoundaryPrediction], duration: float
) -> List[BoundaryPrediction]:
    return [
        BoundaryPrediction(time=min(max(p.time, 0.0), duration), confidence=p.confidence)
        for p in preds
    ]


def decode_video(
    decoder: BoundaryDecoder, handoff: HandoffRecord, cfg: PipelineConfig
) -> List[BoundaryPrediction]:
    """Decode every window of one video and merge the emitted boundaries."""
    preds: List[BoundaryPrediction] = []
    for window in video_windows(handoff, None, cfg):
        prediction = decode_window(window.memory, decoder)
        preds.extend(emit_predictions(prediction, window.origin, window.span, cfg.theta))
    return preds


def infer(
    cfg: PipelineConfig,
    workdir: Path,
    split: str,
    local_only: bool = False,
    out: Optional[Path] = None,
) -> Path:
    """Predict boundaries for a split and write ``predictions/<split>.json``.

    With ``local_only`` the decoder is skipped and boundaries are the peaks of
    the local confidence track (``predictions/<split>_local.json``).

    Model geometry comes from the checkpoints; only the runtime fields of
    ``cfg`` (thresholds, concurrency, seed) apply.
    """
    layout = WorkdirLayout(workdir)
    if not layout.local_checkpoint.exists():
        raise StageOrderError("infer needs a local checkpoint; run train-local first")
    if not local_only and not layout.decoder_checkpoint.exists():
        raise StageOrderError("infer needs a decoder checkpoint; run train-decoder first")

    started = time.perf_counter()
    annotations = load_annotations(layout.annotations(split))
    if not annotations:
        raise InvalidInputError(f"split {split!r} is empty")
    run_cfg = cfg.adopt(checkpoint_config(layout.local_checkpoint, "local"))
    decoder = None
    if not local_only:
        decoder, trained = load_decoder_checkpoint(layout.decoder_checkpoint)
        decoder_cfg = cfg.adopt(trained)
        if decoder_cfg.sampling() != run_cfg.sampling():
            raise ConfigError(
                [
                    f"decoder checkpoint expects {decoder_cfg.sampling()}, "
                    f"local checkpoint produces {run_cfg.sampling()}"
                ]
            )
        run_cfg = decoder_cfg
    featurize(cfg, workdir, split)
    handoffs = load_handoffs(layout.handoff_dir(split), annotations)

    raw: Dict[str, List[BoundaryPrediction]] = {}
    for video in annotations:
        if decoder is None:
            raw[video.id] = extract_boundaries(handoffs[video.id].track(), cfg.local_threshold)
        else:
            raw[video.id] = decode_video(decoder, handoffs[video.id], run_cfg)

    preds = {
        video.id: dedupe_predictions(
            clamp_predictions(raw[video.id], video.duration), run_cfg.sample_interval
        )
        for video in annotations
    }
    suffix = LOCAL_ONLY_SUFFIX if local_only else ""
    path = Path(out) if out is not None else layout.predictions(split, suffix)
    write_predictions(preds, path)
    logger.info(f"Wrote {sum(len(p) for p in preds.values())} predictions to {path}")
    if not local_only:
        _finish(layout, "decode", started, split=split)
    return path


def evaluate_split(
    cfg: PipelineConfig, workdir: Path, split: str, local_only: bool = False
) -> EvalReport:
    """Score a split's predictions and write ``reports/<split>.json``."""
    layout = WorkdirLayout(workdir)
    suffix = LOCAL_ONLY_SUFFIX if local_only else ""
    report = evaluate_files(
        layout.predictions(split, suffix), layout.annotations(split), cfg.rel_dis_thresholds
    )
    write_report(report, layout.report(split, suffix))
    log_event(
        "evaluation",
        {
            "split": split,
            "local_only": local_only,
            "f1": report.rows[0].f1,
            "threshold": report.rows[0].threshold,
            "avg_f1": report.avg_f1,
        },
    )
    return report


def split_seeds(seed: int) -> Tuple[int, int]:
    """Independent generation seeds for the training and held-out splits."""
    train, heldout = np.random.SeedSequence(seed).spawn(2)
    return (
        int(train.generate_state(1, dtype=np.uint32)[0]),
        int(heldout.generate_state(1, dtype=np.uint32)[0]),
    )


def run_all(
    cfg: PipelineConfig,
    workdir: Path,
    train_count: int = 200,
    heldout_count: int = 50,
) -> EvalReport:
    """Generate, train both stages, decode the held-out split and evaluate it."""
    layout = WorkdirLayout(workdir)
    RunManifest(config=cfg.snapshot()).save(layout.manifest)
    train_seed, heldout_seed = split_seeds(cfg.seed)
    generate_split(cfg, train_count, train_seed, workdir, "train")
    generate_split(cfg, heldout_count, heldout_seed, workdir, "heldout")

    run_train_local(cfg, workdir, "train")
    featurize(cfg, workdir, "train")
    run_train_decoder(cfg, workdir, "train")

    infer(cfg, workdir, "heldout", local_only=True)
    evaluate_split(cfg, workdir, "heldout", local_only=True)
    infer(cfg, workdir, "heldout")
    return evaluate_split(cfg, workdir, "heldout")
