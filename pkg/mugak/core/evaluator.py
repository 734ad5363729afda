"""Rel.Dis. boundary evaluation: matching, counting and F1 reporting."""

import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.optimize import linear_sum_assignment

from mugak.core.config import DEFAULT_REL_DIS_THRESHOLDS
from mugak.core.datamodel import (
    AnnotatedVideo,
    BoundaryPrediction,
    EvalReport,
    EvalRow,
    VideoEvalRow,
    load_annotations,
    load_predictions,
)
from mugak.core.errors import UnknownVideoError
from mugak.core.telemetry import log_event

# absorbs rounding in |a - b| / duration so exact threshold hits count
REL_DIS_TOLERANCE = 1e-9


class MatchResult(BaseModel):
    """One-to-one prediction/ground-truth matching of a single video at one threshold."""

    model_config = ConfigDict(frozen=True)

    threshold: float
    matched: List[Tuple[int, int, float]]
    unmatched_predictions: List[int]
    unmatched_ground_truths: List[int]

    @model_validator(mode="after")
    def _check(self) -> "MatchResult":
        preds = [p for p, _, _ in self.matched]
        gts = [g for _, g, _ in self.matched]
        if len(set(preds)) != len(preds) or len(set(gts)) != len(gts):
            raise ValueError("matching is not one-to-one")
        for _, _, dist in self.matched:
            if dist > self.threshold + REL_DIS_TOLERANCE:
                raise ValueError(f"matched pair at Rel.Dis. {dist} exceeds {self.threshold}")
        return self

    @property
    def tp(self) -> int:
        return len(self.matched)

    @property
    def fp(self) -> int:
        return len(self.unmatched_predictions)

    @property
    def fn(self) -> int:
        return len(self.unmatched_ground_truths)


def rel_dis(pred_time: float, gt_time: float, duration: float) -> float:
    """|pred - gt| / duration."""
    if not duration > 0:
        raise ValueError("duration must be > 0")
    return abs(pred_time - gt_time) / duration


def match_video(
    preds: Sequence[float], gts: Sequence[float], duration: float, threshold: float
) -> MatchResult:
    """Maximum-cardinality one-to-one matching among pairs within ``threshold``.

    Among maximum matchings the one with the smallest total Rel.Dis. is kept.
    """
    if not duration > 0:
        raise ValueError("duration must be > 0")
    pred_times = np.asarray(preds, dtype=np.float64).reshape(-1)
    gt_times = np.asarray(gts, dtype=np.float64).reshape(-1)

    matched: List[Tuple[int, int, float]] = []
    if pred_times.size and gt_times.size:
        dist = np.abs(pred_times[:, None] - gt_times[None, :]) / duration
        feasible = dist <= threshold + REL_DIS_TOLERANCE
        # any infeasible pair costs more than every feasible pair combined
        penalty = float(min(dist.shape) + 1)
        rows, cols = linear_sum_assignment(np.where(feasible, dist, penalty))
        matched = [
            (int(r), int(c), float(dist[r, c])) for r, c in zip(rows, cols) if feasible[r, c]
        ]
        matched.sort()

    used_preds = {p for p, _, _ in matched}
    used_gts = {g for _, g, _ in matched}
    return MatchResult(
        threshold=threshold,
        matched=matched,
        unmatched_predictions=[i for i in range(pred_times.size) if i not in used_preds],
        unmatched_ground_truths=[j for j in range(gt_times.size) if j not in used_gts],
    )


def score(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    """(precision, recall, f1) with 0/0 taken as 0."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall, f1_score(precision, recall)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _clamped_times(
    video: AnnotatedVideo, predictions: Sequence[BoundaryPrediction]
) -> List[float]:
    times = []
    clamped = 0
    for p in predictions:
        t = min(max(p.time, 0.0), video.duration)
        clamped += t != p.time
        times.append(t)
    if clamped:
        log_event(
            "prediction_clamped",
            {"video_id": video.id, "count": clamped, "duration": video.duration},
            level=logging.WARNING,
        )
    return sorted(times)


def evaluate(
    predictions: Mapping[str, Sequence[BoundaryPrediction]],
    annotations: Sequence[AnnotatedVideo],
    thresholds: Optional[Sequence[float]] = None,
) -> EvalReport:
    """Score predictions against every annotated video.

    Counts are pooled over videos per threshold (micro average); the mean of
    per-video F1 is reported as ``macro_f1``. Annotated videos without a
    prediction entry count as having no predictions.
    """
    thresholds = list(DEFAULT_REL_DIS_THRESHOLDS if thresholds is None else thresholds)
    if not thresholds:
        raise ValueError("at least one threshold is required")
    by_id: Dict[str, AnnotatedVideo] = {v.id: v for v in annotations}
    unknown = sorted(set(predictions) - set(by_id))
    if unknown:
        raise UnknownVideoError(f"predictions for unannotated video(s): {', '.join(unknown)}")

    pred_times = {v.id: _clamped_times(v, predictions.get(v.id, [])) for v in annotations}

    rows: List[EvalRow] = []
    per_video: List[VideoEvalRow] = []
    for threshold in thresholds:
        tp = fp = fn = 0
        video_f1: List[float] = []
        for video in annotations:
            result = match_video(pred_times[video.id], video.boundaries, video.duration, threshold)
            precision, recall, f1 = score(result.tp, result.fp, result.fn)
            per_video.append(
                VideoEvalRow(
                    video_id=video.id,
                    threshold=threshold,
                    tp=result.tp,
                    fp=result.fp,
                    fn=result.fn,
                    precision=precision,
                    recall=recall,
                    f1=f1,
                )
            )
            video_f1.append(f1)
            tp += result.tp
            fp += result.fp
            fn += result.fn
        precision, recall, f1 = score(tp, fp, fn)
        rows.append(
            EvalRow(
                threshold=threshold,
                tp=tp,
                fp=fp,
                fn=fn,
                precision=precision,
                recall=recall,
                f1=f1,
                macro_f1=float(np.mean(video_f1)) if video_f1 else 0.0,
            )
        )
    return EvalReport(rows=rows, per_video=per_video)


def evaluate_files(
    pred_path: Path, ann_path: Path, thresholds: Optional[Sequence[float]] = None
) -> EvalReport:
    return evaluate(load_predictions(pred_path), load_annotations(ann_path), thresholds)
