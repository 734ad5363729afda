"""Domain types and on-disk document formats for Mugak."""

import json
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from mugak.core.errors import AnnotationFormatError
from mugak.core.tensorio import atomic_write_text


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


class AnnotatedVideo(BaseModel):
    """Ground-truth boundaries of one video, in seconds."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    id: str = Field(..., min_length=1)
    duration: float = Field(..., gt=0)
    frame_rate: float = Field(..., gt=0, alias="fps")
    boundaries: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_boundaries(self) -> "AnnotatedVideo":
        for a, b in zip(self.boundaries, self.boundaries[1:]):
            if not a < b:
                raise ValueError("unsorted boundaries")
        for b in self.boundaries:
            if not (math.isfinite(b) and 0.0 < b < self.duration):
                raise ValueError(f"boundary {b} outside (0, {self.duration})")
        return self

    @property
    def frame_count(self) -> int:
        return int(round(self.duration * self.frame_rate))

    def to_record(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "duration": self.duration,
            "fps": self.frame_rate,
            "boundaries": list(self.boundaries),
        }


class FeatureSequence(BaseModel):
    """T x C feature matrix with a regular time axis."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    values: np.ndarray
    step_seconds: float = Field(..., gt=0)
    origin_seconds: float = 0.0

    @field_validator("values")
    @classmethod
    def _check_values(cls, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"values must be a non-empty T x C matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        return v

    @property
    def T(self) -> int:
        return int(self.values.shape[0])

    @property
    def C(self) -> int:
        return int(self.values.shape[1])

    @property
    def timestamps(self) -> np.ndarray:
        return self.origin_seconds + self.step_seconds * np.arange(self.T)


class BoundaryPrediction(BaseModel):
    """One predicted boundary instant with its confidence p_bc."""

    model_config = ConfigDict(frozen=True)

    time: float
    confidence: float = Field(..., ge=0.0, le=1.0)

    @field_validator("time")
    @classmethod
    def _finite_time(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("time must be finite")
        return v


class EvalRow(BaseModel):
    """Micro-averaged counts and scores at one Rel.Dis. threshold."""

    model_config = ConfigDict(frozen=True)

    threshold: float = Field(..., gt=0.0, le=1.0)
    tp: int = Field(..., ge=0)
    fp: int = Field(..., ge=0)
    fn: int = Field(..., ge=0)
    precision: float = Field(..., ge=0.0, le=1.0)
    recall: float = Field(..., ge=0.0, le=1.0)
    f1: float = Field(..., ge=0.0, le=1.0)
    macro_f1: float = Field(0.0, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_scores(self) -> "EvalRow":
        precision = _ratio(self.tp, self.tp + self.fp)
        recall = _ratio(self.tp, self.tp + self.fn)
        if abs(precision - self.precision) > 1e-9 or abs(recall - self.recall) > 1e-9:
            raise ValueError("precision/recall disagree with tp/fp/fn")
        return self


class VideoEvalRow(BaseModel):
    """Per-video counts at one threshold (kept for inspection and macro scores)."""

    model_config = ConfigDict(frozen=True)

    video_id: str
    threshold: float
    tp: int = Field(..., ge=0)
    fp: int = Field(..., ge=0)
    fn: int = Field(..., ge=0)
    precision: float = Field(..., ge=0.0, le=1.0)
    recall: float = Field(..., ge=0.0, le=1.0)
    f1: float = Field(..., ge=0.0, le=1.0)


class EvalReport(BaseModel):
    """Evaluation over a dataset: one row per threshold plus per-video rows."""

    model_config = ConfigDict(frozen=True)

    rows: List[EvalRow] = Field(default_factory=list)
    per_video: List[VideoEvalRow] = Field(default_factory=list)

    @property
    def avg_f1(self) -> float:
        """Mean micro F1 over all thresholds."""
        if not self.rows:
            return 0.0
        return sum(r.f1 for r in self.rows) / len(self.rows)

    def row(self, threshold: float) -> EvalRow:
        for r in self.rows:
            if math.isclose(r.threshold, threshold, rel_tol=0.0, abs_tol=1e-12):
                return r
        raise KeyError(threshold)


def _first_error_field(error: ValidationError) -> str:
    errors = error.errors()
    if errors and errors[0].get("loc"):
        return ".".join(str(p) for p in errors[0]["loc"]) or "record"
    return "record"


def _read_json(path: Path) -> Any:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise AnnotationFormatError(f"{path} is not valid JSON: {e}") from e


def load_annotations(path: Path) -> List[AnnotatedVideo]:
    """Load an annotation document, preserving record order."""
    data = _read_json(path)
    if not isinstance(data, list):
        raise AnnotationFormatError(f"{path}: top level must be a list of records")

    videos: List[AnnotatedVideo] = []
    for index, record in enumerate(data):
        if not isinstance(record, dict):
            raise AnnotationFormatError(f"record {index} is not an object")
        video_id = record.get("id")
        for key in ("id", "duration", "fps", "boundaries"):
            if key not in record:
                raise AnnotationFormatError("missing field", video_id=video_id, field=key)
        try:
            videos.append(AnnotatedVideo.model_validate(record))
        except ValidationError as e:
            message = e.errors()[0].get("msg", str(e))
            raise AnnotationFormatError(
                message, video_id=video_id, field=_first_error_field(e)
            ) from e
    return videos


def write_annotations(videos: Sequence[AnnotatedVideo], path: Path) -> None:
    records = [v.to_record() for v in videos]
    atomic_write_text(Path(path), json.dumps(records, indent=2) + "\n")


def write_predictions(preds: Mapping[str, Sequence[BoundaryPrediction]], path: Path) -> None:
    """Write a prediction document: ``{id: [{time, confidence}, ...]}``."""
    document = {
        video_id: [{"time": p.time, "confidence": p.confidence} for p in items]
        for video_id, items in preds.items()
    }
    atomic_write_text(Path(path), json.dumps(document, indent=2) + "\n")


def load_predictions(path: Path) -> Dict[str, List[BoundaryPrediction]]:
    data = _read_json(path)
    if not isinstance(data, dict):
        raise AnnotationFormatError(f"{path}: top level must map video ids to predictions")

    preds: Dict[str, List[BoundaryPrediction]] = {}
    for video_id, items in data.items():
        if not isinstance(items, list):
            raise AnnotationFormatError("expected a list", video_id=video_id, field="predictions")
        parsed: List[BoundaryPrediction] = []
        for item in items:
            try:
                parsed.append(BoundaryPrediction.model_validate(item))
            except ValidationError as e:
                message = e.errors()[0].get("msg", str(e))
                raise AnnotationFormatError(
                    message, video_id=video_id, field=_first_error_field(e)
                ) from e
        preds[video_id] = parsed
    return preds


def write_report(report: EvalReport, path: Path) -> None:
    payload = report.model_dump(mode="json")
    payload["avg_f1"] = report.avg_f1
    atomic_write_text(Path(path), json.dumps(payload, indent=2) + "\n")


def load_report(path: Path) -> EvalReport:
    data = _read_json(path)
    if not isinstance(data, dict):
        raise AnnotationFormatError(f"{path}: report must be an object")
    data = {k: v for k, v in data.items() if k != "avg_f1"}
    try:
        return EvalReport.model_validate(data)
    except ValidationError as e:
        raise AnnotationFormatError(str(e), field=_first_error_field(e)) from e
