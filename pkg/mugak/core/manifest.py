"""Run manifest and working-directory layout."""

from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional
from uuid import uuid4

from pydantic import BaseModel, Field

from mugak.core.errors import StageOrderError
from mugak.core.tensorio import atomic_write_text, file_sha256

STAGES = ("train-local", "featurize", "train-decoder", "decode")


class WorkdirLayout:
    """Paths of every artifact under one ``--workdir``."""

    def __init__(self, root: Path) -> None:
        self.root = Path(root)

    def split_dir(self, split: str) -> Path:
        return self.root / "data" / split

    def annotations(self, split: str) -> Path:
        return self.split_dir(split) / "annotations.json"

    def features_dir(self, split: str) -> Path:
        return self.split_dir(split) / "features"

    def handoff_dir(self, split: str) -> Path:
        return self.root / "handoff" / split

    @property
    def local_checkpoint(self) -> Path:
        return self.root / "checkpoints" / "local.mtz"

    @property
    def decoder_checkpoint(self) -> Path:
        return self.root / "checkpoints" / "decoder.mtz"

    def predictions(self, split: str, suffix: str = "") -> Path:
        return self.root / "predictions" / f"{split}{suffix}.json"

    def report(self, split: str, suffix: str = "") -> Path:
        return self.root / "reports" / f"{split}{suffix}.json"

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"


class StageRecord(BaseModel):
    """One completed pipeline stage."""

    stage: str
    split: Optional[str] = None
    checkpoint: Optional[str] = None
    checkpoint_sha256: Optional[str] = None
    seed: Optional[int] = None
    seconds: float = 0.0
    finished_at: datetime = Field(default_factory=datetime.now)


class RunManifest(BaseModel):
    """Config snapshot, dataset paths, seeds and stage history of one working directory."""

    id: str = Field(default_factory=lambda: str(uuid4()))
    created_at: datetime = Field(default_factory=datetime.now)
    updated_at: datetime = Field(default_factory=datetime.now)
    config: Dict[str, Any] = Field(default_factory=dict)
    datasets: Dict[str, str] = Field(default_factory=dict)
    seeds: Dict[str, int] = Field(default_factory=dict)
    stages: List[StageRecord] = Field(default_factory=list)

    def save(self, path: Path) -> None:
        """Save manifest to file."""
        atomic_write_text(Path(path), self.model_dump_json(indent=2) + "\n")

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        """Load manifest from file."""
        with open(path, "r", encoding="utf-8") as f:
            data = f.read()
        return cls.model_validate_json(data)

    @classmethod
    def open(cls, path: Path) -> "RunManifest":
        """Load the manifest at ``path`` or start a fresh one."""
        path = Path(path)
        return cls.load(path) if path.exists() else cls()

    def completed(self, stage: str) -> bool:
        return any(r.stage == stage for r in self.stages)

    @property
    def is_complete(self) -> bool:
        return all(self.completed(stage) for stage in STAGES)

    def last(self, stage: str) -> Optional[StageRecord]:
        for record in reversed(self.stages):
            if record.stage == stage:
                return record
        return None

    def record_stage(
        self,
        stage: str,
        split: Optional[str] = None,
        checkpoint: Optional[Path] = None,
        seed: Optional[int] = None,
        seconds: float = 0.0,
    ) -> StageRecord:
        """Append a stage record; every earlier stage must already be recorded."""
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        missing = [s for s in STAGES[: STAGES.index(stage)] if not self.completed(s)]
        if missing:
            raise StageOrderError(f"{stage} recorded before {', '.join(missing)}")
        record = StageRecord(
            stage=stage,
            split=split,
            checkpoint=str(checkpoint) if checkpoint is not None else None,
            checkpoint_sha256=file_sha256(checkpoint) if checkpoint is not None else None,
            seed=seed,
            seconds=seconds,
        )
        self.stages.append(record)
        self.updated_at = datetime.now()
        return record
