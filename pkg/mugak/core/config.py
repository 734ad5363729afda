"""Configuration management for the Mugak pipeline."""

import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

from pydantic_settings import BaseSettings, SettingsConfigDict

from mugak.core.errors import ConfigError

DEFAULT_REL_DIS_THRESHOLDS: Tuple[float, ...] = (
    0.05,
    0.1,
    0.15,
    0.2,
    0.25,
    0.3,
    0.35,
    0.4,
    0.45,
    0.5,
)

# Free to change between training and inference; everything else is fixed by the checkpoint.
RUNTIME_FIELDS: Tuple[str, ...] = (
    "theta",
    "local_threshold",
    "rel_dis_thresholds",
    "seed",
    "log_level",
    "max_concurrency",
    "num_threads",
)

# Handoff files written by the local stage are only readable by a decoder agreeing on these.
SAMPLING_FIELDS: Tuple[str, ...] = ("fps", "eval_stride", "feature_dim")


class PipelineConfig(BaseSettings):
    """Hyperparameters of both stages plus runtime settings.

    Defaults are the published challenge settings; desk-scale values
    (feature_dim, heads, decoder_layers, epochs) are marked as such.
    """

    # Multi-level feature bank
    m: int = 3
    n: int = 3
    L: Optional[int] = None
    kernel_sizes: Optional[List[int]] = None

    # Clip and sampling geometry
    w: int = 16
    s: int = 2
    eval_stride: int = 3
    fps: float = 30.0

    # Local context modeling
    omega: int = 5
    feature_dim: int = 64
    heads: int = 4
    local_positive_radius: Optional[float] = None
    local_threshold: float = 0.5
    lr_local: float = 1e-5
    batch_local: int = 16
    epochs_local: int = 20

    # Global boundary decoding
    num_queries: int = 10
    theta: float = 0.87
    window_len: int = 100
    window_stride: Optional[int] = None
    decoder_layers: int = 2
    lambda_loc: float = 5.0
    lambda_cls: float = 1.0
    lr_decoder: float = 1e-4
    batch_decoder: int = 32
    weight_decay: float = 1e-4
    epochs_decoder: int = 50

    # Evaluation
    rel_dis_thresholds: List[float] = list(DEFAULT_REL_DIS_THRESHOLDS)

    # Runtime
    seed: int = 0
    log_level: str = "INFO"
    max_concurrency: int = 4
    num_threads: int = 1

    model_config = SettingsConfigDict(
        env_prefix="MUGAK_",
        extra="ignore",
        frozen=True,
    )

    @property
    def levels(self) -> int:
        """Number of bank levels L = m x n."""
        return self.m * self.n

    @property
    def clip_len(self) -> int:
        """Clip length T = 2w + 1."""
        return 2 * self.w + 1

    @property
    def resolved_kernel_sizes(self) -> List[int]:
        if self.kernel_sizes is not None:
            return list(self.kernel_sizes)
        return [2 * k + 1 for k in range(self.n)]

    @property
    def resolved_window_stride(self) -> int:
        return self.window_stride if self.window_stride is not None else self.window_len

    @property
    def sample_interval(self) -> float:
        """Seconds between two sampled frames."""
        return self.eval_stride / self.fps

    @property
    def positive_radius(self) -> float:
        if self.local_positive_radius is not None:
            return self.local_positive_radius
        return self.sample_interval

    def with_overrides(self, **overrides: Any) -> "PipelineConfig":
        """Return a copy with the non-None overrides applied and re-validated."""
        updates = {k: v for k, v in overrides.items() if v is not None}
        if not updates:
            return self
        return type(self).model_validate({**self.model_dump(), **updates})

    def adopt(self, trained: "PipelineConfig") -> "PipelineConfig":
        """Settings a checkpoint was trained with, keeping this config's runtime fields."""
        runtime = {name: getattr(self, name) for name in RUNTIME_FIELDS}
        return type(self).model_validate({**trained.model_dump(), **runtime})

    def sampling(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in SAMPLING_FIELDS}

    def snapshot(self) -> Dict[str, Any]:
        """JSON-friendly dump used by manifests and checkpoints."""
        return self.model_dump(mode="json")

    @classmethod
    def from_file(cls, file_path: Path, **overrides: Any) -> "PipelineConfig":
        """Load configuration from a flat TOML file.

        Keys may sit at the top level or under a ``[mugak]`` table. Explicit
        keyword overrides win over file values.
        """
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib

        try:
            with open(file_path, "rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError([f"{file_path}: {e}"]) from e

        candidate = data.get("mugak", data) if isinstance(data, dict) else {}
        if not isinstance(candidate, dict):
            raise ConfigError([f"{file_path}: [mugak] must be a table"])
        merged = {**candidate, **{k: v for k, v in overrides.items() if v is not None}}
        return cls(**merged)


def validate_config(cfg: PipelineConfig) -> List[str]:
    """Return every violated invariant of ``cfg`` (empty when valid)."""
    violations: List[str] = []

    def check(ok: bool, message: str) -> None:
        if not ok:
            violations.append(message)

    check(cfg.m >= 1, "m must be >= 1")
    check(cfg.n >= 1, "n must be >= 1")
    if cfg.L is not None:
        check(cfg.L == cfg.m * cfg.n, f"L ≠ m×n ({cfg.L} != {cfg.m}x{cfg.n})")
    if cfg.kernel_sizes is not None:
        check(len(cfg.kernel_sizes) == cfg.n, "kernel_sizes must have exactly n entries")
        check(
            all(k >= 1 and k % 2 == 1 for k in cfg.kernel_sizes),
            "kernel_sizes must be odd and >= 1",
        )
    check(cfg.w >= 0, "w must be >= 0 (clip length 2w+1 is odd)")
    check(cfg.s >= 1, "s must be >= 1")
    check(cfg.eval_stride >= 1, "eval_stride must be >= 1")
    check(math.isfinite(cfg.fps) and cfg.fps > 0, "fps must be > 0")
    check(cfg.omega >= 1, "omega must be >= 1")
    check(cfg.num_queries >= 1, "num_queries must be >= 1")
    check(0.0 <= cfg.theta <= 1.0, "theta must lie in [0, 1]")
    check(0.0 <= cfg.local_threshold <= 1.0, "local_threshold must lie in [0, 1]")
    check(cfg.window_len >= 1, "window_len must be >= 1")
    if cfg.window_stride is not None:
        check(
            1 <= cfg.window_stride <= cfg.window_len,
            "window_stride must lie in [1, window_len]",
        )
    check(cfg.feature_dim >= 1, "feature_dim must be >= 1")
    check(cfg.heads >= 1, "heads must be >= 1")
    if cfg.heads >= 1:
        check(cfg.feature_dim % cfg.heads == 0, "feature_dim must be divisible by heads")
    check(cfg.decoder_layers >= 1, "decoder_layers must be >= 1")

    thresholds = cfg.rel_dis_thresholds
    check(len(thresholds) >= 1, "rel_dis_thresholds must not be empty")
    check(
        all(0.0 < t <= 1.0 for t in thresholds),
        "rel_dis_thresholds must lie in (0, 1]",
    )
    check(
        all(a < b for a, b in zip(thresholds, thresholds[1:])),
        "rel_dis_thresholds must be strictly increasing",
    )

    check(cfg.lr_local > 0, "lr_local must be > 0")
    check(cfg.lr_decoder > 0, "lr_decoder must be > 0")
    check(cfg.batch_local >= 1, "batch_local must be >= 1")
    check(cfg.batch_decoder >= 1, "batch_decoder must be >= 1")
    check(cfg.weight_decay >= 0, "weight_decay must be >= 0")
    check(cfg.epochs_local >= 0, "epochs_local must be >= 0")
    check(cfg.epochs_decoder >= 0, "epochs_decoder must be >= 0")
    if cfg.local_positive_radius is not None:
        check(cfg.local_positive_radius > 0, "local_positive_radius must be > 0")
    check(cfg.lambda_loc >= 0, "lambda_loc must be >= 0")
    check(cfg.lambda_cls >= 0, "lambda_cls must be >= 0")
    check(cfg.max_concurrency >= 1, "max_concurrency must be >= 1")
    check(cfg.num_threads >= 1, "num_threads must be >= 1")
    check(cfg.seed >= 0, "seed must be >= 0")
    check(
        cfg.log_level.upper() in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"},
        f"unknown log_level {cfg.log_level!r}",
    )
    return violations


def load_config(
    file_path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None
) -> PipelineConfig:
    """Build a config from file, environment and overrides, then validate it."""
    extra = dict(overrides or {})
    try:
        if file_path is not None:
            cfg = PipelineConfig.from_file(file_path, **extra)
        else:
            cfg = PipelineConfig(**{k: v for k, v in extra.items() if v is not None})
    except ConfigError:
        raise
    except ValueError as e:
        # pydantic ValidationError subclasses ValueError
        raise ConfigError([str(e)]) from e

    violations = validate_config(cfg)
    if violations:
        raise ConfigError(violations)
    return cfg
