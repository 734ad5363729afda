"""
Pytest configuration for Mugak tests.
Provides desk-sized configs and gates the slow end-to-end run behind MUGAK_RUN_SLOW=1.
"""

import os
from pathlib import Path

import pytest

from mugak.core.config import PipelineConfig
from mugak.core.pipeline import run_all

TINY_SETTINGS = {
    "m": 2,
    "n": 2,
    "w": 2,
    "s": 1,
    "omega": 2,
    "feature_dim": 8,
    "heads": 2,
    "batch_local": 8,
    "epochs_local": 1,
    "num_queries": 4,
    "window_len": 10,
    "decoder_layers": 1,
    "batch_decoder": 4,
    "epochs_decoder": 1,
    "max_concurrency": 2,
}


def pytest_collection_modifyitems(config, items):
    if os.environ.get("MUGAK_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set MUGAK_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_cfg() -> PipelineConfig:
    return PipelineConfig(**TINY_SETTINGS)


@pytest.fixture
def tiny_config_file(tmp_path) -> Path:
    """TOML config holding TINY_SETTINGS under a [mugak] table."""
    path = tmp_path / "mugak.toml"
    lines = ["[mugak]"] + [f"{key} = {value}" for key, value in TINY_SETTINGS.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def trained_workdir(tmp_path_factory) -> Path:
    """Working directory after one tiny run-all (3 training + 2 held-out videos)."""
    workdir = tmp_path_factory.mktemp("run")
    run_all(PipelineConfig(**TINY_SETTINGS), workdir, train_count=3, heldout_count=2)
    return workdir
