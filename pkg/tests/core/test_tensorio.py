"""Tests for the tensor container."""

import numpy as np
import pytest

from mugak.core.errors import TensorFileError
from mugak.core.tensorio import MAGIC, file_sha256, read_tensors, write_tensors


def test_write_read(tmp_path):
    path = tmp_path / "t.mtz"
    arrays = {
        "features": np.arange(12, dtype=np.float32).reshape(3, 4),
        "times": np.linspace(0, 1, 5),
        "ids": np.array([3, 1, 2]),
    }
    write_tensors(path, arrays, {"video_id": "v1"})
    loaded, meta = read_tensors(path)
    assert list(loaded) == ["features", "times", "ids"]
    assert loaded["features"].dtype.str == "<f4"
    assert loaded["times"].dtype.str == "<f8"
    assert loaded["ids"].dtype.str == "<i8"
    for name, array in arrays.items():
        np.testing.assert_array_equal(loaded[name], array)
    assert meta == {"video_id": "v1"}


def test_header_is_text(tmp_path):
    path = tmp_path / "t.mtz"
    write_tensors(path, {"a": np.zeros((2, 2), dtype=np.float32)})
    with open(path, "rb") as f:
        assert f.readline() == MAGIC
        assert b'"shape": [2, 2]' in f.readline()


def test_bad_magic(tmp_path):
    path = tmp_path / "t.mtz"
    path.write_bytes(b"something else\n")
    with pytest.raises(TensorFileError):
        read_tensors(path)


def test_truncated_file(tmp_path):
    path = tmp_path / "t.mtz"
    write_tensors(path, {"a": np.ones((50, 50), dtype=np.float32)})
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(TensorFileError):
        read_tensors(path)


def test_writes_are_byte_identical(tmp_path):
    arrays = {"a": np.random.default_rng(0).standard_normal((4, 3))}
    write_tensors(tmp_path / "one.mtz", arrays, {"k": 1})
    write_tensors(tmp_path / "two.mtz", arrays, {"k": 1})
    assert file_sha256(tmp_path / "one.mtz") == file_sha256(tmp_path / "two.mtz")
    assert not list(tmp_path.glob(".*"))
