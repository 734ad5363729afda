"""Flat tensor container used for features, handoff files and checkpoints.

Layout: a magic line, one JSON header line naming every tensor with its
shape and dtype plus free-form metadata, then the arrays in header order,
each serialised in numpy's ``.npy`` format. Everything is little-endian.
"""

import hashlib
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple

import numpy as np

from mugak.core.errors import TensorFileError

MAGIC = b"MUGAKTENSORS 1\n"
_ALLOWED_DTYPES = {"<f4", "<f8", "<i8"}


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _as_little_endian(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    if array.dtype.kind == "f":
        target = "<f8" if array.dtype.itemsize == 8 else "<f4"
    elif array.dtype.kind in "iub":
        target = "<i8"
    else:
        raise TypeError(f"unsupported dtype {array.dtype}")
    return array.astype(np.dtype(target), copy=False)


def encode_tensors(arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> bytes:
    """Serialise ``arrays`` (in insertion order) and ``meta`` into container bytes."""
    prepared = {name: _as_little_endian(np.asarray(a)) for name, a in arrays.items()}
    header = {
        "tensors": [
            {"name": name, "shape": list(a.shape), "dtype": a.dtype.str}
            for name, a in prepared.items()
        ],
        "meta": dict(meta),
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(json.dumps(header, sort_keys=True).encode("utf-8"))
    buf.write(b"\n")
    for a in prepared.values():
        np.lib.format.write_array(buf, a, allow_pickle=False)
    return buf.getvalue()


def write_tensors(
    path: Path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None
) -> None:
    """Atomically write a tensor container to ``path``."""
    atomic_write_bytes(Path(path), encode_tensors(arrays, meta or {}))


def read_tensors(path: Path) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read a tensor container; returns ``(arrays, meta)``."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.readline()
        if magic != MAGIC:
            raise TensorFileError(f"{path}: not a tensor container")
        try:
            header = json.loads(f.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise TensorFileError(f"{path}: bad header: {e}") from e

        arrays: Dict[str, np.ndarray] = {}
        for entry in header.get("tensors", []):
            name = entry["name"]
            if entry["dtype"] not in _ALLOWED_DTYPES:
                raise TensorFileError(f"{path}: tensor {name} has dtype {entry['dtype']}")
            try:
                array = np.lib.format.read_array(f, allow_pickle=False)
            except (ValueError, EOFError) as e:
                raise TensorFileError(f"{path}: tensor {name} is truncated: {e}") from e
            if list(array.shape) != list(entry["shape"]) or array.dtype.str != entry["dtype"]:
                raise TensorFileError(f"{path}: tensor {name} does not match its header")
            arrays[name] = array
    return arrays, header.get("meta", {})


def file_sha256(path: Path) -> str:
    """Content hash of a file."""
    hashobj = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            hashobj.update(chunk)
    return hashobj.hexdigest()
