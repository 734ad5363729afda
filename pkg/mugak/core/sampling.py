"""Frame sampling, clip extraction and sliding-window layout."""

from typing import List, Optional, Tuple

import numpy as np


def sample_frames(frame_count: int, stride: int) -> List[int]:
    """One frame per ``stride`` cell, at the cell center ``stride // 2``."""
    if frame_count <= 0:
        raise ValueError("frame_count must be > 0")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return list(range(stride // 2, frame_count, stride))


def sample_times(indices: List[int], fps: float) -> List[float]:
    return [index / fps for index in indices]


def extract_clip(center: int, w: int, s: int, frame_count: int) -> List[int]:
    """T = 2w+1 indices ``center + k*s`` for k in [-w, w], clamped to the video."""
    if not 0 <= center < frame_count:
        raise ValueError(f"center {center} outside [0, {frame_count})")
    return [min(max(center + k * s, 0), frame_count - 1) for k in range(-w, w + 1)]


def clip_index_matrix(centers: List[int], w: int, s: int, frame_count: int) -> np.ndarray:
    """(len(centers), 2w+1) int64 matrix of clip indices."""
    offsets = np.arange(-w, w + 1, dtype=np.int64) * s
    matrix = np.asarray(centers, dtype=np.int64)[:, None] + offsets[None, :]
    return np.clip(matrix, 0, frame_count - 1)


def make_windows(
    seq_len: int, window_len: int, stride: Optional[int] = None
) -> List[Tuple[int, int]]:
    """(start, effective_len) windows; the last one may be short and is padded later.

    With the default stride (= window_len) the windows partition the sequence.
    """
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    if window_len < 1:
        raise ValueError("window_len must be >= 1")
    stride = stride or window_len
    windows = []
    start = 0
    while True:
        effective = min(window_len, seq_len - start)
        windows.append((start, effective))
        if start + window_len >= seq_len:
            return windows
        start += stride


def pad_window(seq: np.ndarray, start: int, effective_len: int, window_len: int) -> np.ndarray:
    """Slice one window from (N, D) ``seq`` and repeat its last real row up to window_len."""
    seq = np.asarray(seq)
    if effective_len < 1 or start + effective_len > seq.shape[0]:
        raise ValueError(f"window ({start}, {effective_len}) outside sequence of {seq.shape[0]}")
    window = seq[start : start + effective_len]
    if effective_len < window_len:
        tail = np.repeat(window[-1:], window_len - effective_len, axis=0)
        window = np.concatenate([window, tail], axis=0)
    return window


def window_ground_truth(
    boundaries: List[float], origin: float, span: float, effective_span: float
) -> List[float]:
    """Positions ``(b - origin) / span`` of the boundaries inside the real part of a window."""
    if not span > 0:
        raise ValueError("span must be > 0")
    end = origin + min(effective_span, span)
    return [(b - origin) / span for b in boundaries if origin <= b < end]
