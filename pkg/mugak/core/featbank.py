"""Multi-level feature bank: m spatial levels x n temporal receptive fields."""

from typing import List, Optional, Sequence

import numpy as np
import torch
from torch import nn

from mugak.core.datamodel import FeatureSequence


def spatial_pool(feature_map: np.ndarray) -> np.ndarray:
    """Average an H x W x C map over its spatial axes."""
    feature_map = np.asarray(feature_map)
    if feature_map.ndim != 3 or 0 in feature_map.shape:
        raise ValueError(f"expected a non-empty H x W x C tensor, got shape {feature_map.shape}")
    return feature_map.mean(axis=(0, 1))


def pool_frames(frames: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Spatially pool per-level (F, H, W, C) stacks into (F, C) sequences."""
    pooled = []
    for maps in frames:
        maps = np.asarray(maps)
        if maps.ndim != 4 or 0 in maps.shape:
            raise ValueError(f"expected (frames, H, W, C) maps, got shape {maps.shape}")
        pooled.append(maps.mean(axis=(1, 2), dtype=np.float64).astype(np.float32))
    return pooled


class TemporalVariant(nn.Module):
    """Depthwise 1-D convolution (edge-replicate padding) followed by a projection to D."""

    def __init__(
        self,
        in_channels: int,
        out_dim: int,
        kernel_size: int,
        init_noise: float = 0.01,
    ) -> None:
        super().__init__()
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and >= 1")
        self.kernel_size = kernel_size
        self.conv = nn.Conv1d(
            in_channels,
            in_channels,
            kernel_size,
            padding=kernel_size // 2,
            padding_mode="replicate",
            groups=in_channels,
        )
        self.proj = nn.Linear(in_channels, out_dim)
        with torch.no_grad():
            # averaging taps that sum to one, plus a little symmetric-breaking noise
            self.conv.weight.fill_(1.0 / kernel_size)
            if init_noise > 0:
                noise = torch.empty_like(self.conv.weight).uniform_(-1, 1)
                self.conv.weight.add_(noise * init_noise)
            self.conv.bias.zero_()
            nn.init.xavier_uniform_(self.proj.weight)
            self.proj.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, T, C) -> (B, T, D)."""
        if x.shape[1] < self.kernel_size:
            raise ValueError(
                f"sequence length {x.shape[1]} is shorter than kernel {self.kernel_size}"
            )
        y = self.conv(x.transpose(1, 2)).transpose(1, 2)
        return self.proj(y)


class TemporalVariants(nn.Module):
    """n temporal variants of one spatial level, unshared weights."""

    def __init__(
        self,
        in_channels: int,
        out_dim: int,
        kernel_sizes: Sequence[int],
        init_noise: float = 0.01,
    ) -> None:
        super().__init__()
        self.variants = nn.ModuleList(
            TemporalVariant(in_channels, out_dim, k, init_noise=init_noise) for k in kernel_sizes
        )

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        return [variant(x) for variant in self.variants]


class MultiLevelFeatureBank(nn.Module):
    """Builds the L = m x n bank from m pooled level sequences.

    Level index ``l_spatial * n + l_temporal``.
    """

    def __init__(
        self,
        level_channels: Sequence[int],
        out_dim: int,
        kernel_sizes: Sequence[int],
        init_noise: float = 0.01,
    ) -> None:
        super().__init__()
        self.m = len(level_channels)
        self.n = len(kernel_sizes)
        self.out_dim = out_dim
        self.levels = nn.ModuleList(
            TemporalVariants(c, out_dim, kernel_sizes, init_noise=init_noise)
            for c in level_channels
        )

    @property
    def L(self) -> int:
        return self.m * self.n

    def forward(self, clips: Sequence[torch.Tensor]) -> torch.Tensor:
        """m tensors (B, T, C_l) -> (B, L, T, D)."""
        if len(clips) != self.m:
            raise ValueError(f"expected {self.m} spatial levels, got {len(clips)}")
        lengths = {c.shape[1] for c in clips}
        if len(lengths) != 1:
            raise ValueError(f"levels disagree on T: {sorted(lengths)}")
        outputs: List[torch.Tensor] = []
        for variants, clip in zip(self.levels, clips):
            outputs.extend(variants(clip))
        return torch.stack(outputs, dim=1)


def temporal_variants(
    seq: FeatureSequence, n: int, out_dim: int, variants: Optional[TemporalVariants] = None
) -> List[FeatureSequence]:
    """Apply n temporal variants to one sequence (kernel sizes 1, 3, 5, ...)."""
    if variants is None:
        variants = TemporalVariants(seq.C, out_dim, [2 * k + 1 for k in range(n)])
    dtype = next(variants.parameters()).dtype
    x = torch.as_tensor(seq.values, dtype=dtype).unsqueeze(0)
    with torch.no_grad():
        outs = variants(x)
    return [
        FeatureSequence(
            values=o.squeeze(0).numpy().astype(np.float64),
            step_seconds=seq.step_seconds,
            origin_seconds=seq.origin_seconds,
        )
        for o in outs
    ]


def build_bank(
    clip_frames: Sequence[np.ndarray],
    bank: MultiLevelFeatureBank,
    step_seconds: float = 1.0,
    origin_seconds: float = 0.0,
) -> List[FeatureSequence]:
    """Pool m levels of (T, H, W, C) clip maps and expand them into L sequences."""
    pooled = pool_frames(clip_frames)
    clips = [torch.as_tensor(p).unsqueeze(0).to(next(bank.parameters()).dtype) for p in pooled]
    with torch.no_grad():
        stacked = bank(clips).squeeze(0)
    return [
        FeatureSequence(
            values=level.numpy().astype(np.float64),
            step_seconds=step_seconds,
            origin_seconds=origin_seconds,
        )
        for level in stacked
    ]
