"""Local context modeling: dense difference maps and progressive attention.

Pipeline for one clip of T sampled frames around a center frame:

    m pooled levels -> feature bank (L sequences) -> level fusion (appearance)
    appearance -> dense difference map -> map attention (motion)
    appearance, motion -> intra-modal attention (omega queries each)
    -> cross-modal co-attention -> fused representation -> boundary confidence
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, model_validator
from torch import nn

from mugak.core.attention import QueryAttention, SinusoidalPositionalEncoding
from mugak.core.config import PipelineConfig
from mugak.core.datamodel import AnnotatedVideo, BoundaryPrediction
from mugak.core.featbank import MultiLevelFeatureBank

PROB_EPS = 1e-7


class BoundaryConfidenceTrack(BaseModel):
    """Per-sampled-frame boundary probabilities of one video."""

    model_config = ConfigDict(frozen=True)

    video_id: str
    timestamps: List[float]
    confidences: List[float]

    @model_validator(mode="after")
    def _check(self) -> "BoundaryConfidenceTrack":
        if len(self.timestamps) != len(self.confidences):
            raise ValueError("timestamps and confidences differ in length")
        for a, b in zip(self.timestamps, self.timestamps[1:]):
            if not a < b:
                raise ValueError("timestamps must be strictly increasing")
        for c in self.confidences:
            if not 0.0 <= c <= 1.0:
                raise ValueError(f"confidence {c} outside [0, 1]")
        return self


@dataclass(frozen=True)
class LocalOutput:
    """Forward result of the local stage for a batch of clips."""

    confidence: torch.Tensor
    representation: torch.Tensor
    attentions: Dict[str, torch.Tensor] = field(default_factory=dict)


def compute_ddm(seq: torch.Tensor) -> torch.Tensor:
    """Signed pairwise differences (..., T, C) -> (..., C, T, T), M[c,i,j] = f[i,c] - f[j,c]."""
    seq = torch.as_tensor(seq)
    if seq.ndim < 2 or seq.shape[-2] < 1:
        raise ValueError(f"expected (..., T, C) with T >= 1, got shape {tuple(seq.shape)}")
    if not torch.isfinite(seq).all():
        raise ValueError("feature sequence contains non-finite values")
    f = seq.transpose(-1, -2)
    return f.unsqueeze(-1) - f.unsqueeze(-2)


class LevelFusion(nn.Module):
    """Softmax-weighted sum over the L bank levels."""

    def __init__(self, levels: int) -> None:
        super().__init__()
        self.logits = nn.Parameter(torch.zeros(levels))

    def forward(self, bank: torch.Tensor) -> torch.Tensor:
        """(B, L, T, D) -> (B, T, D)."""
        weights = torch.softmax(self.logits, dim=0)
        return torch.einsum("l,bltd->btd", weights, bank)


class MapAttention(nn.Module):
    """Aligns the difference map with appearance features.

    Row i of the output attends over the T difference vectors M[:, i, j];
    the query comes from appearance row i, keys and values are projections
    of the difference vectors.
    """

    def __init__(self, dim: int, heads: int) -> None:
        super().__init__()
        if dim % heads != 0:
            raise ValueError("dim must be divisible by heads")
        self.dim = dim
        self.heads = heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(
        self, ddm: torch.Tensor, appearance: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """ddm (B, C, T, T), appearance (B, T, D) -> ((B, T, D), weights (B, H, T, T))."""
        batch, channels, length, length_j = ddm.shape
        if length != length_j or appearance.shape[:2] != (batch, length):
            raise ValueError(
                f"shape mismatch: ddm {tuple(ddm.shape)} vs appearance {tuple(appearance.shape)}"
            )
        if channels != self.dim or appearance.shape[-1] != self.dim:
            raise ValueError(f"expected channel width {self.dim}")

        head_dim = self.dim // self.heads
        diffs = ddm.permute(0, 2, 3, 1)
        q = self.q_proj(appearance).view(batch, length, self.heads, head_dim)
        k = self.k_proj(diffs).view(batch, length, length, self.heads, head_dim)
        v = self.v_proj(diffs).view(batch, length, length, self.heads, head_dim)

        logits = torch.einsum("bihd,bijhd->bhij", q, k) / math.sqrt(head_dim)
        weights = torch.softmax(logits, dim=-1)
        out = torch.einsum("bhij,bijhd->bihd", weights, v).reshape(batch, length, self.dim)
        return self.out_proj(out), weights


class CrossModalAttention(nn.Module):
    """One co-attention block: each stream attends to the other, then both are fused."""

    def __init__(self, dim: int, heads: int) -> None:
        super().__init__()
        self.appearance_to_motion = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.motion_to_appearance = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm_appearance = nn.LayerNorm(dim)
        self.norm_motion = nn.LayerNorm(dim)
        self.proj = nn.Linear(2 * dim, dim)

    def forward(
        self, appearance: torch.Tensor, motion: torch.Tensor
    ) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
        """Both (B, omega, D) -> fused (B, D)."""
        if appearance.shape != motion.shape:
            raise ValueError(
                f"stream shapes differ: {tuple(appearance.shape)} vs {tuple(motion.shape)}"
            )
        a_att, a_weights = self.appearance_to_motion(
            appearance, motion, motion, need_weights=True, average_attn_weights=False
        )
        m_att, m_weights = self.motion_to_appearance(
            motion, appearance, appearance, need_weights=True, average_attn_weights=False
        )
        a = self.norm_appearance(appearance + a_att)
        m = self.norm_motion(motion + m_att)
        fused = self.proj(torch.cat([a.mean(dim=1), m.mean(dim=1)], dim=-1))
        return fused, {"cross_appearance": a_weights, "cross_motion": m_weights}


class ConfidenceHead(nn.Module):
    """Two-layer perceptron with a sigmoid output."""

    def __init__(self, dim: int) -> None:
        super().__init__()
        self.hidden = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, 1)

    def logit(self, fused: torch.Tensor) -> torch.Tensor:
        return self.out(F.relu(self.hidden(fused))).squeeze(-1)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logit(fused))


class DDMNet(nn.Module):
    """Local context model producing a boundary confidence per clip center."""

    def __init__(
        self,
        level_channels: Sequence[int],
        dim: int = 64,
        kernel_sizes: Sequence[int] = (1, 3, 5),
        omega: int = 5,
        heads: int = 4,
        pos_scale: float = 1.0,
        init_noise: float = 0.01,
    ) -> None:
        super().__init__()
        self.level_channels = list(level_channels)
        self.dim = dim
        self.bank = MultiLevelFeatureBank(level_channels, dim, kernel_sizes, init_noise=init_noise)
        self.fusion = LevelFusion(self.bank.L)
        self.positions = SinusoidalPositionalEncoding(dim, scale=pos_scale)
        self.map_attention = MapAttention(dim, heads)
        self.intra_appearance = QueryAttention(dim, heads, omega)
        self.intra_motion = QueryAttention(dim, heads, omega)
        self.cross = CrossModalAttention(dim, heads)
        self.head = ConfidenceHead(dim)

    @classmethod
    def from_config(cls, cfg: PipelineConfig, level_channels: Sequence[int]) -> "DDMNet":
        if len(level_channels) != cfg.m:
            raise ValueError(f"config has m={cfg.m} but data has {len(level_channels)} levels")
        return cls(
            level_channels,
            dim=cfg.feature_dim,
            kernel_sizes=cfg.resolved_kernel_sizes,
            omega=cfg.omega,
            heads=cfg.heads,
        )

    def forward(self, clips: Sequence[torch.Tensor]) -> LocalOutput:
        """m tensors (B, T, C_l) -> confidence (B,), representation (B, D)."""
        bank = self.bank(clips)
        appearance = self.fusion(bank)
        motion, map_weights = self.map_attention(compute_ddm(appearance), appearance)
        a_tokens, a_weights = self.intra_appearance(self.positions(appearance))
        m_tokens, m_weights = self.intra_motion(self.positions(motion))
        fused, cross_weights = self.cross(a_tokens, m_tokens)
        attentions = {
            "map": map_weights,
            "intra_appearance": a_weights,
            "intra_motion": m_weights,
            **cross_weights,
        }
        return LocalOutput(
            confidence=self.head(fused), representation=fused, attentions=attentions
        )


def label_frame(frame_time: float, gt: AnnotatedVideo, radius: float) -> int:
    """1 iff a ground-truth boundary lies within ``radius`` seconds of ``frame_time``."""
    if not radius > 0:
        raise ValueError("radius must be > 0")
    if not gt.boundaries:
        return 0
    nearest = min(abs(frame_time - b) for b in gt.boundaries)
    return int(nearest <= radius)


def local_loss(
    pred: Union[torch.Tensor, float], label: Union[torch.Tensor, int], eps: float = PROB_EPS
) -> torch.Tensor:
    """Binary cross-entropy on probabilities, clamped eps away from 0 and 1."""
    pred = torch.as_tensor(pred)
    label = torch.as_tensor(label, dtype=pred.dtype)
    p = pred.clamp(eps, 1.0 - eps)
    return -(label * torch.log(p) + (1.0 - label) * torch.log(1.0 - p))


def balanced_local_loss(
    probs: torch.Tensor, labels: torch.Tensor, eps: float = PROB_EPS
) -> torch.Tensor:
    """Batch mean of local_loss with positive terms weighted by negatives/positives."""
    labels = labels.to(probs.dtype)
    positives = labels.sum()
    negatives = labels.numel() - positives
    if positives > 0 and negatives > 0:
        pos_weight = negatives / positives
    else:
        pos_weight = torch.ones((), dtype=probs.dtype)
    weights = torch.where(labels > 0.5, pos_weight, torch.ones_like(labels))
    return (weights * local_loss(probs, labels, eps)).mean()


def extract_boundaries(
    track: BoundaryConfidenceTrack, tau: float
) -> List[BoundaryPrediction]:
    """Local maxima of the confidence track at or above ``tau``.

    An interior run of equal values is one peak when both of its outer
    neighbours are lower; the prediction sits at the run start. The first and
    last frames qualify when they are >= their single neighbour.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    values = np.asarray(track.confidences, dtype=np.float64)
    if values.size == 0:
        raise ValueError(f"confidence track of {track.video_id} is empty")

    size = values.size
    peaks: List[int] = []
    if size == 1 or values[0] >= values[1]:
        peaks.append(0)
    start = 1
    while start < size - 1:
        end = start
        while end + 1 < size - 1 and values[end + 1] == values[start]:
            end += 1
        value = values[start]
        if values[start - 1] < value and values[end + 1] < value:
            peaks.append(start)
        start = end + 1
    if size > 1 and values[-1] >= values[-2]:
        peaks.append(size - 1)

    return [
        BoundaryPrediction(time=track.timestamps[i], confidence=float(values[i]))
        for i in peaks
        if values[i] >= tau
    ]


def clip_batch(
    pooled: Sequence[np.ndarray], clip_indices: np.ndarray, dtype: Optional[torch.dtype] = None
) -> List[torch.Tensor]:
    """Gather (B, T) frame indices from per-level (F, C_l) sequences into m tensors."""
    dtype = dtype or torch.float32
    return [torch.as_tensor(level[clip_indices]).to(dtype) for level in pooled]
