"""Global boundary decoding over sliding windows of clip representations."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, model_validator
from torch import nn

from mugak.core.attention import SinusoidalPositionalEncoding
from mugak.core.config import PipelineConfig
from mugak.core.datamodel import BoundaryPrediction
from mugak.core.ddmnet import PROB_EPS
from mugak.core.matching import Assignment, hungarian

TensorLike = Union[torch.Tensor, np.ndarray, Sequence[float]]


class WindowPrediction(BaseModel):
    """Per-query normalized locations and boundary confidences for one window."""

    model_config = ConfigDict(frozen=True)

    locations: List[float]
    confidences: List[float]

    @model_validator(mode="after")
    def _check(self) -> "WindowPrediction":
        if len(self.locations) != len(self.confidences):
            raise ValueError("locations and confidences differ in length")
        for value in (*self.locations, *self.confidences):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"value {value} outside [0, 1]")
        return self

    @property
    def num_queries(self) -> int:
        return len(self.locations)


@dataclass(frozen=True)
class DecoderOutput:
    locations: torch.Tensor
    confidences: torch.Tensor
    attentions: List[Dict[str, torch.Tensor]] = field(default_factory=list)


def boundary_attentive(features: TensorLike, confidences: TensorLike) -> torch.Tensor:
    """Scale each feature row by its boundary confidence: (..., N, D) x (..., N)."""
    features = torch.as_tensor(features)
    confidences = torch.as_tensor(confidences, dtype=features.dtype)
    if features.shape[:-1] != confidences.shape:
        raise ValueError(
            f"{tuple(features.shape[:-1])} feature rows vs {tuple(confidences.shape)} confidences"
        )
    if ((confidences < 0) | (confidences > 1)).any():
        raise ValueError("confidences must lie in [0, 1]")
    return features * confidences.unsqueeze(-1)


class BoundaryQuerySet(nn.Module):
    """num_queries learnable decoder input embeddings."""

    def __init__(self, num_queries: int, dim: int) -> None:
        super().__init__()
        if num_queries < 1:
            raise ValueError("num_queries must be >= 1")
        self.embeddings = nn.Parameter(torch.empty(num_queries, dim))
        nn.init.normal_(self.embeddings)

    @property
    def num_queries(self) -> int:
        return int(self.embeddings.shape[0])

    def forward(self, batch: int) -> torch.Tensor:
        return self.embeddings.unsqueeze(0).expand(batch, -1, -1)


class DecoderLayer(nn.Module):
    """Query self-attention, cross-attention over time steps, then a feed-forward sublayer.

    Post-norm residual blocks. Positional encodings are added to the keys of
    the cross-attention only.
    """

    def __init__(self, dim: int, heads: int, ffn_dim: Optional[int] = None) -> None:
        super().__init__()
        ffn_dim = ffn_dim or 2 * dim
        self.self_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.cross_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.ReLU(), nn.Linear(ffn_dim, dim))
        self.norm_self = nn.LayerNorm(dim)
        self.norm_cross = nn.LayerNorm(dim)
        self.norm_ffn = nn.LayerNorm(dim)

    def forward(
        self, queries: torch.Tensor, memory: torch.Tensor, pos: torch.Tensor
    ) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
        attended, self_weights = self.self_attn(
            queries, queries, queries, need_weights=True, average_attn_weights=False
        )
        queries = self.norm_self(queries + attended)
        attended, cross_weights = self.cross_attn(
            queries, memory + pos, memory, need_weights=True, average_attn_weights=False
        )
        queries = self.norm_cross(queries + attended)
        queries = self.norm_ffn(queries + self.ffn(queries))
        return queries, {"self": self_weights, "cross": cross_weights}


class BoundaryDecoder(nn.Module):
    """Transformer decoder mapping a window of boundary-attentive features to query outputs."""

    def __init__(
        self,
        dim: int = 64,
        num_queries: int = 10,
        layers: int = 2,
        heads: int = 4,
        window_len: int = 100,
        pos_scale: float = 1.0,
    ) -> None:
        super().__init__()
        self.dim = dim
        self.window_len = window_len
        self.queries = BoundaryQuerySet(num_queries, dim)
        self.positions = SinusoidalPositionalEncoding(dim, scale=pos_scale)
        self.layers = nn.ModuleList(DecoderLayer(dim, heads) for _ in range(layers))
        self.location_head = nn.Sequential(nn.Linear(dim, dim), nn.ReLU(), nn.Linear(dim, 1))
        self.class_head = nn.Linear(dim, 1)

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "BoundaryDecoder":
        return cls(
            dim=cfg.feature_dim,
            num_queries=cfg.num_queries,
            layers=cfg.decoder_layers,
            heads=cfg.heads,
            window_len=cfg.window_len,
        )

    @property
    def num_queries(self) -> int:
        return self.queries.num_queries

    def forward(self, memory: torch.Tensor) -> DecoderOutput:
        """(B, window_len, D) -> locations (B, Q), confidences (B, Q)."""
        if memory.ndim != 3 or memory.shape[1:] != (self.window_len, self.dim):
            raise ValueError(
                f"expected (batch, {self.window_len}, {self.dim}), got {tuple(memory.shape)}"
            )
        pos = self.positions.table(self.window_len, memory).unsqueeze(0)
        hidden = self.queries(memory.shape[0])
        attentions = []
        for layer in self.layers:
            hidden, weights = layer(hidden, memory, pos)
            attentions.append(weights)
        locations = torch.sigmoid(self.location_head(hidden)).squeeze(-1)
        confidences = torch.sigmoid(self.class_head(hidden)).squeeze(-1)
        return DecoderOutput(locations=locations, confidences=confidences, attentions=attentions)


def decode_window(features: TensorLike, decoder: BoundaryDecoder) -> WindowPrediction:
    """Decode one padded (window_len, D) window."""
    dtype = next(decoder.parameters()).dtype
    memory = torch.as_tensor(features).to(dtype)
    if memory.ndim != 2:
        raise ValueError(f"expected a (window_len, D) window, got shape {tuple(memory.shape)}")
    with torch.no_grad():
        out = decoder(memory.unsqueeze(0))
    return WindowPrediction(
        locations=out.locations[0].double().clamp(0.0, 1.0).tolist(),
        confidences=out.confidences[0].double().clamp(0.0, 1.0).tolist(),
    )


def _loss_inputs(
    locations: TensorLike, confidences: TensorLike, gt_locations: TensorLike
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    locations = torch.as_tensor(locations)
    confidences = torch.as_tensor(confidences, dtype=locations.dtype)
    gt = torch.as_tensor(gt_locations, dtype=locations.dtype).reshape(-1)
    if locations.ndim != 1 or locations.shape != confidences.shape:
        raise ValueError("locations and confidences must be equal-length vectors")
    if ((gt < 0) | (gt > 1)).any():
        raise ValueError("ground-truth locations must lie in [0, 1]")
    if gt.numel() > locations.numel():
        raise ValueError(f"{gt.numel()} ground truths exceed {locations.numel()} queries")
    return locations, confidences, gt


def match_queries(
    locations: TensorLike,
    confidences: TensorLike,
    gt_locations: TensorLike,
    lambda_loc: float = 5.0,
    lambda_cls: float = 1.0,
) -> Assignment:
    """Hungarian alignment of queries (rows) to ground-truth locations (columns)."""
    locations, confidences, gt = _loss_inputs(locations, confidences, gt_locations)
    cost = lambda_loc * (locations[:, None] - gt[None, :]).abs() + lambda_cls * (
        1.0 - confidences[:, None]
    )
    return hungarian(cost.detach().cpu().numpy())


def set_prediction_loss(
    locations: TensorLike,
    confidences: TensorLike,
    gt_locations: TensorLike,
    lambda_loc: float = 5.0,
    lambda_cls: float = 1.0,
    eps: float = PROB_EPS,
    assignment: Optional[Assignment] = None,
) -> torch.Tensor:
    """Matched queries regress to their ground truth and classify as boundary; the rest as none.

    Averaged over queries. Pass ``assignment`` to hold the matching fixed.
    """
    locations, confidences, gt = _loss_inputs(locations, confidences, gt_locations)
    if assignment is None:
        assignment = match_queries(locations, confidences, gt, lambda_loc, lambda_cls)

    p = confidences.clamp(eps, 1.0 - eps)
    matched = torch.zeros_like(p, dtype=torch.bool)
    loss = torch.zeros((), dtype=locations.dtype)
    if len(assignment):
        rows = torch.as_tensor(assignment.rows(), dtype=torch.long)
        cols = torch.as_tensor(assignment.columns(), dtype=torch.long)
        matched[rows] = True
        loss = loss + (
            lambda_loc * (locations[rows] - gt[cols]).abs() - lambda_cls * torch.log(p[rows])
        ).sum()
    loss = loss - lambda_cls * torch.log(1.0 - p[~matched]).sum()
    return loss / locations.numel()


def batch_set_prediction_loss(
    out: DecoderOutput,
    targets: Sequence[TensorLike],
    lambda_loc: float = 5.0,
    lambda_cls: float = 1.0,
) -> torch.Tensor:
    """Mean set prediction loss over a batch of windows."""
    if len(targets) != out.locations.shape[0]:
        raise ValueError("one target list per window is required")
    losses = [
        set_prediction_loss(loc, conf, gt, lambda_loc, lambda_cls)
        for loc, conf, gt in zip(out.locations, out.confidences, targets)
    ]
    return torch.stack(losses).mean()


def emit_predictions(
    pred: WindowPrediction, window_origin: float, window_span: float, theta: float
) -> List[BoundaryPrediction]:
    """Queries with p_bc > theta, mapped to absolute seconds and sorted by time."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    kept = [
        BoundaryPrediction(time=window_origin + loc * window_span, confidence=conf)
        for loc, conf in zip(pred.locations, pred.confidences)
        if conf > theta
    ]
    return sorted(kept, key=lambda p: (p.time, -p.confidence))

