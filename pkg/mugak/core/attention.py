"""Attention building blocks shared by the local and global stages."""

import math
from typing import Tuple

import torch
from torch import nn


def sinusoidal_encoding(length: int, dim: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Fixed (length, dim) sine/cosine position table."""
    position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div[: dim // 2])
    return table.to(dtype)


class SinusoidalPositionalEncoding(nn.Module):
    """Adds a scaled sinusoidal table to (B, T, D) tokens.

    ``scale=0`` switches positions off, which makes attention over the time
    axis order-agnostic.
    """

    def __init__(self, dim: int, scale: float = 1.0) -> None:
        super().__init__()
        self.dim = dim
        self.register_buffer("scale", torch.tensor(float(scale)), persistent=False)

    def table(self, length: int, like: torch.Tensor) -> torch.Tensor:
        return self.scale.to(like.dtype) * sinusoidal_encoding(length, self.dim, like.dtype)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.table(x.shape[1], x).unsqueeze(0)


class QueryAttention(nn.Module):
    """omega learnable queries attend over a token sequence."""

    def __init__(self, dim: int, heads: int, num_queries: int) -> None:
        super().__init__()
        self.queries = nn.Parameter(torch.empty(num_queries, dim))
        nn.init.normal_(self.queries)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)

    def forward(self, tokens: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """(B, T, D) -> ((B, omega, D), per-head weights (B, H, omega, T))."""
        if tokens.shape[-1] != self.queries.shape[-1]:
            raise ValueError(
                f"token width {tokens.shape[-1]} != query width {self.queries.shape[-1]}"
            )
        queries = self.queries.unsqueeze(0).expand(tokens.shape[0], -1, -1)
        out, weights = self.attn(
            queries, tokens, tokens, need_weights=True, average_attn_weights=False
        )
        return out, weights
