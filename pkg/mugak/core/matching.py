"""Optimal one-to-one assignment between two sets."""

from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.optimize import linear_sum_assignment


class Assignment(BaseModel):
    """(row, column) pairs, injective in both coordinates."""

    model_config = ConfigDict(frozen=True)

    pairs: List[Tuple[int, int]]

    @model_validator(mode="after")
    def _check_injective(self) -> "Assignment":
        rows = [r for r, _ in self.pairs]
        cols = [c for _, c in self.pairs]
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise ValueError("assignment is not one-to-one")
        return self

    def __len__(self) -> int:
        return len(self.pairs)

    def rows(self) -> List[int]:
        return [r for r, _ in self.pairs]

    def columns(self) -> List[int]:
        return [c for _, c in self.pairs]

    def total(self, cost: np.ndarray) -> float:
        cost = np.asarray(cost, dtype=np.float64)
        return float(sum(cost[r, c] for r, c in self.pairs))


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimum-cost assignment of size min(N, M) for an N x M cost matrix."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be a 2-D matrix, got shape {cost.shape}")
    if cost.size == 0:
        return Assignment(pairs=[])
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite values")
    rows, cols = linear_sum_assignment(cost)
    return Assignment(pairs=[(int(r), int(c)) for r, c in zip(rows, cols)])
