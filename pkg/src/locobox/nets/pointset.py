"""Order-invariant encoder for sampled outline points."""

from __future__ import annotations

from collections.abc import Sequence

import torch
from torch import nn

from .mlp import mlp


class PointSetEncoder(nn.Module):
    """Shared per-point map followed by a global max statistic.

    Pooling is max-only: unlike a sum or mean, the maximum is exactly
    associative and commutative in floating point, so the output is
    bit-identical under any permutation of the input points.
    """

    def __init__(self, point_dim: int, feat_dim: int,
                 hidden: Sequence[int] = (64, 64)):
        super().__init__()
        self.point_dim = int(point_dim)
        self.feat_dim = int(feat_dim)
        self.point_map = mlp(self.point_dim, list(hidden)[:-1], list(hidden)[-1],
                             activation=nn.GELU, final_activation=True)
        self.out = nn.Linear(list(hidden)[-1], self.feat_dim)

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        """(…, P, point_dim) -> (…, feat_dim)."""
        if points.shape[-1] != self.point_dim:
            raise ValueError(
                f"point width {points.shape[-1]} != expected {self.point_dim}")
        pooled = self.point_map(points).amax(dim=-2)
        return self.out(pooled)
