"""Small feed-forward building blocks shared by the policy networks."""

from __future__ import annotations

from collections.abc import Sequence

import torch
from torch import nn


def xavier_init(module: nn.Module) -> None:
    """Xavier-uniform weights and zero biases on every linear layer."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def mlp(in_dim: int, hidden: Sequence[int], out_dim: int | None = None,
        activation: type[nn.Module] = nn.ReLU,
        final_activation: bool = False) -> nn.Sequential:
    """Stack of Linear+activation layers, optionally capped by a linear head."""
    dims = [in_dim, *hidden]
    layers: list[nn.Module] = []
    for a, b in zip(dims[:-1], dims[1:]):
        layers.append(nn.Linear(a, b))
        layers.append(activation())
    if out_dim is not None:
        layers.append(nn.Linear(dims[-1], out_dim))
        if final_activation:
            layers.append(activation())
    net = nn.Sequential(*layers)
    xavier_init(net)
    return net


def require_finite(name: str, value: torch.Tensor) -> None:
    if not torch.isfinite(value).all():
        raise ValueError(f"{name} contains non-finite entries")
