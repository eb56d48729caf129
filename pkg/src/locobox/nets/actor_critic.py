"""Gaussian actor plus value critic for the tracking-stage policies."""

from __future__ import annotations

from collections.abc import Sequence

import torch
from torch import nn

from .mlp import mlp, require_finite

FIXED_LOG_STD = -2.9


class ActorCritic(nn.Module):
    """Separate actor and critic MLP towers over the same observation.

    The action head is linear (no activation) and the exploration scale is a
    fixed constant: ``log_std`` is registered as a buffer, never a parameter,
    so no optimizer can move it.
    """

    def __init__(self, obs_dim: int, action_dim: int,
                 hidden: Sequence[int] = (256, 256, 128)):
        super().__init__()
        self.obs_dim = int(obs_dim)
        self.action_dim = int(action_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.actor = mlp(self.obs_dim, self.hidden, self.action_dim)
        self.critic = mlp(self.obs_dim, self.hidden, 1)
        self.register_buffer(
            "log_std", torch.full((self.action_dim,), FIXED_LOG_STD))

    def forward(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(action_mean (n, J), value (n,)) for a batch of observations."""
        require_finite("obs", obs)
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(
                f"observation width {obs.shape[-1]} != expected {self.obs_dim}")
        return self.actor(obs), self.critic(obs).squeeze(-1)

    def action_dist(self, mean: torch.Tensor) -> torch.distributions.Normal:
        return torch.distributions.Normal(mean, torch.exp(self.log_std))
