"""Clipped-surrogate policy optimization.

The update is written against a minimal policy protocol so the same code
drives the plain actor-critic stages and the prior-only student finetuning:
``policy(obs, flags) -> (action_mean, value)`` plus a ``log_std`` tensor and
``parameters()``. Losses are also exposed stand-alone so the finetuning
stage can combine them with distillation terms in a single optimizer step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn


@dataclass
class PPOConfig:
    lr: float = 2e-5
    clip: float = 0.2
    gae_lambda: float = 0.95
    gamma: float = 0.99
    horizon: int = 32
    minibatch: int = 16384
    mini_epochs: int = 6
    entropy_coef: float = 0.0
    critic_coef: float = 5.0
    bounds_coef: float = 10.0
    max_grad_norm: float = 1.0
    n_envs: int = 4096
    normalize_input: bool = True
    normalize_value: bool = False
    normalize_advantage: bool = True

    @classmethod
    def desk(cls) -> "PPOConfig":
        """Small-rig run: 64 envs, minibatch scaled by the env ratio."""
        return cls(n_envs=64, minibatch=256)

    def validate(self) -> None:
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must be in (0, 1)")
        if self.n_envs <= 0 or self.horizon <= 0 or self.minibatch <= 0:
            raise ValueError("env count, horizon, and minibatch must be positive")
        if self.mini_epochs <= 0:
            raise ValueError("mini_epochs must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class PPOBatch:
    """Flattened rollout data; arrays are (N, ...) over N = horizon * envs."""

    obs: np.ndarray
    actions: np.ndarray
    old_logp: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    mask_flags: np.ndarray | None = None   # (N, groups) for masked policies

    @property
    def size(self) -> int:
        return self.obs.shape[0]


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                bootstrap_value: np.ndarray, gamma: float, lam: float):
    """Generalized advantage estimates over a (T, n) rollout.

    ``dones[t]`` marks that the episode ended when transitioning out of step
    t, so no value bootstraps across it. Returns (advantages, returns),
    both (T, n), with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    cont = 1.0 - np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    if values.shape != rewards.shape or cont.shape != rewards.shape:
        raise ValueError("rewards, values, and dones must share shape (T, n)")
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    gae = np.zeros(rewards.shape[1], dtype=np.float64)
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * next_value * cont[t] - values[t]
        gae = delta + gamma * lam * cont[t] * gae
        adv[t] = gae
        next_value = values[t]
    return adv, adv + values


def gaussian_logp(mean: torch.Tensor, log_std: torch.Tensor,
                  actions: torch.Tensor) -> torch.Tensor:
    """Diagonal-Gaussian log density, summed over the action dimension."""
    var = torch.exp(2.0 * log_std)
    return (-0.5 * (actions - mean) ** 2 / var - log_std
            - 0.5 * math.log(2.0 * math.pi)).sum(dim=-1)


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    a = np.asarray(adv, dtype=np.float64)
    return (a - a.mean()) / (a.std() + eps)


def bounds_penalty(mean: torch.Tensor, bounds) -> torch.Tensor:
    """Squared excursion of the pre-noise action mean outside [lo, hi]."""
    lo, hi = bounds
    lo = torch.as_tensor(lo, dtype=mean.dtype, device=mean.device)
    hi = torch.as_tensor(hi, dtype=mean.dtype, device=mean.device)
    over = torch.clamp(mean - hi, min=0.0)
    under = torch.clamp(lo - mean, min=0.0)
    return (over.square() + under.square()).sum(dim=-1).mean()


def ppo_losses(policy, obs: torch.Tensor, actions: torch.Tensor,
               old_logp: torch.Tensor, advantages: torch.Tensor,
               returns: torch.Tensor, cfg: PPOConfig,
               bounds=None, mask_flags: torch.Tensor | None = None,
               pg_multiplier: float = 1.0):
    """Total loss and detached stats for one minibatch.

    total = pg_multiplier * (surrogate + bounds_coef * bounds
                             - entropy_coef * entropy)
            + critic_coef * critic
    The policy-gradient gate never touches the critic term.
    """
    mean, value = policy(obs, mask_flags)
    logp = gaussian_logp(mean, policy.log_std.to(mean.dtype), actions)
    ratio = torch.exp(logp - old_logp)
    clipped = torch.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
    surrogate = -torch.min(ratio * advantages, clipped * advantages).mean()
    critic = (value - returns).square().mean()
    bl = bounds_penalty(mean, bounds) if bounds is not None \
        else torch.zeros((), dtype=mean.dtype, device=mean.device)
    log_std = policy.log_std.to(mean.dtype)
    entropy = (0.5 * (1.0 + math.log(2.0 * math.pi)) + log_std).sum()
    total = pg_multiplier * (surrogate + cfg.bounds_coef * bl
                             - cfg.entropy_coef * entropy) \
        + cfg.critic_coef * critic
    with torch.no_grad():
        stats = {
            "surrogate": float(surrogate),
            "critic": float(critic),
            "bounds": float(bl),
            "entropy": float(entropy),
            "approx_kl": float((old_logp - logp).mean()),
            "clip_frac": float(((ratio - 1.0).abs() > cfg.clip)
                               .float().mean()),
        }
    return total, stats


def iter_minibatches(n: int, minibatch: int, rng: np.random.Generator):
    """Yield disjoint shuffled index arrays covering [0, n)."""
    order = rng.permutation(n)
    size = min(minibatch, n)
    for start in range(0, n - size + 1, size):
        yield order[start:start + size]


def ppo_update(policy, optimizer: torch.optim.Optimizer, batch: PPOBatch,
               cfg: PPOConfig, rng: np.random.Generator,
               bounds=None, pg_multiplier: float = 1.0) -> dict:
    """Run cfg.mini_epochs of minibatch updates over the batch."""
    cfg.validate()
    if batch.size == 0:
        raise ValueError("empty rollout batch")
    adv = normalize_advantages(batch.advantages) if cfg.normalize_advantage \
        else np.asarray(batch.advantages, dtype=np.float64)
    dev = policy.log_std.device
    dt = torch.float32
    obs_t = torch.as_tensor(batch.obs, dtype=dt, device=dev)
    act_t = torch.as_tensor(batch.actions, dtype=dt, device=dev)
    logp_t = torch.as_tensor(batch.old_logp, dtype=dt, device=dev)
    adv_t = torch.as_tensor(adv, dtype=dt, device=dev)
    ret_t = torch.as_tensor(batch.returns, dtype=dt, device=dev)
    flags_t = None if batch.mask_flags is None else torch.as_tensor(
        batch.mask_flags, dtype=dt, device=dev)

    agg: dict = {}
    count = 0
    for _ in range(cfg.mini_epochs):
        for idx in iter_minibatches(batch.size, cfg.minibatch, rng):
            i = torch.as_tensor(idx, device=dev)
            fl = None if flags_t is None else flags_t[i]
            total, stats = ppo_losses(
                policy, obs_t[i], act_t[i], logp_t[i], adv_t[i], ret_t[i],
                cfg, bounds=bounds, mask_flags=fl,
                pg_multiplier=pg_multiplier)
            optimizer.zero_grad(set_to_none=True)
            total.backward()
            grad_norm = nn.utils.clip_grad_norm_(
                [p for p in policy.parameters() if p.requires_grad],
                cfg.max_grad_norm)
            optimizer.step()
            stats["loss"] = float(total.detach())
            stats["grad_norm"] = float(grad_norm)
            for k, v in stats.items():
                agg[k] = agg.get(k, 0.0) + v
            count += 1
    return {k: v / count for k, v in agg.items()}


class ACPolicy(nn.Module):
    """Adapter: plain actor-critic under the PPO policy protocol."""

    def __init__(self, net):
        super().__init__()
        self.net = net

    @property
    def log_std(self):
        return self.net.log_std

    def forward(self, obs, mask_flags=None):
        return self.net(obs)


class PriorStudentPolicy(nn.Module):
    """Adapter: student in deployable prior-only mode under the protocol.

    The privileged posterior is never evaluated, so optimization through
    this adapter leaves posterior parameters untouched.
    """

    def __init__(self, student):
        super().__init__()
        self.student = student

    @property
    def log_std(self):
        return self.student.log_std

    def forward(self, obs, mask_flags):
        if mask_flags is None:
            raise ValueError("student policy requires availability flags")
        mean, _, _ = self.student(obs, mask_flags, mode="prior_only")
        return mean, self.student.value(obs)
