"""Closed-form training schedules.

Every schedule is a pure function of the epoch and a config carrying its
breakpoints, so logged curves can be checked against these formulas exactly.
Desk-scale runs shrink the breakpoints with a single ``epoch_scale`` factor
(see the configs' ``scaled`` methods), preserving the shape of each curve.
"""

from __future__ import annotations

import math


def ramp(s: float) -> float:
    """Half-cosine ease-in-out on [0, 1]: 0 at s=0, 1 at s=1, C1 at both ends."""
    s = min(max(float(s), 0.0), 1.0)
    return (1.0 - math.cos(math.pi * s)) / 2.0


def ramp_window(epoch: float, start: float, width: float) -> float:
    """Normalized position of `epoch` inside [start, start + width], clipped."""
    if width <= 0:
        raise ValueError("ramp window width must be positive")
    return min(max((float(epoch) - start) / width, 0.0), 1.0)


def dagger_fraction(epoch: float, cfg) -> float:
    """Share of rollout actions taken by the expert at this epoch.

    1 before ``dagger_full_teacher_until``, then linear to 0 at
    ``dagger_full_student_at``, 0 afterward.
    """
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    lo = cfg.dagger_full_teacher_until
    hi = cfg.dagger_full_student_at
    if epoch < lo:
        return 1.0
    if epoch >= hi:
        return 0.0
    return (hi - float(epoch)) / (hi - lo)


def lambda_kl(epoch: float, cfg) -> float:
    """Latent-divergence weight: kl_lo -> kl_hi over the shared ramp window."""
    s = ramp_window(epoch, cfg.ramp_start, cfg.ramp_width)
    return cfg.kl_lo + (cfg.kl_hi - cfg.kl_lo) * ramp(s)


def lambda_smooth(epoch: float, cfg) -> float:
    """Latent-smoothness weight: smooth_lo -> smooth_hi over the ramp window."""
    s = ramp_window(epoch, cfg.ramp_start, cfg.ramp_width)
    return cfg.smooth_lo + (cfg.smooth_hi - cfg.smooth_lo) * ramp(s)


def distill_lr(epoch: float, cfg) -> float:
    """Linear warmup to lr_peak at lr_warmup_end, then linear decay to
    lr_final at lr_decay_end, constant afterward."""
    e = float(epoch)
    if e < 0:
        raise ValueError("epoch must be non-negative")
    if e < cfg.lr_warmup_end:
        return cfg.lr_peak * e / cfg.lr_warmup_end
    if e >= cfg.lr_decay_end:
        return cfg.lr_final
    span = cfg.lr_decay_end - cfg.lr_warmup_end
    return cfg.lr_peak + (cfg.lr_final - cfg.lr_peak) * (e - cfg.lr_warmup_end) / span


def critic_warmup_multiplier(epoch: float, warmup_epochs: float) -> float:
    """Policy-gradient gate during finetuning: 0 at epoch 0, linear to 1 at
    ``warmup_epochs``, 1 afterward. The critic loss is never gated."""
    if warmup_epochs <= 0:
        return 1.0
    return min(max(float(epoch) / float(warmup_epochs), 0.0), 1.0)
