"""Expert-matching distillation losses with scheduled weights.

The student is trained on rollouts where the executed action is blended
between expert and student (``dagger_fraction``), while the expert is
queried on every visited state to supply the matching target. The total
objective combines action matching for the posterior-conditioned and
prior-only heads, the closed-form Gaussian divergence between posterior and
prior, a temporal smoothness penalty on the posterior latent mean, and
mask-weighted reconstruction of hidden observation groups.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from ..obs.mask import GROUPS
from .schedules import dagger_fraction, distill_lr, lambda_kl, lambda_smooth

_BREAKPOINTS = ("dagger_full_teacher_until", "dagger_full_student_at",
                "ramp_start", "ramp_width", "lr_warmup_end", "lr_decay_end")


@dataclass
class DistillConfig:
    dagger_full_teacher_until: float = 500.0
    dagger_full_student_at: float = 1500.0
    ramp_start: float = 500.0
    ramp_width: float = 3000.0
    kl_lo: float = 0.001
    kl_hi: float = 0.1
    smooth_lo: float = 1e-4
    smooth_hi: float = 1e-3
    lr_peak: float = 2e-4
    lr_warmup_end: float = 500.0
    lr_final: float = 5e-5
    lr_decay_end: float = 5500.0
    lambda_e: float = 1.0
    lambda_a: float = 1.0
    lambda_g: float = 1.0
    lambda_p: float = 1.0          # prior action-matching weight (configurable)
    horizon: int = 8
    minibatch: int = 4096
    mini_epochs: int = 2
    n_envs: int = 4096

    @classmethod
    def desk(cls, epoch_scale: float = 1.0) -> "DistillConfig":
        return cls(n_envs=64, minibatch=256).scaled(epoch_scale)

    def scaled(self, epoch_scale: float) -> "DistillConfig":
        """Copy with every epoch breakpoint multiplied by ``epoch_scale``."""
        if epoch_scale <= 0:
            raise ValueError("epoch_scale must be positive")
        return replace(self, **{k: getattr(self, k) * epoch_scale
                                for k in _BREAKPOINTS})

    def validate(self) -> None:
        if not 0 <= self.dagger_full_teacher_until \
                < self.dagger_full_student_at:
            raise ValueError("expert-rollout window must end after it starts")
        if self.ramp_width <= 0:
            raise ValueError("ramp width must be positive")
        if self.horizon <= 0 or self.n_envs <= 0 or self.minibatch <= 0:
            raise ValueError("horizon, env count, and minibatch must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def kl_diag_gaussian(mean_q: torch.Tensor, std_q: torch.Tensor,
                     mean_p: torch.Tensor, std_p: torch.Tensor
                     ) -> torch.Tensor:
    """KL(q || p) between diagonal Gaussians, summed over the last dim."""
    var_q = std_q.square()
    var_p = std_p.square()
    term = torch.log(std_p / std_q) \
        + (var_q + (mean_q - mean_p).square()) / (2.0 * var_p) - 0.5
    return term.sum(dim=-1)


def _sq(x: torch.Tensor) -> torch.Tensor:
    """Squared L2 norm over the feature dimension."""
    return x.square().sum(dim=-1)


def latent_smoothness(post_mean: torch.Tensor,
                      fresh: torch.Tensor) -> torch.Tensor:
    """Mean squared step of the posterior latent mean along the horizon.

    ``post_mean`` is (T, B, z); ``fresh`` is (T, B) with 1 where the env was
    reset right before that step, so no pair bridges an episode boundary.
    """
    if post_mean.shape[0] < 2:
        return post_mean.sum() * 0.0
    diff = _sq(post_mean[1:] - post_mean[:-1])
    keep = 1.0 - fresh[1:]
    denom = keep.sum().clamp(min=1.0)
    return (diff * keep).sum() / denom


def masked_group_recon(recon: dict, targets: dict, flags: torch.Tensor
                       ) -> torch.Tensor:
    """Mask-weighted reconstruction error summed over the hidden groups.

    ``flags`` is (B, len(GROUPS)) availability; a group only contributes for
    samples where it was hidden (flag 0), so a fully visible batch scores 0.
    """
    total = None
    for g, pred in recon.items():
        gi = GROUPS.index(g)
        hidden = 1.0 - flags[:, gi]
        denom = hidden.sum().clamp(min=1.0)
        term = (_sq(pred - targets[g]) * hidden).sum() / denom
        total = term if total is None else total + term
    if total is None:
        raise ValueError("no reconstruction heads to score")
    return total


def distill_losses(model, batch: dict, epoch: float, cfg: DistillConfig):
    """Total scheduled loss and per-term breakdown for one rollout batch.

    ``batch`` holds (T, B, ...) tensors: ``obs``, ``privileged_obs``,
    ``mask_flags`` (T, B, groups), ``expert_actions``, ``fresh`` (T, B),
    ``aux_targets`` {group: (T, B, dim)}, ``local_goal_target``.
    """
    required = ("obs", "privileged_obs", "mask_flags", "expert_actions",
                "fresh", "aux_targets", "local_goal_target")
    for key in required:
        if key not in batch or batch[key] is None:
            raise ValueError(f"distillation batch is missing {key!r}")
    obs = batch["obs"]
    T, B = obs.shape[0], obs.shape[1]
    flat = obs.reshape(T * B, -1)
    flags = batch["mask_flags"].reshape(T * B, -1)
    priv = batch["privileged_obs"].reshape(T * B, -1)
    a_exp = batch["expert_actions"].reshape(T * B, -1)

    mean, latents, aux = model(flat, flags, privileged_obs=priv,
                               mode="posterior")
    mean_prior, _, _ = model(flat, flags, mode="prior_only")

    l_e = _sq(mean - a_exp).mean()
    l_p = _sq(mean_prior - a_exp).mean()
    l_kl = kl_diag_gaussian(latents.post_mean, latents.post_std,
                            latents.prior_mean, latents.prior_std).mean()
    zdim = latents.post_mean.shape[-1]
    l_s = latent_smoothness(latents.post_mean.reshape(T, B, zdim),
                            batch["fresh"])
    targets = {g: v.reshape(T * B, -1)
               for g, v in batch["aux_targets"].items()}
    l_a = masked_group_recon(aux["recon"], targets, flags)
    local_gi = GROUPS.index("local_goal")
    hidden_local = 1.0 - flags[:, local_gi]
    denom = hidden_local.sum().clamp(min=1.0)
    local_target = batch["local_goal_target"].reshape(T * B, -1)
    l_g = (_sq(aux["local_goal"] - local_target) * hidden_local).sum() / denom

    w_kl = lambda_kl(epoch, cfg)
    w_s = lambda_smooth(epoch, cfg)
    total = cfg.lambda_e * l_e + w_kl * l_kl + w_s * l_s \
        + cfg.lambda_a * l_a + cfg.lambda_g * l_g + cfg.lambda_p * l_p
    terms = {
        "action_match": float(l_e.detach()), "prior_match": float(l_p.detach()),
        "kl": float(l_kl.detach()), "latent_smooth": float(l_s.detach()),
        "aux_recon": float(l_a.detach()), "local_goal": float(l_g.detach()),
        "lambda_kl": w_kl, "lambda_smooth": w_s,
        "dagger": dagger_fraction(epoch, cfg),
        "lr": distill_lr(epoch, cfg),
        "total": float(total.detach()),
    }
    return total, terms


def choose_expert_actions(rng: np.random.Generator, beta: float,
                          expert: np.ndarray, student: np.ndarray
                          ) -> np.ndarray:
    """Per-env Bernoulli(beta) pick of the executed action."""
    take = rng.uniform(size=expert.shape[0]) < beta
    return np.where(take[:, None], expert, student)
