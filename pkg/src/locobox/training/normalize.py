"""Running input normalization for policy observations.

Tracks a streaming mean/variance with Chan's parallel update so the result
is independent of chunking, and standardizes inputs with a clip guard.
Statistics are stored as buffers so they serialize with the owning module;
`to_meta`/`from_meta` move them through checkpoint metadata as tensors.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn


class RunningNormalizer(nn.Module):
    def __init__(self, dim: int, clip: float = 10.0, eps: float = 1e-8):
        super().__init__()
        if dim <= 0:
            raise ValueError("normalizer dimension must be positive")
        self.clip = float(clip)
        self.eps = float(eps)
        self.register_buffer("mean", torch.zeros(dim, dtype=torch.float64))
        self.register_buffer("var", torch.ones(dim, dtype=torch.float64))
        self.register_buffer("count", torch.zeros((), dtype=torch.float64))
        self.frozen = False

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @torch.no_grad()
    def update(self, batch) -> None:
        """Fold a (N, dim) batch into the running statistics."""
        if self.frozen:
            return
        x = torch.as_tensor(np.asarray(batch), dtype=torch.float64)
        x = x.reshape(-1, self.dim)
        if x.shape[0] == 0:
            return
        if not torch.isfinite(x).all():
            raise ValueError("non-finite values passed to normalizer update")
        bn = float(x.shape[0])
        b_mean = x.mean(dim=0)
        b_var = x.var(dim=0, unbiased=False)
        if self.count.item() == 0.0:
            self.mean.copy_(b_mean)
            self.var.copy_(b_var)
            self.count.fill_(bn)
            return
        tot = self.count + bn
        delta = b_mean - self.mean
        new_mean = self.mean + delta * (bn / tot)
        m2 = self.var * self.count + b_var * bn \
            + delta.square() * (self.count * bn / tot)
        self.mean.copy_(new_mean)
        self.var.copy_(m2 / tot)
        self.count.copy_(tot)

    def normalize(self, x):
        """Standardize (…, dim) input; identity until the first update."""
        t = torch.as_tensor(np.asarray(x)) if not torch.is_tensor(x) else x
        if t.shape[-1] != self.dim:
            raise ValueError(
                f"normalizer dim {self.dim} does not match input "
                f"{t.shape[-1]}")
        if self.count.item() == 0.0:
            return t.clone() if torch.is_tensor(x) else t
        mean = self.mean.to(t.dtype)
        std = torch.sqrt(self.var.to(t.dtype) + self.eps)
        out = (t - mean) / std
        return out.clamp(-self.clip, self.clip)

    def normalize_block(self, x, sl: slice) -> np.ndarray:
        """Standardize a (…, width) array holding only the ``sl`` columns of
        the full vector, using that slice of the running statistics."""
        x = np.asarray(x, dtype=float)
        if self.count.item() == 0.0:
            return x.copy()
        mean = self.mean[sl].numpy()
        std = np.sqrt(self.var[sl].numpy() + self.eps)
        if x.shape[-1] != mean.shape[0]:
            raise ValueError("block width does not match the slice")
        return np.clip((x - mean) / std, -self.clip, self.clip)

    def to_meta(self) -> dict:
        return {"mean": self.mean.clone(), "var": self.var.clone(),
                "count": self.count.clone(), "clip": self.clip}

    @classmethod
    def from_meta(cls, meta: dict) -> "RunningNormalizer":
        mean = torch.as_tensor(meta["mean"], dtype=torch.float64)
        norm = cls(mean.shape[0], clip=float(meta.get("clip", 10.0)))
        norm.mean.copy_(mean)
        norm.var.copy_(torch.as_tensor(meta["var"], dtype=torch.float64))
        norm.count.copy_(torch.as_tensor(meta["count"], dtype=torch.float64))
        return norm
