"""Additive observation noise driven by the layout's per-entry scales."""

from __future__ import annotations

import numpy as np

from .layout import ObservationLayout


def apply_obs_noise(vector: np.ndarray, layout: ObservationLayout,
                    rng: np.random.Generator) -> np.ndarray:
    """Gaussian noise per entry; zero-scale entries (mask, history, flags)
    come back bit-identical."""
    vec = np.asarray(vector, dtype=float)
    if vec.shape[-1] != layout.total_dim:
        raise ValueError(
            f"vector width {vec.shape[-1]} does not match layout "
            f"{layout.name!r} ({layout.total_dim})")
    if not layout.noise_std.any():
        return vec.copy()
    return vec + rng.normal(0.0, 1.0, vec.shape) * layout.noise_std
