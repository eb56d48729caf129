"""Domain randomization: per-episode physical parameters and push perturbations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class DomainRandRanges:
    added_base_mass: tuple = (-3.0, 3.0)        # kg on the torso
    base_com_offset: tuple = (-0.05, 0.05)      # m, torso CoM x shift
    motor_strength: tuple = (0.8, 1.2)
    ground_friction: tuple = (0.5, 2.0)
    gravity_offset: tuple = (-0.1, 0.1)         # m/s^2, resampled every interval
    gravity_interval_s: float = 4.0
    push_interval_s: float = 4.0
    max_push_vel: float = 1.0                   # m/s
    max_action_delay: int = 2                   # control steps (desk scale)
    object_mass: tuple = (0.15, 1.5)            # kg
    object_mass_rare: tuple = (0.05, 0.15)      # drawn every 10th episode
    rare_every: int = 10
    object_com_offset: tuple = (-0.05, 0.05)    # m, each axis
    object_inertia_scale: tuple = (0.5, 2.0)
    object_friction: tuple = (0.2, 1.2)
    object_restitution: tuple = (0.0, 0.3)
    enabled: bool = True


@dataclass
class DomainParams:
    """One draw of the randomized physical parameters (scalars or (n,) arrays)."""

    added_base_mass: float = 0.0
    base_com_offset: float = 0.0
    motor_strength: float = 1.0
    ground_friction: float = 1.0
    gravity_offset: float = 0.0
    action_delay_steps: int = 0
    object_mass: float = 1.0
    object_com_x: float = 0.0
    object_com_z: float = 0.0
    object_inertia_scale: float = 1.0
    object_friction: float = 0.8
    object_restitution: float = 0.0

    @staticmethod
    def stack(params: list) -> "DomainParams":
        """Batch a list of single-env draws into array-valued params."""
        out = DomainParams()
        for f in DomainParams.__dataclass_fields__:
            vals = [getattr(p, f) for p in params]
            setattr(out, f, np.asarray(vals))
        return out

    def set_env(self, i: int, p: "DomainParams") -> None:
        """Write one env slot of array-valued params from a scalar draw."""
        for f in DomainParams.__dataclass_fields__:
            getattr(self, f)[i] = getattr(p, f)


def nominal_params(n: int = 1) -> DomainParams:
    p = DomainParams()
    for f in DomainParams.__dataclass_fields__:
        v = getattr(p, f)
        if f == "action_delay_steps":
            setattr(p, f, np.full(n, v, dtype=np.int64))
        else:
            setattr(p, f, np.full(n, float(v)))
    return p


def _u(rng: np.random.Generator, lo_hi) -> float:
    lo, hi = lo_hi
    return float(rng.uniform(lo, hi))


def sample_domain_params(rng: np.random.Generator, ranges: DomainRandRanges,
                         episode_index: int = 0) -> DomainParams:
    """Uniform draw of every field; object mass from the rare range every
    `rare_every`-th episode. With randomization disabled, returns nominals
    (the rng is still advanced identically so seeds stay comparable)."""
    rare = (episode_index % ranges.rare_every) == ranges.rare_every - 1
    p = DomainParams(
        added_base_mass=_u(rng, ranges.added_base_mass),
        base_com_offset=_u(rng, ranges.base_com_offset),
        motor_strength=_u(rng, ranges.motor_strength),
        ground_friction=_u(rng, ranges.ground_friction),
        gravity_offset=_u(rng, ranges.gravity_offset),
        action_delay_steps=int(rng.integers(0, ranges.max_action_delay + 1)),
        object_mass=_u(rng, ranges.object_mass_rare if rare else ranges.object_mass),
        object_com_x=_u(rng, ranges.object_com_offset),
        object_com_z=_u(rng, ranges.object_com_offset),
        object_inertia_scale=_u(rng, ranges.object_inertia_scale),
        object_friction=_u(rng, ranges.object_friction),
        object_restitution=_u(rng, ranges.object_restitution),
    )
    if not ranges.enabled:
        return DomainParams()
    return p


def resample_gravity(params: DomainParams, rng: np.random.Generator,
                     ranges: DomainRandRanges) -> None:
    """In-place gravity offset refresh (called on the interval schedule)."""
    v = getattr(params, "gravity_offset")
    if isinstance(v, np.ndarray):
        params.gravity_offset = rng.uniform(ranges.gravity_offset[0],
                                            ranges.gravity_offset[1], size=v.shape)
    else:
        params.gravity_offset = _u(rng, ranges.gravity_offset)


def apply_push(state, rng: np.random.Generator, max_push_vel: float,
               env_mask: np.ndarray = None):
    """Add a random planar velocity impulse (magnitude <= max_push_vel) to the root.

    Returns the applied (n, 2) delta for logging. Mutates state.root_vel.
    """
    n = state.n
    ang = rng.uniform(0.0, 2.0 * np.pi, size=n)
    mag = rng.uniform(0.0, max_push_vel, size=n)
    dv = np.stack([mag * np.cos(ang), mag * np.sin(ang)], axis=1)
    if env_mask is not None:
        dv = dv * env_mask[:, None]
    state.root_vel[:, :2] += dv
    return dv
