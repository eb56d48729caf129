"""Availability flags for maskable observation groups.

Each flag is an (n,) float array, 1 = visible / 0 = masked.  The object
sub-groups (translation, rotation residual, absolute position, point set)
can be driven together or independently.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

# maskable groups, in mask-vector order
GROUPS = ("global_goal", "goal_cmd", "local_goal",
          "object_trans", "object_rot", "object_pos", "object_pcd")
_OBJECT_GROUPS = ("object_trans", "object_rot", "object_pos", "object_pcd")


@dataclass
class AvailabilityMask:
    global_goal: np.ndarray
    goal_cmd: np.ndarray
    local_goal: np.ndarray
    object_trans: np.ndarray
    object_rot: np.ndarray
    object_pos: np.ndarray
    object_pcd: np.ndarray

    @classmethod
    def all_visible(cls, n: int) -> "AvailabilityMask":
        return cls(**{g: np.ones(n) for g in GROUPS})

    @classmethod
    def none_visible(cls, n: int) -> "AvailabilityMask":
        return cls(**{g: np.zeros(n) for g in GROUPS})

    @property
    def n(self) -> int:
        return self.global_goal.shape[0]

    def copy(self) -> "AvailabilityMask":
        return AvailabilityMask(**{f.name: getattr(self, f.name).copy()
                                   for f in fields(self)})

    def as_dict(self) -> dict:
        return {g: getattr(self, g) for g in GROUPS}


def sample_availability_mask(rng: np.random.Generator, curriculum_p,
                             n: int) -> AvailabilityMask:
    """Independent Bernoulli masking per group.

    curriculum_p is the probability of *masking*: a scalar for all groups or
    a dict keyed by group name; the shorthand key "object" drives all four
    object sub-groups at once (specific sub-group keys override it).
    """
    if np.isscalar(curriculum_p):
        p = {g: float(curriculum_p) for g in GROUPS}
    else:
        p = {g: 0.0 for g in GROUPS}
        obj_p = curriculum_p.get("object")
        if obj_p is not None:
            for g in _OBJECT_GROUPS:
                p[g] = float(obj_p)
        for key, val in curriculum_p.items():
            if key == "object":
                continue
            if key not in p:
                raise ValueError(f"unknown mask group {key!r}")
            p[key] = float(val)
    for g, val in p.items():
        if not 0.0 <= val <= 1.0:
            raise ValueError(f"mask probability for {g!r} must be in [0, 1], "
                             f"got {val}")
    flags = {g: (rng.uniform(size=n) >= p[g]).astype(float) for g in GROUPS}
    return AvailabilityMask(**flags)


def preset_mask(name: str, n: int) -> AvailabilityMask:
    """Named evaluation regimes for the availability flags."""
    m = AvailabilityMask.all_visible(n)
    if name == "tracking":
        pass                       # dense short-horizon guidance kept
    elif name == "sparse_goal":
        m.local_goal[:] = 0.0      # only long-horizon goals remain
    elif name == "vision":
        m.object_trans[:] = 0.0    # object state hidden, point set kept
        m.object_rot[:] = 0.0
        m.object_pos[:] = 0.0
    else:
        raise ValueError(f"unknown mask preset {name!r}")
    return m
