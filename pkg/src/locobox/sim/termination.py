"""Episode termination for tracking rollouts.

Falls end the episode immediately. Deviation from the reference root and
persistent foot-contact mismatch only end it outside the post-perturbation
grace window, so a pushed figure gets time to recover before being judged.
The mismatch counter is caller-owned state; it resets on any matching frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .state import SimState

REASON_NONE = 0
REASON_FALL = 1
REASON_DEVIATION = 2
REASON_MISMATCH = 3

REASON_NAMES = {REASON_NONE: "none", REASON_FALL: "fall",
                REASON_DEVIATION: "deviation", REASON_MISMATCH: "mismatch"}


@dataclass
class TerminationConfig:
    fall_height: float = 0.3
    fall_pitch: float = 1.0
    max_deviation: float = 0.5
    mismatch_frames: int = 20
    grace_seconds: float = 1.0


def check_termination(state: SimState, ref_root_xy: np.ndarray,
                      ref_foot_contact: np.ndarray, sim_foot_contact: np.ndarray,
                      mismatch_counter: np.ndarray, cfg: TerminationConfig,
                      time_since_push: np.ndarray | None = None):
    """Returns (terminate (n,), reason (n,), mismatch_counter (n,))."""
    n = state.n
    fall = (state.root_pose[:, 1] < cfg.fall_height) \
        | (np.abs(state.root_pose[:, 2]) > cfg.fall_pitch) \
        | state.unhealthy

    dev_vec = state.root_pose[:, :2] - np.asarray(ref_root_xy)
    deviation = np.linalg.norm(dev_vec, axis=1) > cfg.max_deviation

    mismatch = (np.asarray(ref_foot_contact, dtype=bool)
                != np.asarray(sim_foot_contact, dtype=bool)).any(axis=1)
    counter = np.where(mismatch, mismatch_counter + 1, 0)
    persistent = counter >= cfg.mismatch_frames

    in_grace = np.zeros(n, dtype=bool)
    if time_since_push is not None:
        in_grace = np.asarray(time_since_push) < cfg.grace_seconds

    reason = np.zeros(n, dtype=int)
    reason = np.where(persistent & ~in_grace, REASON_MISMATCH, reason)
    reason = np.where(deviation & ~in_grace, REASON_DEVIATION, reason)
    reason = np.where(fall, REASON_FALL, reason)
    return reason > 0, reason, counter
