"""Shared value types for the reward kernels."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass
class RefFrame:
    """One reference frame, broadcast over env slots.

    Arrays are (n, ...) with link arrays ordered like the tracked-body list.
    joint_pos/joint_vel are None for cross-embodiment references that carry
    no joint-space data for the simulated rig.
    """

    link_pos: np.ndarray        # (n, K, 2)
    link_rot: np.ndarray        # (n, K)
    link_vel: np.ndarray        # (n, K, 2)
    link_rot_vel: np.ndarray    # (n, K)
    contact: np.ndarray         # (n, K)
    obj_pose: np.ndarray        # (n, 3)
    obj_vel: np.ndarray         # (n, 3)
    root_pose: np.ndarray       # (n, 3)
    root_vel: np.ndarray        # (n, 3)
    joint_pos: np.ndarray | None = None  # (n, J)
    joint_vel: np.ndarray | None = None  # (n, J)
    box_size: float = 0.30


def gather_frame(traj, idx) -> RefFrame:
    """Per-env frames of a reference trajectory: idx is (n,) frame indices."""
    idx = np.clip(np.asarray(idx, dtype=int), 0, traj.n_frames - 1)
    return RefFrame(
        link_pos=traj.link_pos[idx],
        link_rot=traj.link_rot[idx],
        link_vel=traj.link_vel[idx],
        link_rot_vel=traj.link_rot_vel[idx],
        contact=traj.contact[idx],
        obj_pose=traj.obj_pose[idx],
        obj_vel=traj.obj_vel[idx],
        root_pose=traj.root_pose[idx],
        root_vel=traj.root_vel[idx],
        joint_pos=traj.joint_pos[idx],
        joint_vel=traj.joint_vel[idx],
        box_size=traj.box_size,
    )


@dataclass
class SimView:
    """Per-step kinematic bundle the reward kernels consume."""

    tracked_pos: np.ndarray     # (n, K, 2)
    tracked_ang: np.ndarray     # (n, K)
    tracked_vel: np.ndarray     # (n, K, 2)
    tracked_angvel: np.ndarray  # (n, K)
    facing: np.ndarray          # (n,) +-1
    contact_flags: np.ndarray   # (n, K)
    root_xy: np.ndarray         # (n, 2)
    box_pose: np.ndarray        # (n, 3)
    box_vel: np.ndarray         # (n, 3)
    joint_pos: np.ndarray       # (n, J)
    joint_vel: np.ndarray       # (n, J)


@dataclass
class TrackingCoeffs:
    """Temperatures of the multiplicative tracking factors."""

    k_p: float = 10.0
    k_r: float = 5.0
    k_pv: float = 0.1
    k_rv: float = 0.001
    k_op: float = 5.0
    k_or: float = 0.5
    k_opv: float = 0.1
    k_int: float = 20.0
    k_ct: float = 5.0
    huber_delta: float = 0.25
    mode: str = "teacher"       # "teacher" | "retarget"

    def scaled(self, factor: float) -> "TrackingCoeffs":
        """Copy with every temperature multiplied (blend-in ramps)."""
        return replace(
            self, k_p=self.k_p * factor, k_r=self.k_r * factor,
            k_pv=self.k_pv * factor, k_rv=self.k_rv * factor,
            k_op=self.k_op * factor, k_or=self.k_or * factor,
            k_opv=self.k_opv * factor, k_int=self.k_int * factor,
            k_ct=self.k_ct * factor)


@dataclass
class RewardBreakdown:
    """Per-term tracking factors plus named smoothness penalties."""

    r_p: np.ndarray
    r_r: np.ndarray
    r_pv: np.ndarray
    r_rv: np.ndarray
    r_op: np.ndarray
    r_or: np.ndarray
    r_opv: np.ndarray
    r_int: np.ndarray
    r_ct: np.ndarray
    r_track: np.ndarray
    smooth_terms: dict = field(default_factory=dict)
    total: np.ndarray = None

    FACTORS = ("r_p", "r_r", "r_pv", "r_rv", "r_op", "r_or", "r_opv",
               "r_int", "r_ct")


@dataclass
class SmoothnessConfig:
    """Bounds and margins of the penalty rows (weights live in SMOOTH_WEIGHTS)."""

    weights: dict = None
    feet_clamp: tuple = (0.25, 0.65)
    knee_clamp: tuple = (0.25, 0.65)
    soft_limit_margin: float = 0.05
    torque_margin: float = 0.95
    swing_gate_height: float = 0.02


@dataclass
class FinetuneCoeffs:
    """Goal-reward shaping constants for the RL finetuning stage."""

    k_goal: float = 2.0
    progress_cap: float = 0.1
    bonus: float = 10.0
    success_radius: float = 0.3
    w_dense: float = 1.0
    w_progress: float = 1.0


@dataclass
class GoalTargets:
    """Long-horizon goal poses; None marks an absent target."""

    obj_xy: np.ndarray | None = None    # (n, 2)
    root_xy: np.ndarray | None = None   # (n, 2)
    obj_theta: np.ndarray | None = None  # (n,)
    root_theta: np.ndarray | None = None  # (n,)
