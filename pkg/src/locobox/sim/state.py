"""Simulation state and engine configuration.

State arrays are batch-first: a SimState holds n independent environment
slots that share nothing but the model constants. A single environment is
just n = 1. Contacts are stored as fixed-size candidate arrays with an
active mask; contact_records() yields the usual per-contact tuples.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass
class SimConfig:
    dt_sim: float = 1.0 / 120.0
    control_decimation: int = 4
    solver_iterations: int = 20
    relaxation: float = 1.0           # per-row step scale of the contact sweeps
    contact_offset: float = 0.02      # speculative activation distance
    penetration_slop: float = 0.004   # position projection kicks in beyond this
    position_correction: float = 0.2  # fraction of excess penetration removed per step
    ground_restitution: float = 0.0
    bounce_threshold: float = 0.5     # approach speed below which restitution is 0
    gravity: float = 9.81
    ground_friction: float = 1.0
    figure_friction: float = 1.0      # multiplies ground friction for figure points
    max_lin_vel: float = 50.0         # health caps
    max_ang_vel: float = 100.0
    max_joint_vel: float = 100.0
    box_size: float = 0.30            # square box edge length
    box_mass: float = 1.0
    torque_limit_scale: float = 1.0   # raised for the idealized retarget stage
    max_action_delay: int = 2         # ring buffer capacity (control steps)

    @property
    def dt_control(self) -> float:
        return self.dt_sim * self.control_decimation


@dataclass
class SimState:
    """Batched rigid-body state. All arrays share leading dim n (env slots)."""

    root_pose: np.ndarray       # (n, 3) x, z, pitch
    root_vel: np.ndarray        # (n, 3) vx, vz, pitch rate
    joint_pos: np.ndarray       # (n, J)
    joint_vel: np.ndarray       # (n, J)
    box_pose: np.ndarray        # (n, 3) x, z, angle
    box_vel: np.ndarray         # (n, 3)
    last_action: np.ndarray     # (n, J) last commanded joint targets (raw targets)
    applied_torques: np.ndarray  # (n, J) torques applied on the last substep
    prev_joint_pos: np.ndarray  # (n, J) joint positions one control step ago
    step_count: np.ndarray      # (n,) int physics substeps taken
    unhealthy: np.ndarray       # (n,) bool, solver divergence flag
    # action-delay ring buffer of commanded targets
    target_buffer: np.ndarray   # (n, max_delay + 1, J)
    buffer_head: np.ndarray     # (n,) int
    # contact candidate results from the last substep
    contact_active: np.ndarray = None   # (n, C) bool
    contact_point: np.ndarray = None    # (n, C, 2)
    contact_normal: np.ndarray = None   # (n, C, 2)
    contact_force_n: np.ndarray = None  # (n, C)
    contact_force_t: np.ndarray = None  # (n, C)
    contact_pairs: list = field(default_factory=list)  # C x (link_name, other_name)
    dt_sim: float = 1.0 / 120.0

    @property
    def n(self) -> int:
        return self.root_pose.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joint_pos.shape[1]

    @property
    def time(self) -> np.ndarray:
        """Exact multiples of dt_sim."""
        return self.step_count * self.dt_sim

    def copy(self) -> "SimState":
        kw = {}
        for f in self.__dataclass_fields__:
            v = getattr(self, f)
            kw[f] = v.copy() if isinstance(v, np.ndarray) else v
        return SimState(**kw)

    def contact_records(self, env: int = 0) -> list:
        """Active contacts for one env as (link, other, point, normal, force)."""
        out = []
        if self.contact_active is None:
            return out
        for c in range(self.contact_active.shape[1]):
            if self.contact_active[env, c]:
                link, other = self.contact_pairs[c]
                out.append((
                    link, other,
                    self.contact_point[env, c].copy(),
                    self.contact_normal[env, c].copy(),
                    (float(self.contact_force_n[env, c]),
                     float(self.contact_force_t[env, c])),
                ))
        return out

    def select(self, idx) -> "SimState":
        """View-copy of a subset of env slots."""
        kw = {}
        for f in self.__dataclass_fields__:
            v = getattr(self, f)
            kw[f] = v[idx].copy() if isinstance(v, np.ndarray) else v
        return SimState(**kw)


def blank_state(n: int, n_joints: int, cfg: SimConfig) -> SimState:
    J = n_joints
    return SimState(
        root_pose=np.zeros((n, 3)),
        root_vel=np.zeros((n, 3)),
        joint_pos=np.zeros((n, J)),
        joint_vel=np.zeros((n, J)),
        box_pose=np.zeros((n, 3)),
        box_vel=np.zeros((n, 3)),
        last_action=np.zeros((n, J)),
        applied_torques=np.zeros((n, J)),
        prev_joint_pos=np.zeros((n, J)),
        step_count=np.zeros(n, dtype=np.int64),
        unhealthy=np.zeros(n, dtype=bool),
        target_buffer=np.zeros((n, cfg.max_action_delay + 1, J)),
        buffer_head=np.zeros(n, dtype=np.int64),
        dt_sim=cfg.dt_sim,
    )
