"""Deployable student observation vector.

Only onboard-measurable channels enter: proprioception (+ short history),
goal residuals, and the object as measured by the sensor head.  Maskable
groups are zeroed in the vector when unavailable, and the mask block records
the effective availability flags.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rewards.tracking import sim_view
from .layout import ObservationLayout
from .mask import AvailabilityMask


def _wrap(a: np.ndarray) -> np.ndarray:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


@dataclass
class StudentSensors:
    """Measured object channels; None marks a channel the head cannot see."""

    obj_pose: np.ndarray | None = None      # (n, 3)
    points: np.ndarray | None = None        # (n, P, 2)
    points_valid: np.ndarray | None = None  # (n,) 1 = usable sweep


@dataclass
class GoalPacket:
    """Targets handed to the student; None marks an absent channel."""

    root_pose: np.ndarray | None = None     # (n, 3) long-horizon base goal
    cmd: np.ndarray | None = None           # (n, 4) episode-phase command
    local_pitch: np.ndarray | None = None   # (n,) short-horizon base pitch
    local_joint: np.ndarray | None = None   # (n, J) short-horizon joints
    obj_xy: np.ndarray | None = None        # (n, 2) object goal position
    obj_theta: np.ndarray | None = None     # (n,) object goal rotation

    @classmethod
    def from_reference(cls, ref, cmd: np.ndarray | None = None
                       ) -> "GoalPacket":
        """Dense-tracking goals taken from a reference frame."""
        return cls(
            root_pose=ref.root_pose.copy(),
            cmd=cmd,
            local_pitch=ref.root_pose[:, 2].copy(),
            local_joint=None if ref.joint_pos is None
            else ref.joint_pos.copy(),
            obj_xy=ref.obj_pose[:, :2].copy(),
            obj_theta=ref.obj_pose[:, 2].copy(),
        )


class ProprioHistory:
    """Rolling buffer of the last `steps` proprio frames, oldest first."""

    def __init__(self, n: int, steps: int, dim: int):
        self.data = np.zeros((n, steps, dim))

    @property
    def shape(self):
        return self.data.shape

    def push(self, frame: np.ndarray) -> None:
        frame = np.asarray(frame)
        if frame.shape != (self.data.shape[0], self.data.shape[2]):
            raise ValueError(
                f"frame shape {frame.shape} does not fit buffer "
                f"{self.data.shape}")
        self.data[:, :-1] = self.data[:, 1:]
        self.data[:, -1] = frame

    def flat(self) -> np.ndarray:
        n, steps, dim = self.data.shape
        return self.data.reshape(n, steps * dim).copy()

    def reset(self, env_mask: np.ndarray | None = None) -> None:
        if env_mask is None:
            self.data[:] = 0.0
        else:
            self.data[np.asarray(env_mask, dtype=bool)] = 0.0


def proprio_frame(state) -> np.ndarray:
    """(n, proprio_dim) raw onboard readings of the current control step."""
    return np.concatenate([
        state.root_vel[:, 2:3], state.root_pose[:, 2:3], state.joint_pos,
        0.05 * state.joint_vel, state.last_action], axis=1)


def build_student_obs(state, goals: GoalPacket, sensors: StudentSensors,
                      mask: AvailabilityMask, history: ProprioHistory,
                      layout: ObservationLayout, engine,
                      params=None) -> np.ndarray:
    """(n, total_dim) student input; masked groups zeroed, flags appended."""
    meta = layout.meta
    if meta.get("kind") != "student":
        raise ValueError(f"layout {layout.name!r} is not a student layout")
    if meta.get("scale") != "desk":
        raise ValueError(
            f"layout {layout.name!r} is a dimension calculator, not a "
            "buildable layout for the planar rig")
    if meta.get("joints") != state.n_joints:
        raise ValueError(
            f"layout expects {meta.get('joints')} joints, state has "
            f"{state.n_joints}")
    n = state.n
    if history.shape != (n, meta["history"], meta["proprio_dim"]):
        raise ValueError(
            f"history buffer shape {history.shape} does not match layout "
            f"({n}, {meta['history']}, {meta['proprio_dim']})")
    if sensors.points is not None \
            and sensors.points.shape[1] != meta["points"]:
        raise ValueError(
            f"layout expects {meta['points']} sensed points, got "
            f"{sensors.points.shape[1]}")

    view = sim_view(state, engine, params)
    f = view.facing
    rx = view.root_xy[:, 0]
    out = np.zeros((n, layout.total_dim))

    def put(row, value):
        out[:, layout.row_slice(row)] = np.asarray(value).reshape(n, -1)

    put("proprio_angvel", state.root_vel[:, 2])
    put("proprio_imu", state.root_pose[:, 2])
    put("proprio_joint_pos", state.joint_pos)
    put("proprio_joint_vel", 0.05 * state.joint_vel)
    put("proprio_prev_action", state.last_action)
    put("history", history.flat())

    if goals.root_pose is not None:
        g = np.asarray(goals.root_pose)
        put("global_goal_pos", np.column_stack([
            (g[:, 0] - state.root_pose[:, 0]) * f,
            g[:, 1] - state.root_pose[:, 1]]))
        put("global_goal_rot", _wrap(g[:, 2] - state.root_pose[:, 2]) * f)
    if goals.cmd is not None:
        put("cmd", goals.cmd)
    if goals.local_pitch is not None:
        put("local_imu",
            _wrap(np.asarray(goals.local_pitch) - state.root_pose[:, 2]) * f)
    if goals.local_joint is not None:
        put("local_joint", np.asarray(goals.local_joint) - state.joint_pos)

    have_obj = sensors.obj_pose is not None
    if have_obj:
        obj = np.asarray(sensors.obj_pose)
        put("task_obj_pos", np.column_stack([(obj[:, 0] - rx) * f,
                                             obj[:, 1]]))
        if goals.obj_xy is not None:
            put("task_obj_trans", np.column_stack([
                (goals.obj_xy[:, 0] - obj[:, 0]) * f,
                goals.obj_xy[:, 1] - obj[:, 1]]))
        if goals.obj_theta is not None:
            d = _wrap(np.asarray(goals.obj_theta) - obj[:, 2])
            put("task_obj_rot", np.column_stack([np.sin(d * f),
                                                 1.0 - np.cos(d)]))
    pcd_valid = np.zeros(n)
    if sensors.points is not None and sensors.points_valid is not None:
        pts = sensors.points.copy()
        pts[..., 0] = (pts[..., 0] - rx[:, None]) * f[:, None]
        put("task_pcd", pts)
        pcd_valid = np.asarray(sensors.points_valid, dtype=float)

    # effective availability = requested mask AND data actually present
    flags = {
        "global_goal": np.asarray(mask.global_goal, dtype=float)
        * float(goals.root_pose is not None),
        "goal_cmd": np.asarray(mask.goal_cmd, dtype=float)
        * float(goals.cmd is not None),
        "local_goal": np.asarray(mask.local_goal, dtype=float)
        * float(goals.local_pitch is not None
                or goals.local_joint is not None),
        "object_trans": np.asarray(mask.object_trans, dtype=float)
        * float(have_obj and goals.obj_xy is not None),
        "object_rot": np.asarray(mask.object_rot, dtype=float)
        * float(have_obj and goals.obj_theta is not None),
        "object_pos": np.asarray(mask.object_pos, dtype=float)
        * float(have_obj),
        "object_pcd": np.asarray(mask.object_pcd, dtype=float) * pcd_valid,
    }

    mask_vec = np.zeros((n, layout.length("mask")))
    cursor = 0
    for gname, idx in layout.mask_groups:
        flag = flags[gname]
        out[:, idx] *= flag[:, None]
        mask_vec[:, cursor:cursor + idx.size] = flag[:, None]
        cursor += idx.size
    put("mask", mask_vec)
    return out
