"""Reference trajectory and task specification types.

A ReferenceTrajectory is a time-indexed kinematic recording: world positions
and orientations of a fixed set of named anchor bodies, the manipulated
object's pose, per-anchor contact labels, and the full articulated state
that produced them. Trajectories are immutable in spirit: every transform
returns a new instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

TASK_KINDS = ("stand", "lift", "push", "reposition", "carry")


@dataclass
class TaskSpec:
    task_kind: str = "lift"
    box_size: float = 0.39              # edge length in the source world
    start_pose: tuple = (0.62, 0.195, 0.0)
    goal_pose: tuple = (0.62, 0.62, 0.0)
    duration: float = 4.0               # seconds
    limb_ratio: float = 1.3             # source leg length / target leg length
    fps: float = 30.0

    def validate(self) -> None:
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.task_kind!r}")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.box_size <= 0:
            raise ValueError("box size must be positive")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.limb_ratio <= 0:
            raise ValueError("limb ratio must be positive")


@dataclass
class ReferenceTrajectory:
    fps: float
    anchors: list                      # K anchor names, order fixed
    link_pos: np.ndarray               # (T, K, 2) world anchor positions
    link_rot: np.ndarray               # (T, K) world angles of anchor links
    link_vel: np.ndarray               # (T, K, 2)
    link_rot_vel: np.ndarray           # (T, K)
    contact: np.ndarray                # (T, K) labels in {0, 1}
    obj_pose: np.ndarray               # (T, 3) x, z, angle
    obj_vel: np.ndarray                # (T, 3)
    root_pose: np.ndarray              # (T, 3)
    root_vel: np.ndarray               # (T, 3)
    joint_pos: np.ndarray              # (T, J)
    joint_vel: np.ndarray              # (T, J)
    box_size: float
    leg_length: float                  # of the embodiment these frames live in
    correspondence: dict               # anchor name -> target link name
    text_label: str = ""
    task_kind: str = ""
    embodiment: str = "source"

    @property
    def n_frames(self) -> int:
        return self.link_pos.shape[0]

    @property
    def duration(self) -> float:
        return self.n_frames / self.fps

    def copy(self) -> "ReferenceTrajectory":
        kw = {}
        for f in self.__dataclass_fields__:
            v = getattr(self, f)
            if isinstance(v, np.ndarray):
                kw[f] = v.copy()
            elif isinstance(v, (list, dict)):
                kw[f] = type(v)(v)
            else:
                kw[f] = v
        return ReferenceTrajectory(**kw)

    def validate(self) -> None:
        T, K = self.link_pos.shape[:2]
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if len(self.anchors) != K:
            raise ValueError("anchor names do not match link_pos width")
        for name, arr in (("link_pos", self.link_pos), ("link_rot", self.link_rot),
                          ("link_vel", self.link_vel), ("obj_pose", self.obj_pose),
                          ("obj_vel", self.obj_vel), ("root_pose", self.root_pose),
                          ("root_vel", self.root_vel), ("joint_pos", self.joint_pos),
                          ("joint_vel", self.joint_vel), ("contact", self.contact),
                          ("link_rot_vel", self.link_rot_vel)):
            if arr.shape[0] != T:
                raise ValueError(f"{name} frame count mismatch")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        labelled = set(self.anchors[k] for k in range(K)
                       if self.contact[:, k].any())
        if not labelled <= set(self.correspondence):
            raise ValueError("contact labels on anchors missing from the "
                             "correspondence map")
        key = [a for a in self.anchors if a in self.correspondence]
        targets = [self.correspondence[a] for a in key]
        if len(set(targets)) != len(targets):
            raise ValueError("correspondence is not injective")
        if not set(np.unique(self.contact)).issubset({0.0, 1.0}):
            raise ValueError("contact labels must be 0 or 1")

    def anchor_index(self, name: str) -> int:
        return self.anchors.index(name)

    def slice(self, start: int, stop: int) -> "ReferenceTrajectory":
        kw = {}
        for f in self.__dataclass_fields__:
            v = getattr(self, f)
            if isinstance(v, np.ndarray) and v.shape[:1] == (self.n_frames,):
                kw[f] = v[start:stop].copy()
            elif isinstance(v, (list, dict)):
                kw[f] = type(v)(v)
            else:
                kw[f] = v
        return ReferenceTrajectory(**kw)


def central_difference(x: np.ndarray, fps: float) -> np.ndarray:
    """Velocity by central differences, one-sided at the ends."""
    v = np.empty_like(x)
    if x.shape[0] == 1:
        v[:] = 0.0
        return v
    v[1:-1] = (x[2:] - x[:-2]) * (fps / 2.0)
    v[0] = (x[1] - x[0]) * fps
    v[-1] = (x[-1] - x[-2]) * fps
    return v
