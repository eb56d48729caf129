"""Embodiment scaling and trajectory augmentation.

Reference trajectories are recorded on the long-limbed source figure.
`scale_and_correspond` maps one onto a target figure by the ratio of leg
lengths and re-keys the link correspondence; `augment` applies anisotropic
axis scaling and object-size scaling to multiply the corpus. Both are pure
functions returning new trajectories.
"""
from __future__ import annotations

import numpy as np

from ..sim.figure import FigureModel
from .types import ReferenceTrajectory

KEY_LINKS = ("root", "l_foot", "r_foot", "l_palm", "r_palm")

# anisotropic scale factors outside this band distort motion beyond what
# downstream tracking is expected to repair
DEFAULT_SCALE_RANGE = (0.8, 1.25)


def scale_and_correspond(ref: ReferenceTrajectory,
                         target: FigureModel) -> ReferenceTrajectory:
    """Scale a source-embodiment trajectory onto the target figure.

    All positions (links, object, root) and their velocities are multiplied
    by the target/source leg-length ratio, as is the box size. Orientations,
    joint angles, and contact labels are untouched. The correspondence map
    is re-keyed so the anchors carry target link names.
    """
    missing = [k for k in KEY_LINKS if k not in ref.correspondence]
    if missing:
        raise ValueError(f"correspondence is missing key links: {missing}")
    ratio = target.leg_length / ref.leg_length
    out = ref.copy()
    out.link_pos = ref.link_pos * ratio
    out.link_vel = ref.link_vel * ratio
    out.obj_pose = ref.obj_pose.copy()
    out.obj_pose[:, :2] *= ratio
    out.obj_vel = ref.obj_vel.copy()
    out.obj_vel[:, :2] *= ratio
    out.root_pose = ref.root_pose.copy()
    out.root_pose[:, :2] *= ratio
    out.root_vel = ref.root_vel.copy()
    out.root_vel[:, :2] *= ratio
    out.box_size = ref.box_size * ratio
    out.leg_length = target.leg_length
    out.anchors = [ref.correspondence[a] for a in ref.anchors]
    out.correspondence = {v: v for v in ref.correspondence.values()}
    out.embodiment = "target"
    out.validate()
    return out


def augment(ref: ReferenceTrajectory, axis_scales: tuple[float, float],
            object_scale: float,
            scale_range: tuple[float, float] = DEFAULT_SCALE_RANGE
            ) -> ReferenceTrajectory:
    """Anisotropically scale a trajectory: x by sx, height by sz, and the
    box size by object_scale. Velocities scale consistently; orientations,
    joint angles, and contact labels are untouched (downstream tracking
    repairs the induced imperfections)."""
    sx, sz = float(axis_scales[0]), float(axis_scales[1])
    s_o = float(object_scale)
    for s in (sx, sz, s_o):
        if s <= 0.0:
            raise ValueError("augmentation scales must be positive")
        if not scale_range[0] <= s <= scale_range[1]:
            raise ValueError(f"augmentation scale {s} outside the allowed "
                             f"range {scale_range}")
    xy = np.array([sx, sz])
    out = ref.copy()
    out.link_pos = ref.link_pos * xy
    out.link_vel = ref.link_vel * xy
    out.obj_pose = ref.obj_pose.copy()
    out.obj_pose[:, :2] *= xy
    out.obj_vel = ref.obj_vel.copy()
    out.obj_vel[:, :2] *= xy
    out.root_pose = ref.root_pose.copy()
    out.root_pose[:, :2] *= xy
    out.root_vel = ref.root_vel.copy()
    out.root_vel[:, :2] *= xy
    out.box_size = ref.box_size * s_o
    out.validate()
    return out
