"""Privileged teacher observation vector.

World-frame quantities are expressed in the heading-aligned frame of the
current state (x root-relative and flipped by the facing sign); joint-space
channels stay raw.  The full per-frame bundle (sim snapshot, reference,
residuals, interaction geometry) is repeated for each of the two reference
horizons in the window.
"""

from __future__ import annotations

import numpy as np

from ..geometry import box_closest_point
from ..rewards.tracking import sim_view
from ..rewards.types import RefFrame
from .layout import ObservationLayout


def _wrap(a: np.ndarray) -> np.ndarray:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def _check_layout(layout: ObservationLayout, state) -> None:
    meta = layout.meta
    if meta.get("kind") != "teacher":
        raise ValueError(f"layout {layout.name!r} is not a teacher layout")
    if meta.get("scale") != "desk":
        raise ValueError(
            f"layout {layout.name!r} is a dimension calculator, not a "
            "buildable layout for the planar rig")
    if meta.get("joints") != state.n_joints:
        raise ValueError(
            f"layout expects {meta.get('joints')} joints, state has "
            f"{state.n_joints}")


def _ig_triples(link_pos: np.ndarray, obj_pose: np.ndarray, box_size: float,
                facing: np.ndarray) -> np.ndarray:
    """(n, K, 3): aligned offset to the closest surface point + signed dist."""
    closest, sd = box_closest_point(link_pos, obj_pose, box_size)
    off = closest - link_pos
    off[..., 0] *= facing[:, None]
    return np.concatenate([off, sd[..., None]], axis=-1)


def build_teacher_obs(state, ref_window, layout: ObservationLayout, engine,
                      params=None) -> np.ndarray:
    """(n, total_dim) teacher input from the state and a 2-frame window."""
    _check_layout(layout, state)
    if len(ref_window) != 2:
        raise ValueError(
            f"reference window must hold 2 frames, got {len(ref_window)}")
    bodies = layout.meta["bodies"]
    view = sim_view(state, engine, params)
    if view.tracked_pos.shape[1] != bodies:
        raise ValueError(
            f"layout expects {bodies} tracked bodies, engine reports "
            f"{view.tracked_pos.shape[1]}")

    n = state.n
    f = view.facing
    rx = view.root_xy[:, 0]
    box_size = engine.cfg.box_size
    lim = engine.model.torque_limit * engine.cfg.torque_limit_scale
    out = np.zeros((n, layout.total_dim))

    def aligned_pos(p):
        q = p.copy()
        q[..., 0] = (p[..., 0] - rx[:, None]) * f[:, None]
        return q

    def aligned_vec(v):
        q = v.copy()
        q[..., 0] *= f[:, None]
        return q

    def rot_pairs(ang):
        a = ang * f[:, None]
        return np.stack([np.cos(a), np.sin(a)], axis=-1)

    sim_pos = aligned_pos(view.tracked_pos)
    sim_rot = rot_pairs(view.tracked_ang)
    sim_vel = aligned_vec(view.tracked_vel)
    sim_angvel = view.tracked_angvel * f[:, None]
    sim_ig = _ig_triples(view.tracked_pos, view.box_pose, box_size, f)
    joint_state = np.concatenate([
        state.joint_pos, 0.05 * state.joint_vel, state.prev_joint_pos,
        state.last_action, state.applied_torques / lim], axis=1)

    for k, ref in enumerate(ref_window):
        if not isinstance(ref, RefFrame) \
                or ref.link_pos.shape != view.tracked_pos.shape:
            raise ValueError("reference frame does not match the rig")
        if abs(float(ref.box_size) - float(box_size)) > 1e-9:
            raise ValueError(
                f"reference object size {ref.box_size} does not match "
                f"the simulated object size {box_size}")

        def put(row, value):
            out[:, layout.row_slice(f"{row}_{k}")] = value.reshape(n, -1)

        put("sim_root_h", state.root_pose[:, 1:2])
        put("sim_body_pos", sim_pos[:, 1:])
        put("sim_body_rot", sim_rot)
        put("sim_body_vel", sim_vel)
        put("sim_body_angvel", sim_angvel)
        put("sim_contact", view.contact_flags)
        put("sim_joint_state", joint_state)

        ref_pos = aligned_pos(ref.link_pos)
        ref_rot = rot_pairs(ref.link_rot)
        put("ref_body", np.concatenate(
            [ref_pos.reshape(n, -1), ref_rot.reshape(n, -1)], axis=1))
        obj = ref.obj_pose
        obj_ang = obj[:, 2] * f
        put("ref_object", np.column_stack([
            (obj[:, 0] - rx) * f, obj[:, 1],
            np.cos(obj_ang), np.sin(obj_ang),
            ref.obj_vel[:, 0] * f, ref.obj_vel[:, 1],
            ref.obj_vel[:, 2] * f]))

        d_ang = _wrap(view.tracked_ang - ref.link_rot)
        rot_res = np.stack([np.sin(d_ang * f[:, None]),
                            1.0 - np.cos(d_ang)], axis=-1)
        put("delta_body", np.concatenate([
            (sim_pos - ref_pos).reshape(n, -1),
            rot_res.reshape(n, -1),
            aligned_vec(view.tracked_vel - ref.link_vel).reshape(n, -1),
            (view.tracked_angvel - ref.link_rot_vel) * f[:, None]], axis=1))
        d_obj_ang = _wrap(view.box_pose[:, 2] - obj[:, 2])
        put("delta_object", np.column_stack([
            (view.box_pose[:, 0] - obj[:, 0]) * f,
            view.box_pose[:, 1] - obj[:, 1],
            np.sin(d_obj_ang * f), 1.0 - np.cos(d_obj_ang),
            (view.box_vel[:, 0] - ref.obj_vel[:, 0]) * f,
            view.box_vel[:, 1] - ref.obj_vel[:, 1],
            (view.box_vel[:, 2] - ref.obj_vel[:, 2]) * f]))

        ref_ig = _ig_triples(ref.link_pos, ref.obj_pose, ref.box_size, f)
        put("ig", np.concatenate(
            [sim_ig.reshape(n, -1), (sim_ig - ref_ig).reshape(n, -1)],
            axis=1))
    return out
