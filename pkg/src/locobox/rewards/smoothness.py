"""Additive smoothness / regularization penalty rows.

Each row is a nonnegative error times a negative weight, so every entry of
the returned dict is <= 0.  Which rows enter the summed penalty depends on
the training stage (`smoothness_total`).
"""

from __future__ import annotations

import numpy as np

from ..sim.engine import Engine
from ..sim.state import SimState
from .tracking import sim_view
from .types import RefFrame, SmoothnessConfig

# penalty weight per row; all negative
SMOOTH_WEIGHTS = {
    "base_lin_vel": -0.1,
    "base_ang_vel": -0.01,
    "joint_vel": -0.0004,
    "action_rate": -0.1,
    "joint_vel_change": -2e-5,
    "ang_vel_change": -5e-4,
    "torque": -0.001,
    "energy": -0.0001,
    "joint_limits": -5.0,
    "torque_limits": -1.0,
    "feet_orientation": -0.35,
    "foot_slip": -0.1,
    "stumble": -10.0,
    "feet_distance": -0.1,
    "knee_distance": -0.1,
    "stand_on_feet": -1.0,
    "swing_clearance": -0.6,
    "termination": -50.0,
}

# rows that fight the commanded motion itself; dropped while imitating
_BASE_ROWS = ("base_lin_vel", "base_ang_vel")
# rows that need a reference clip; dropped in goal-driven finetuning
_REF_ROWS = ("stand_on_feet", "swing_clearance")

_FOOT_LINKS = ("foot_l", "foot_r")
_FEET = (3, 4)   # tracked-body indices
_KNEES = (1, 2)


def _foot_cols(state: SimState) -> list:
    return [c for c, (ln, _) in enumerate(state.contact_pairs)
            if ln in _FOOT_LINKS]


def _stumble_indicator(state: SimState) -> np.ndarray:
    """1 when any active foot contact is shear-dominated (|f_x| > 4 |f_z|)."""
    cols = _foot_cols(state)
    if not cols or state.contact_active is None:
        return np.zeros(state.n)
    nrm = state.contact_normal[:, cols]              # (n, C, 2)
    tang = np.stack([-nrm[..., 1], nrm[..., 0]], axis=-1)
    f = (nrm * state.contact_force_n[:, cols, None]
         + tang * state.contact_force_t[:, cols, None])
    shear = np.abs(f[..., 0]) > 4.0 * np.abs(f[..., 1])
    active = state.contact_active[:, cols].astype(bool)
    return (shear & active).any(axis=-1).astype(float)


def _clamp_penalty(dist: np.ndarray, bounds: tuple) -> np.ndarray:
    lo, hi = bounds
    return np.clip(lo - dist, 0.0, None) + np.clip(dist - hi, 0.0, None)


def smoothness_penalties(state: SimState, prev_state: SimState,
                         action: np.ndarray, prev_action: np.ndarray,
                         ref: RefFrame | None, engine: Engine,
                         terminated: np.ndarray | None = None,
                         cfg: SmoothnessConfig | None = None,
                         params=None) -> dict:
    """Weighted penalty rows, each (n,) and <= 0."""
    cfg = cfg if cfg is not None else SmoothnessConfig()
    w = cfg.weights if cfg.weights is not None else SMOOTH_WEIGHTS
    view = sim_view(state, engine, params)
    model = engine.model
    n = state.n
    tau = state.applied_torques
    terms = {}

    terms["base_lin_vel"] = w["base_lin_vel"] * np.linalg.norm(
        state.root_vel[:, :2], axis=-1)
    terms["base_ang_vel"] = w["base_ang_vel"] * state.root_vel[:, 2] ** 2
    terms["joint_vel"] = w["joint_vel"] * np.sum(state.joint_vel ** 2, axis=-1)
    terms["action_rate"] = w["action_rate"] * np.linalg.norm(
        np.asarray(action) - np.asarray(prev_action), axis=-1)
    terms["joint_vel_change"] = w["joint_vel_change"] * np.sum(
        (state.joint_vel - prev_state.joint_vel) ** 2, axis=-1)
    terms["ang_vel_change"] = w["ang_vel_change"] * (
        state.root_vel[:, 2] - prev_state.root_vel[:, 2]) ** 2
    terms["torque"] = w["torque"] * np.linalg.norm(tau, axis=-1)
    terms["energy"] = w["energy"] * np.linalg.norm(
        tau * state.joint_vel, axis=-1)

    m = cfg.soft_limit_margin
    soft_lo = model.joint_limit_lo + m
    soft_hi = model.joint_limit_hi - m
    excess = (np.clip(state.joint_pos - soft_hi, 0.0, None)
              + np.clip(soft_lo - state.joint_pos, 0.0, None))
    terms["joint_limits"] = w["joint_limits"] * excess.sum(axis=-1)

    lim = model.torque_limit * engine.cfg.torque_limit_scale
    util = np.abs(tau) / lim
    terms["torque_limits"] = w["torque_limits"] * np.clip(
        util - cfg.torque_margin, 0.0, None).sum(axis=-1)

    feet = list(_FEET)
    terms["feet_orientation"] = w["feet_orientation"] * np.linalg.norm(
        np.sin(view.tracked_ang[:, feet]), axis=-1)

    speeds = np.linalg.norm(view.tracked_vel[:, feet], axis=-1)
    terms["foot_slip"] = w["foot_slip"] * (
        np.sqrt(speeds) * view.contact_flags[:, feet]).sum(axis=-1)

    terms["stumble"] = w["stumble"] * _stumble_indicator(state)

    d_feet = np.linalg.norm(
        view.tracked_pos[:, _FEET[0]] - view.tracked_pos[:, _FEET[1]], axis=-1)
    terms["feet_distance"] = w["feet_distance"] * _clamp_penalty(
        d_feet, cfg.feet_clamp)
    d_knee = np.linalg.norm(
        view.tracked_pos[:, _KNEES[0]] - view.tracked_pos[:, _KNEES[1]],
        axis=-1)
    terms["knee_distance"] = w["knee_distance"] * _clamp_penalty(
        d_knee, cfg.knee_clamp)

    if ref is not None:
        ref_stand = (ref.contact[:, _FEET[0]] > 0.5) \
            & (ref.contact[:, _FEET[1]] > 0.5)
        sim_stand = (view.contact_flags[:, _FEET[0]] > 0.5) \
            & (view.contact_flags[:, _FEET[1]] > 0.5)
        terms["stand_on_feet"] = w["stand_on_feet"] * (
            ref_stand & ~sim_stand).astype(float)

        swing = np.zeros(n)
        for fi in _FEET:
            ref_h = ref.link_pos[:, fi, 1]
            gate = (ref.contact[:, fi] < 0.5) & (ref_h > cfg.swing_gate_height)
            h_term = np.clip(ref_h - view.tracked_pos[:, fi, 1], 0.0, None)
            swing += (h_term + view.contact_flags[:, fi]) * gate
        terms["swing_clearance"] = w["swing_clearance"] * swing
    else:
        terms["stand_on_feet"] = np.zeros(n)
        terms["swing_clearance"] = np.zeros(n)

    done = np.zeros(n) if terminated is None \
        else np.asarray(terminated).astype(float)
    terms["termination"] = w["termination"] * done
    return terms


def smoothness_total(terms: dict, mode: str) -> np.ndarray:
    """Stage-dependent sum of the penalty rows."""
    if mode in ("teacher", "retarget"):
        skip = set(_BASE_ROWS)
    elif mode == "finetune":
        skip = set(_REF_ROWS)
    else:
        raise ValueError(f"unknown smoothness mode {mode!r}")
    total = None
    for name, val in terms.items():
        if name in skip:
            continue
        total = val.copy() if total is None else total + val
    return total
