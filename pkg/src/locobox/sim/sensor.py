"""Synthetic egocentric point sensor for the box.

Points are sampled on the box edges that face the head viewpoint, then pushed
through the randomization chain: dropout with resampling, camera pose error,
depth scale jitter, per-point Gaussian noise, sporadic outliers, and a whole
cloud offset. A frame can also be fully occluded, which returns a sentinel
flag instead of points; the availability mask downstream consumes that flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .figure import FigureModel, fk, points_world
from .state import SimState


@dataclass
class SensorNoise:
    n_points: int = 16
    gaussian_std: float = 0.02
    dropout_p: float = 0.15
    outlier_p: float = 0.05
    outlier_max: float = 0.5
    scale_lo: float = 0.95
    scale_hi: float = 1.05
    translation_std: float = 0.02
    occlusion_p: float = 0.1
    cam_rot_std: float = 0.05
    cam_pos_std: float = 0.02

    @classmethod
    def none(cls, n_points: int = 16) -> "SensorNoise":
        return cls(n_points=n_points, gaussian_std=0.0, dropout_p=0.0,
                   outlier_p=0.0, outlier_max=0.0, scale_lo=1.0, scale_hi=1.0,
                   translation_std=0.0, occlusion_p=0.0, cam_rot_std=0.0,
                   cam_pos_std=0.0)


# box corners in its own frame, CCW; edge k runs corner k -> k+1
_CORNERS = np.array([(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)])
_EDGE_NORMALS = np.array([(0.0, 1.0), (-1.0, 0.0), (0.0, -1.0), (1.0, 0.0)])


def head_position(model: FigureModel, state: SimState) -> np.ndarray:
    """World position of the sensor viewpoint, (n, 2)."""
    origins, angles = fk(model, state.root_pose, state.joint_pos)
    link, local = model.sites["head"]
    return points_world(origins, angles, link, np.asarray(local)[None])


def sense_points(state: SimState, noise: SensorNoise, rng: np.random.Generator,
                 model: FigureModel, box_size: float):
    """Sample the visible box outline from the head viewpoint.

    Returns (points (n, N, 2) world frame, valid (n,) bool). Invalid envs
    (occluded frame, or no edge faces the sensor) carry zero points.
    """
    n = state.n
    N = noise.n_points
    head = head_position(model, state)                       # (n, 2)
    half = box_size / 2.0

    th = state.box_pose[:, 2]
    c, s = np.cos(th), np.sin(th)
    R = np.empty((n, 2, 2))
    R[:, 0, 0] = c
    R[:, 0, 1] = -s
    R[:, 1, 0] = s
    R[:, 1, 1] = c
    corners = state.box_pose[:, None, :2] + np.einsum(
        "nxy,ky->nkx", R, _CORNERS * half)                   # (n, 4, 2)
    normals = np.einsum("nxy,ky->nkx", R, _EDGE_NORMALS)     # (n, 4, 2)
    mids = 0.5 * (corners + corners[:, [1, 2, 3, 0]])
    visible = np.einsum("nkx,nkx->nk", normals, head[:, None, :] - mids) > 0.0

    # stratified arclength positions over the visible perimeter
    edge_len = np.where(visible, box_size, 0.0)              # (n, 4)
    total = edge_len.sum(axis=1)
    ok = total > 0.0
    cum = np.concatenate([np.zeros((n, 1)), np.cumsum(edge_len, axis=1)], axis=1)
    ts = (np.arange(N) + 0.5) / N * np.maximum(total, 1e-12)[:, None]

    # dropout: dropped samples are re-drawn uniformly on the visible outline
    drop = rng.uniform(size=(n, N)) < noise.dropout_p
    ts = np.where(drop, rng.uniform(size=(n, N)) * total[:, None], ts)

    pts = np.zeros((n, N, 2))
    a = corners
    bpt = corners[:, [1, 2, 3, 0]]
    for k in range(4):
        lo = cum[:, k][:, None]
        hi = cum[:, k + 1][:, None]
        on_k = (ts >= lo) & (ts < hi) & visible[:, k][:, None]
        frac = np.clip((ts - lo) / box_size, 0.0, 1.0)
        seg = a[:, None, k, :] + frac[..., None] * (bpt[:, None, k, :] - a[:, None, k, :])
        pts = np.where(on_k[..., None], seg, pts)
    # ts == total lands exactly on the last visible corner
    last = np.argmax(np.where(visible, cum[:, 1:], -1.0), axis=1)
    end_pt = bpt[np.arange(n), last]
    at_end = ts >= total[:, None]
    pts = np.where((at_end & ok[:, None])[..., None], end_pt[:, None, :], pts)

    # camera pose error: the cloud rotates about and shifts with the viewpoint
    dth = rng.normal(scale=noise.cam_rot_std, size=n) if noise.cam_rot_std else np.zeros(n)
    dpos = rng.normal(scale=noise.cam_pos_std, size=(n, 2)) if noise.cam_pos_std else np.zeros((n, 2))
    cc, ss = np.cos(dth), np.sin(dth)
    rel = pts - head[:, None, :]
    rel = np.stack([cc[:, None] * rel[..., 0] - ss[:, None] * rel[..., 1],
                    ss[:, None] * rel[..., 0] + cc[:, None] * rel[..., 1]], axis=-1)

    # depth scale jitter about the viewpoint
    scale = rng.uniform(noise.scale_lo, noise.scale_hi, size=n)
    rel *= scale[:, None, None]
    pts = head[:, None, :] + rel + dpos[:, None, :]

    if noise.gaussian_std:
        pts = pts + rng.normal(scale=noise.gaussian_std, size=(n, N, 2))
    if noise.outlier_p:
        out = rng.uniform(size=(n, N)) < noise.outlier_p
        ang = rng.uniform(0.0, 2.0 * np.pi, size=(n, N))
        mag = rng.uniform(0.0, noise.outlier_max, size=(n, N))
        shift = np.stack([np.cos(ang), np.sin(ang)], axis=-1) * mag[..., None]
        pts = np.where(out[..., None], pts + shift, pts)
    if noise.translation_std:
        pts = pts + rng.normal(scale=noise.translation_std, size=(n, 1, 2))

    occluded = rng.uniform(size=n) < noise.occlusion_p
    valid = ok & ~occluded
    pts = np.where(valid[:, None, None], pts, 0.0)
    return pts, valid
