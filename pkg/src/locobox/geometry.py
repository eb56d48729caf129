"""Planar analytic geometry shared by observations and metrics."""

from __future__ import annotations

import numpy as np


def box_closest_point(points: np.ndarray, box_pose: np.ndarray,
                      box_size: float):
    """Closest point on a square's boundary and the signed distance.

    points: (n, K, 2) world points; box_pose: (n, 3) center + angle.
    Returns (closest (n, K, 2), signed_dist (n, K)); negative inside.
    Interior points project to the nearest face (x-axis wins ties, zero
    coordinates count as positive).
    """
    points = np.asarray(points, dtype=float)
    box_pose = np.asarray(box_pose, dtype=float)
    half = 0.5 * float(box_size)
    c = np.cos(box_pose[:, 2])[:, None]
    s = np.sin(box_pose[:, 2])[:, None]
    rel = points - box_pose[:, None, :2]
    lx = c * rel[..., 0] + s * rel[..., 1]
    lz = -s * rel[..., 0] + c * rel[..., 1]

    cx = np.clip(lx, -half, half)
    cz = np.clip(lz, -half, half)
    outside_d = np.hypot(lx - cx, lz - cz)

    inside = (np.abs(lx) <= half) & (np.abs(lz) <= half)
    gap_x = half - np.abs(lx)
    gap_z = half - np.abs(lz)
    sgn_x = np.where(lx >= 0.0, 1.0, -1.0)
    sgn_z = np.where(lz >= 0.0, 1.0, -1.0)
    push_x = gap_x <= gap_z
    ix = np.where(push_x, sgn_x * half, lx)
    iz = np.where(push_x, lz, sgn_z * half)

    fx = np.where(inside, ix, cx)
    fz = np.where(inside, iz, cz)
    sd = np.where(inside, -np.minimum(gap_x, gap_z), outside_d)

    wx = c * fx - s * fz + box_pose[:, None, 0]
    wz = s * fx + c * fz + box_pose[:, None, 1]
    return np.stack([wx, wz], axis=-1), sd
