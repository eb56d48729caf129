"""Observation vector layouts.

A layout is an ordered list of contiguous blocks, each made of named rows.
It also carries the per-entry noise scale used at student time, and the
mapping from availability-mask groups to the vector entries they gate.
Layouts serialize to plain JSON so recorded logs stay parseable bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Block:
    name: str
    offset: int
    length: int


class ObservationLayout:
    """Named contiguous blocks + rows over a flat observation vector."""

    def __init__(self, name: str, block_rows, mask_def=(), meta=None):
        # block_rows: [(block, [(row, length, noise_std), ...]), ...]
        self.name = name
        self.meta = dict(meta or {})
        blocks, rows, noise = [], {}, []
        off = 0
        for bname, row_list in block_rows:
            b_off = off
            for rname, length, std in row_list:
                length = int(length)
                if length <= 0:
                    raise ValueError(f"row {rname!r} has length {length}")
                if rname in rows:
                    raise ValueError(f"duplicate row {rname!r}")
                rows[rname] = (off, length)
                noise.extend([float(std)] * length)
                off += length
            blocks.append(Block(bname, b_off, off - b_off))
        self.blocks = blocks
        self._block_map = {b.name: b for b in blocks}
        self.rows = rows
        self.noise_std = np.asarray(noise)
        self.total_dim = off

        self.mask_groups = []
        for gname, row_names in mask_def:
            idx = np.concatenate([
                np.arange(rows[r][0], rows[r][0] + rows[r][1])
                for r in row_names])
            self.mask_groups.append((gname, idx.astype(int)))
        if self.mask_groups and "mask" in self._block_map:
            n_flags = sum(i.size for _, i in self.mask_groups)
            if n_flags != self._block_map["mask"].length:
                raise ValueError(
                    f"mask block length {self._block_map['mask'].length} "
                    f"does not cover the {n_flags} maskable entries")

    # ------------------------------------------------------------- access

    def slice(self, name: str) -> slice:
        if name in self._block_map:
            b = self._block_map[name]
            return slice(b.offset, b.offset + b.length)
        return self.row_slice(name)

    def row_slice(self, name: str) -> slice:
        off, length = self.rows[name]
        return slice(off, off + length)

    def length(self, name: str) -> int:
        if name in self._block_map:
            return self._block_map[name].length
        return self.rows[name][1]

    # ------------------------------------------------------ serialization

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "blocks": [[b.name, b.offset, b.length] for b in self.blocks],
            "rows": [[r, off, length] for r, (off, length) in
                     self.rows.items()],
            "noise_std": self.noise_std.tolist(),
            "mask_groups": [[g, idx.tolist()] for g, idx in self.mask_groups],
            "meta": self.meta,
            "total_dim": self.total_dim,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ObservationLayout":
        lay = cls.__new__(cls)
        lay.name = data["name"]
        lay.meta = dict(data["meta"])
        lay.blocks = [Block(n, o, l) for n, o, l in data["blocks"]]
        lay._block_map = {b.name: b for b in lay.blocks}
        lay.rows = {r: (off, length) for r, off, length in data["rows"]}
        lay.noise_std = np.asarray(data["noise_std"], dtype=float)
        lay.mask_groups = [(g, np.asarray(idx, dtype=int))
                           for g, idx in data["mask_groups"]]
        lay.total_dim = int(data["total_dim"])
        return lay


# -------------------------------------------------------------- calculators

# per-entry noise scales of the student sensor channels
_NOISE_JOINT_POS = 0.01
_NOISE_JOINT_VEL = 0.1 * 0.05   # 0.1 rad/s on a x0.05-scaled entry
_NOISE_ANGVEL = 0.05
_NOISE_IMU = 0.05
_NOISE_ROOT_POS = 0.05


def student_layout(joints: int = 10, points: int = 16, history: int = 10,
                   planar: bool = True, name: str | None = None
                   ) -> ObservationLayout:
    """Student observation layout; planar desk defaults, paper scale via
    joints=29, points=64, planar=False."""
    imu = 1 if planar else 2
    angv = 1 if planar else 3
    pos_s = 2 if planar else 3
    rot_s = 2 if planar else 6
    pdim = 2 if planar else 3
    proprio_dim = angv + imu + 3 * joints
    task_dim = pos_s + rot_s + pos_s + points * pdim
    mask_dim = 3 + 4 + (imu + joints) + task_dim

    block_rows = [
        ("global", [("global_goal_pos", 2, _NOISE_ROOT_POS),
                    ("global_goal_rot", 1, _NOISE_IMU)]),
        ("cmd", [("cmd", 4, 0.0)]),
        ("local", [("local_imu", imu, _NOISE_IMU),
                   ("local_joint", joints, _NOISE_JOINT_POS)]),
        ("proprio", [("proprio_angvel", angv, _NOISE_ANGVEL),
                     ("proprio_imu", imu, _NOISE_IMU),
                     ("proprio_joint_pos", joints, _NOISE_JOINT_POS),
                     ("proprio_joint_vel", joints, _NOISE_JOINT_VEL),
                     ("proprio_prev_action", joints, 0.0)]),
        ("history", [("history", history * proprio_dim, 0.0)]),
        ("task", [("task_obj_trans", pos_s, _NOISE_ROOT_POS),
                  ("task_obj_rot", rot_s, 0.0),
                  ("task_obj_pos", pos_s, _NOISE_ROOT_POS),
                  ("task_pcd", points * pdim, 0.0)]),
        ("mask", [("mask", mask_dim, 0.0)]),
    ]
    mask_def = [
        ("global_goal", ["global_goal_pos", "global_goal_rot"]),
        ("goal_cmd", ["cmd"]),
        ("local_goal", ["local_imu", "local_joint"]),
        ("object_trans", ["task_obj_trans"]),
        ("object_rot", ["task_obj_rot"]),
        ("object_pos", ["task_obj_pos"]),
        ("object_pcd", ["task_pcd"]),
    ]
    scale = "desk" if planar else "paper"
    meta = {"kind": "student", "scale": scale, "planar": planar,
            "joints": int(joints), "points": int(points),
            "history": int(history), "proprio_dim": int(proprio_dim)}
    return ObservationLayout(name or f"student_{scale}", block_rows,
                             mask_def, meta)


def teacher_layout(joints: int = 10, bodies: int = 7,
                   name: str = "teacher_desk") -> ObservationLayout:
    """Privileged teacher layout for the planar rig, two reference horizons."""
    block_rows = []
    for k in (0, 1):
        block_rows += [
            (f"o_sim_{k}", [
                (f"sim_root_h_{k}", 1, 0.0),
                (f"sim_body_pos_{k}", (bodies - 1) * 2, 0.0),
                (f"sim_body_rot_{k}", bodies * 2, 0.0),
                (f"sim_body_vel_{k}", bodies * 2, 0.0),
                (f"sim_body_angvel_{k}", bodies, 0.0),
                (f"sim_contact_{k}", bodies, 0.0),
                (f"sim_joint_state_{k}", joints * 5, 0.0),
            ]),
            (f"o_ref_{k}", [
                (f"ref_body_{k}", bodies * 4, 0.0),
                (f"ref_object_{k}", 7, 0.0),
            ]),
            (f"o_delta_{k}", [
                (f"delta_body_{k}", bodies * 7, 0.0),
                (f"delta_object_{k}", 7, 0.0),
            ]),
            (f"o_ig_{k}", [
                (f"ig_{k}", bodies * 6, 0.0),
            ]),
        ]
    meta = {"kind": "teacher", "scale": "desk", "planar": True,
            "joints": int(joints), "bodies": int(bodies)}
    return ObservationLayout(name, block_rows, (), meta)


def paper_student_layout() -> ObservationLayout:
    return student_layout(joints=29, points=64, history=10, planar=False,
                          name="student_paper")


# published per-frame row widths of the full-scale teacher table; the grand
# total printed alongside them (4052) exceeds their sum (2 x 1971 = 3942),
# so both numbers are carried and reported instead of patching either
_PAPER_TEACHER_ROWS = [
    ("root_height", 1), ("body_pos", 114), ("body_rot", 234),
    ("body_lin_vel", 117), ("body_ang_vel", 117), ("contact", 39),
    ("joint_state", 145), ("ref_body", 351), ("ref_object", 13),
    ("delta_body", 585), ("delta_object", 21), ("interaction", 234),
]
_PAPER_TEACHER_PRINTED_TOTAL = 4052


def paper_teacher_layout() -> ObservationLayout:
    block_rows = []
    for k in (0, 1):
        for rname, length in _PAPER_TEACHER_ROWS:
            block_rows.append((f"{rname}_{k}",
                               [(f"{rname}_{k}", length, 0.0)]))
    meta = {"kind": "teacher", "scale": "paper", "planar": False,
            "joints": 29, "bodies": 39,
            "rows": dict(_PAPER_TEACHER_ROWS),
            "printed_total": _PAPER_TEACHER_PRINTED_TOTAL}
    return ObservationLayout("teacher_paper", block_rows, (), meta)
