"""Trajectory file format: one self-describing ``.traj.npz`` per sequence.

The archive holds a JSON header (schema version, timing, anchor names,
correspondence, labels, sizes) plus one flat numeric array per recorded
quantity, so files stream back without any side tables.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .types import ReferenceTrajectory

SCHEMA_VERSION = 1
FILE_SUFFIX = ".traj.npz"

_ARRAY_FIELDS = ("link_pos", "link_rot", "link_vel", "link_rot_vel",
                 "contact", "obj_pose", "obj_vel", "root_pose", "root_vel",
                 "joint_pos", "joint_vel")


def save_reference(ref: ReferenceTrajectory, path: str | Path) -> Path:
    """Write one trajectory; returns the path actually written."""
    path = Path(path)
    if not path.name.endswith(FILE_SUFFIX):
        path = path.with_name(path.name + FILE_SUFFIX)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "schema": SCHEMA_VERSION,
        "fps": ref.fps,
        "anchors": list(ref.anchors),
        "correspondence": dict(ref.correspondence),
        "text_label": ref.text_label,
        "task_kind": ref.task_kind,
        "box_size": ref.box_size,
        "leg_length": ref.leg_length,
        "embodiment": ref.embodiment,
    }
    arrays = {f: getattr(ref, f) for f in _ARRAY_FIELDS}
    with open(path, "wb") as fh:
        np.savez_compressed(fh, header=np.frombuffer(
            json.dumps(header).encode(), dtype=np.uint8), **arrays)
    return path


def load_reference(path: str | Path) -> ReferenceTrajectory:
    with np.load(Path(path)) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported trajectory schema "
                             f"{header.get('schema')!r}")
        ref = ReferenceTrajectory(
            fps=float(header["fps"]),
            anchors=list(header["anchors"]),
            correspondence=dict(header["correspondence"]),
            text_label=header["text_label"],
            task_kind=header["task_kind"],
            box_size=float(header["box_size"]),
            leg_length=float(header["leg_length"]),
            embodiment=header["embodiment"],
            **{f: data[f] for f in _ARRAY_FIELDS},
        )
    ref.validate()
    return ref
