"""Corpus builder: scripted base sequences fanned out by augmentation.

Twenty base task instances (four per task kind, jittered within the
generator's feasible envelope) are each expanded by three axis-scale pairs
and two object scales into 120 trajectories. Every entry lands in a
deterministic in-distribution ("id") or held-out ("ood") split: all variants
of held-out base motions are ood, as is the most distorted scale combination
of every other motion.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .generator import generate_reference
from .io import save_reference
from .transforms import augment
from .types import TaskSpec

AXIS_SCALES = ((1.0, 1.0), (0.9, 1.1), (1.2, 0.9))
OBJECT_SCALES = (1.0, 0.85)
N_BASE = 20
N_HELD_OUT = 4
MANIFEST_NAME = "manifest.json"


@dataclass
class CorpusEntry:
    file: str
    base_id: int
    task_kind: str
    axis_scale: tuple
    object_scale: float
    split: str
    text_label: str


def base_specs(rng: np.random.Generator, n: int = N_BASE) -> list[TaskSpec]:
    """Deterministic list of feasible base task instances."""
    kinds = ["stand", "lift", "push", "reposition", "carry"]
    specs = []
    for i in range(n):
        kind = kinds[i % len(kinds)]
        if kind == "stand":
            size = rng.uniform(0.34, 0.44)
            x = rng.uniform(1.6, 2.4)
            pose = (x, size / 2, 0.0)
            specs.append(TaskSpec("stand", size, pose, pose,
                                  rng.uniform(3.0, 4.0)))
        elif kind == "lift":
            size = rng.uniform(0.33, 0.45)
            x = rng.uniform(0.55, 0.70)
            goal_z = rng.uniform(0.45, 0.75)
            specs.append(TaskSpec(
                "lift", size, (x, size / 2, 0.0),
                (x + rng.uniform(-0.04, 0.04), goal_z, 0.0),
                rng.uniform(5.0, 6.0)))
        elif kind == "push":
            size = rng.uniform(0.42, 0.46)
            x = rng.uniform(0.55, 0.70)
            dx = rng.uniform(0.20, 0.70)
            specs.append(TaskSpec(
                "push", size, (x, size / 2, 0.0), (x + dx, size / 2, 0.0),
                5.0 + 6.0 * dx))
        elif kind == "reposition":
            size = rng.uniform(0.30, 0.42)
            x = rng.uniform(0.55, 0.70)
            dx = rng.uniform(0.04, 0.10) * rng.choice([-1.0, 1.0])
            specs.append(TaskSpec(
                "reposition", size, (x, size / 2, 0.0),
                (x + dx, size / 2, 0.0), rng.uniform(5.5, 6.5)))
        else:
            size = rng.uniform(0.30, 0.42)
            x = rng.uniform(0.55, 0.70)
            dx = rng.uniform(0.50, 1.50)
            specs.append(TaskSpec(
                "carry", size, (x, size / 2, 0.0), (x + dx, size / 2, 0.0),
                6.0 + 3.0 * dx))
    return specs


def split_of(base_id: int, axis_scale: tuple, object_scale: float,
             held_out: set[int]) -> str:
    """Held-out base motions are ood entirely; for the rest, only the most
    distorted axis/object-scale combination is ood."""
    if base_id in held_out:
        return "ood"
    if axis_scale == AXIS_SCALES[-1] and object_scale == OBJECT_SCALES[-1]:
        return "ood"
    return "id"


def build_corpus(out_dir: str | Path, n_base: int = N_BASE,
                 seed: int = 0) -> dict:
    """Generate, augment, and save the corpus; returns the manifest.

    Writes one ``.traj.npz`` per trajectory plus ``manifest.json`` listing
    every file with its split membership.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    specs = base_specs(rng, n_base)
    held = set(rng.choice(n_base, size=min(N_HELD_OUT, n_base),
                          replace=False).tolist())
    entries = []
    for base_id, spec in enumerate(specs):
        ref = generate_reference(spec, np.random.default_rng(
            rng.integers(0, 2**31)))
        for ax in AXIS_SCALES:
            for so in OBJECT_SCALES:
                var = augment(ref, ax, so)
                name = (f"{spec.task_kind}_{base_id:02d}"
                        f"_ax{ax[0]:.2f}x{ax[1]:.2f}_obj{so:.2f}")
                path = save_reference(var, out_dir / name)
                entries.append(CorpusEntry(
                    file=path.name, base_id=base_id,
                    task_kind=spec.task_kind, axis_scale=tuple(ax),
                    object_scale=so,
                    split=split_of(base_id, ax, so, held),
                    text_label=var.text_label))
    manifest = {
        "schema": 1,
        "seed": seed,
        "n_base": n_base,
        "axis_scales": [list(a) for a in AXIS_SCALES],
        "object_scales": list(OBJECT_SCALES),
        "held_out_bases": sorted(held),
        "entries": [e.__dict__ | {"axis_scale": list(e.axis_scale)}
                    for e in entries],
    }
    with open(out_dir / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest


def load_manifest(out_dir: str | Path) -> dict:
    with open(Path(out_dir) / MANIFEST_NAME) as fh:
        return json.load(fh)
