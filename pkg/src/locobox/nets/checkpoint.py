"""Versioned checkpoint container shared by training, eval, and serving."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import torch

from ..obs.layout import ObservationLayout

CHECKPOINT_VERSION = 1


@dataclasses.dataclass
class Checkpoint:
    kind: str
    params: dict
    layout: ObservationLayout | None
    arch: dict
    meta: dict
    format_version: int = CHECKPOINT_VERSION


def save_checkpoint(path, kind: str, model: torch.nn.Module,
                    layout: ObservationLayout | None = None,
                    arch: dict | None = None,
                    meta: dict | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": str(kind),
        "params": {k: v.detach().cpu() for k, v in model.state_dict().items()},
        "layout": layout.to_json() if layout is not None else None,
        "arch": dict(arch) if arch else {},
        "meta": dict(meta) if meta else {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path, expect_kind: str | None = None) -> Checkpoint:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise ValueError(f"{path}: not a recognized checkpoint file")
    version = payload["format_version"]
    if version != CHECKPOINT_VERSION:
        raise ValueError(
            f"{path}: format version {version} unsupported "
            f"(expected {CHECKPOINT_VERSION})")
    if expect_kind is not None and payload["kind"] != expect_kind:
        raise ValueError(
            f"{path}: checkpoint kind {payload['kind']!r} != "
            f"expected {expect_kind!r}")
    layout = ObservationLayout.from_json(payload["layout"]) \
        if payload.get("layout") else None
    return Checkpoint(kind=payload["kind"], params=payload["params"],
                      layout=layout, arch=payload.get("arch", {}),
                      meta=payload.get("meta", {}), format_version=version)


def require_layout_match(ckpt: Checkpoint, layout: ObservationLayout) -> None:
    """Reject a checkpoint whose embedded layout differs from the live one."""
    if ckpt.layout is None:
        raise ValueError("checkpoint carries no observation layout")
    if ckpt.layout.to_json() != layout.to_json():
        raise ValueError(
            f"checkpoint layout {ckpt.layout.name!r} (dim "
            f"{ckpt.layout.total_dim}) does not match the requested layout "
            f"{layout.name!r} (dim {layout.total_dim})")
