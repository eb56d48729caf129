"""Command-line entry point.

Commands: generate-data, train-retarget, rollout-retarget, train-teacher,
distill, finetune, eval, export-latents, plot-latents, serve. Every command
accepts ``--config <file>`` (YAML or JSON), ``--seed <int>``, and
``--out <dir>``; training commands append line-delimited JSON logs under the
output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def load_config(path: str | None) -> dict | None:
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    text = p.read_text(encoding="utf8")
    if p.suffix in (".yaml", ".yml"):
        import yaml
        return yaml.safe_load(text) or {}
    return json.loads(text or "{}")


def _load_refs_arg(data_dir: str, split: str | None = None,
                   limit: int | None = None, scale_to_target: bool = True,
                   task: str | None = None) -> list:
    """Load trajectories from a corpus or rollout directory.

    If a corpus manifest is present, filter by split/task; source-embodiment
    motions are scaled onto the target figure.
    """
    from .motion.dataset import MANIFEST_NAME, load_manifest
    from .motion.io import load_reference
    from .motion.transforms import scale_and_correspond
    from .sim.figure import default_figure

    data = Path(data_dir)
    if not data.exists():
        raise FileNotFoundError(f"data directory not found: {data}")
    if (data / MANIFEST_NAME).exists():
        manifest = load_manifest(data)
        entries = manifest["entries"]
        if split is not None:
            entries = [e for e in entries if e["split"] == split]
        if task is not None:
            entries = [e for e in entries if e["task_kind"] == task]
        paths = [data / e["file"] for e in entries]
    else:
        paths = sorted(data.glob("*.traj.npz"))
    if limit is not None:
        paths = paths[:limit]
    if not paths:
        where = f"{data}" if split is None else f"{data} (split {split!r})"
        raise FileNotFoundError(f"no trajectories found in {where}")
    model = default_figure()
    refs = []
    for p in paths:
        ref = load_reference(p)
        if scale_to_target and ref.embodiment == "source":
            ref = scale_and_correspond(ref, model)
        refs.append(ref)
    return refs


def _add_common(sp, out_default: str):
    sp.add_argument("--config", default=None,
                    help="YAML/JSON config overrides")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=out_default, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="locobox",
        description="Desk-scale loco-manipulation tracking pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("generate-data",
                        help="generate the synthetic motion corpus")
    sp.add_argument("--n", type=int, default=20, help="base task count")
    _add_common(sp, "data/corpus")
    sp.add_argument("--out-dir", dest="out_dir", default=None,
                    help="alias for --out")

    sp = sub.add_parser("train-retarget",
                        help="PPO retargeting onto the target figure")
    sp.add_argument("--data", required=True, help="corpus directory")
    sp.add_argument("--split", default="id", choices=["id", "ood", "all"])
    sp.add_argument("--limit", type=int, default=None,
                    help="cap the number of trajectories")
    _add_common(sp, "runs/retarget")

    sp = sub.add_parser("rollout-retarget",
                        help="record retargeted rollouts as trajectory files")
    sp.add_argument("--ckpt", required=True, help="retarget checkpoint")
    sp.add_argument("--data", required=True, help="corpus directory")
    sp.add_argument("--split", default="id", choices=["id", "ood", "all"])
    sp.add_argument("--limit", type=int, default=None)
    sp.add_argument("--keep-failures", action="store_true",
                    help="also write rollouts that missed the success bar")
    _add_common(sp, "runs/rollouts")

    sp = sub.add_parser("train-teacher",
                        help="PPO tracking teacher on retargeted rollouts")
    sp.add_argument("--data", required=True, help="rollout directory")
    sp.add_argument("--limit", type=int, default=None)
    _add_common(sp, "runs/teacher")

    sp = sub.add_parser("distill",
                        help="distill the teacher into the masked student")
    sp.add_argument("--data", required=True, help="rollout directory")
    sp.add_argument("--teacher-ckpt", required=True)
    sp.add_argument("--limit", type=int, default=None)
    _add_common(sp, "runs/distill")

    sp = sub.add_parser("finetune",
                        help="RL-finetune the student prior on goal tasks")
    sp.add_argument("--data", required=True, help="rollout directory")
    sp.add_argument("--student-ckpt", required=True)
    sp.add_argument("--teacher-ckpt", required=True)
    sp.add_argument("--limit", type=int, default=None)
    _add_common(sp, "runs/finetune")

    sp = sub.add_parser("eval", help="tracking/goal metrics and reports")
    sp.add_argument("--traj-dir", default=None,
                    help="recorded trajectories to score")
    sp.add_argument("--ref-dir", default=None,
                    help="reference trajectories to score against")
    sp.add_argument("--report", default=None, help="CSV report path")
    sp.add_argument("--ckpt", default=None,
                    help="roll this checkpoint out on --ref-dir first")
    sp.add_argument("--preset", default="tracking",
                    help="availability preset for student rollouts")
    sp.add_argument("--seeds", type=int, default=3,
                    help="rollout seeds for the aggregate rows")
    _add_common(sp, "runs/eval")

    sp = sub.add_parser("export-latents",
                        help="dump prior latents per rollout window/preset")
    sp.add_argument("--ckpt", required=True, help="student checkpoint")
    sp.add_argument("--data", required=True, help="trajectory directory")
    sp.add_argument("--window", type=int, default=30,
                    help="control steps per latent window")
    sp.add_argument("--limit", type=int, default=None)
    _add_common(sp, "runs/latents")

    sp = sub.add_parser("plot-latents",
                        help="2D scatter from externally embedded coords")
    sp.add_argument("--coords", required=True,
                    help="CSV with x,y columns (external embedding)")
    sp.add_argument("--records", required=True,
                    help="records CSV written by export-latents")
    _add_common(sp, "runs/latents")

    sp = sub.add_parser("serve",
                        help="run the interactive control server")
    sp.add_argument("--port", type=int, default=8765)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--ckpt", default=None,
                    help="student checkpoint (random-init student if absent)")
    sp.add_argument("--max-ticks", type=int, default=None,
                    help="stop after this many control ticks")
    _add_common(sp, "runs/serve")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config)

    if args.command == "generate-data":
        from .motion.dataset import build_corpus
        out = args.out_dir or args.out
        manifest = build_corpus(out, n_base=args.n, seed=args.seed)
        print(f"wrote {len(manifest['entries'])} trajectories to {out}")
        return 0

    if args.command == "train-retarget":
        from .training import run_stage
        split = None if args.split == "all" else args.split
        refs = _load_refs_arg(args.data, split=split, limit=args.limit)
        ckpt = run_stage("retarget", cfg, {"refs": refs, "out_dir": args.out},
                         args.seed)
        print(f"retarget checkpoint: {ckpt}")
        return 0

    if args.command == "rollout-retarget":
        from .training import rollout_retarget
        split = None if args.split == "all" else args.split
        refs = _load_refs_arg(args.data, split=split, limit=args.limit)
        written = rollout_retarget(args.ckpt, refs, args.out, seed=args.seed,
                                   require_success=not args.keep_failures)
        print(f"recorded {len(written)} rollouts in {args.out}")
        return 0

    if args.command == "train-teacher":
        from .training import run_stage
        refs = _load_refs_arg(args.data, limit=args.limit)
        ckpt = run_stage("teacher", cfg, {"refs": refs, "out_dir": args.out},
                         args.seed)
        print(f"teacher checkpoint: {ckpt}")
        return 0

    if args.command == "distill":
        from .training import run_stage
        refs = _load_refs_arg(args.data, limit=args.limit)
        ckpt = run_stage("distill", cfg,
                         {"refs": refs, "out_dir": args.out,
                          "teacher_ckpt": args.teacher_ckpt}, args.seed)
        print(f"student checkpoint: {ckpt}")
        return 0

    if args.command == "finetune":
        from .training import run_stage
        refs = _load_refs_arg(args.data, limit=args.limit)
        ckpt = run_stage("finetune", cfg,
                         {"refs": refs, "out_dir": args.out,
                          "student_ckpt": args.student_ckpt,
                          "teacher_ckpt": args.teacher_ckpt}, args.seed)
        print(f"finetuned checkpoint: {ckpt}")
        return 0

    if args.command == "eval":
        from .evals.report import run_eval
        report = run_eval(traj_dir=args.traj_dir, ref_dir=args.ref_dir,
                          report_path=args.report, ckpt=args.ckpt,
                          preset=args.preset, out_dir=args.out,
                          seeds=args.seeds, seed=args.seed)
        print(f"report: {report}")
        return 0

    if args.command == "export-latents":
        from .evals.latents import export_latents
        path = export_latents(args.ckpt, args.data, args.out,
                              window=args.window, limit=args.limit,
                              seed=args.seed)
        print(f"latent records: {path}")
        return 0

    if args.command == "plot-latents":
        from .evals.latents import plot_latents
        path = plot_latents(args.coords, args.records, args.out)
        print(f"scatter: {path}")
        return 0

    if args.command == "serve":
        from .serve.server import serve_forever
        serve_forever(host=args.host, port=args.port, ckpt=args.ckpt,
                      seed=args.seed, out_dir=args.out, cfg=cfg,
                      max_ticks=args.max_ticks)
        return 0

    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
