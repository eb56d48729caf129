"""Stage orchestration: retargeting, tracking teacher, distillation,
goal finetuning, and the retarget-rollout recorder.

Conventions shared by every stage:
- Policy networks output *offsets from the default joint pose*; the executed
  joint target is ``default_pose + mean (+ noise)``. Joint-limit bounds are
  shifted accordingly before they reach the bounds penalty.
- Observations are standardized by a running normalizer owned by the stage
  and stored in the checkpoint metadata, so eval and serve reproduce the
  exact inputs.
- Every epoch appends one JSON record to ``log.jsonl`` in the stage output
  directory; checkpoints are versioned containers with the layout embedded.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from ..motion.io import load_reference, save_reference
from ..motion.types import ReferenceTrajectory
from ..nets import (ActorCritic, StudentArchConfig, StudentPolicy,
                    load_checkpoint, save_checkpoint)
from ..obs.layout import student_layout, teacher_layout
from ..rewards.tracking import sim_view
from ..sim.domain_rand import DomainRandRanges
from ..sim.figure import TRACKED_BODIES, default_figure
from .distill import DistillConfig, choose_expert_actions, distill_losses
from .env import GoalVecEnv, TrackingVecEnv, group_by_box_size
from .normalize import RunningNormalizer
from .ppo import (ACPolicy, PPOBatch, PPOConfig, PriorStudentPolicy,
                  compute_gae, normalize_advantages, ppo_losses, ppo_update)
from .schedules import critic_warmup_multiplier, dagger_fraction, distill_lr

STAGES = ("retarget", "teacher", "distill", "finetune")


# ---------------------------------------------------------------------------
# configs


def _from_dict(cls, data: dict | None):
    if data is None:
        return cls()
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        if f.name == "ppo":
            v = _from_dict(PPOConfig, v)
        elif f.name == "distill":
            v = _from_dict(DistillConfig, v)
        kw[f.name] = v
    base = cls()
    return replace(base, **kw)


@dataclass
class RetargetStageConfig:
    epochs: int = 300
    ppo: PPOConfig = field(default_factory=PPOConfig.desk)
    blend_seconds: float = 1.0
    eval_every: int = 25
    eval_episodes: int = 1
    target_success: float | None = None   # stop early once reached
    time_budget_s: float | None = None

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)


@dataclass
class TeacherStageConfig:
    epochs: int = 400
    ppo: PPOConfig = field(default_factory=PPOConfig.desk)
    stand_still_p: float = 0.1
    domain_rand: bool = True
    eval_every: int = 25
    eval_episodes: int = 1
    target_success: float | None = None
    time_budget_s: float | None = None

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)


@dataclass
class DistillStageConfig:
    epochs: int = 600
    distill: DistillConfig = field(default_factory=DistillConfig.desk)
    mask_p: float = 0.3            # per-group hide probability during rollouts
    mask_p_start: float = 0.0      # curriculum: ramps to mask_p
    mask_ramp_epochs: int = 100
    domain_rand: bool = True
    obs_noise: bool = True
    stand_still_p: float = 0.1
    latent_reg: bool = False
    eval_every: int = 50
    eval_episodes: int = 1
    target_success: float | None = None
    time_budget_s: float | None = None

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)


@dataclass
class FinetuneStageConfig:
    epochs: int = 300
    ppo: PPOConfig = field(default_factory=PPOConfig.desk)
    distill: DistillConfig = field(default_factory=DistillConfig.desk)
    distill_env_fraction: float = 0.25
    ppo_scale: float = 0.1
    critic_warmup_epochs: int = 100
    goal_range: float = 0.5
    init_jitter: float = 0.1
    episode_seconds: float = 6.0
    mask_preset: str = "sparse_goal"
    schedule_offset: float | None = None  # defaults to end of the loss ramps
    obs_noise: bool = True
    eval_every: int = 25
    eval_episodes: int = 1
    time_budget_s: float | None = None

    @classmethod
    def from_dict(cls, d):
        if d is not None and "distill_env_fraction" in d:
            f = float(d["distill_env_fraction"])
            if not 0.0 < f < 1.0:
                raise ValueError("distill_env_fraction must lie in (0, 1)")
        return _from_dict(cls, d)


# ---------------------------------------------------------------------------
# logging / misc helpers


class JsonlLogger:
    """Append-only line-delimited JSON records."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf8")

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps(_jsonable(record)) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


def load_refs(paths) -> list:
    refs = []
    for p in paths:
        refs.append(load_reference(p))
    if not refs:
        raise ValueError("no reference trajectories given")
    return refs


def ref_paths_in(data_dir: str | Path, pattern: str = "*.npz") -> list:
    paths = sorted(Path(data_dir).glob(pattern))
    if not paths:
        raise FileNotFoundError(
            f"no trajectory files matching {pattern!r} in {data_dir}")
    return paths


def _sample_actions(mean: np.ndarray, log_std: float,
                    rng: np.random.Generator):
    std = float(np.exp(log_std))
    raw = mean + std * rng.standard_normal(mean.shape)
    logp = (-0.5 * ((raw - mean) / std) ** 2 - np.log(std)
            - 0.5 * np.log(2.0 * np.pi)).sum(axis=-1)
    return raw, logp


# ---------------------------------------------------------------------------
# tracking stages (retarget / teacher)


def _make_tracking_envs(refs, stage, cfg, seed, model) -> list:
    groups = group_by_box_size(refs)
    envs = []
    for gi, group in enumerate(groups):
        if stage == "retarget":
            envs.append(TrackingVecEnv(
                group, cfg.ppo.n_envs, "retarget", seed + 1000 * gi,
                model=model, blend_seconds=cfg.blend_seconds))
        else:
            envs.append(TrackingVecEnv(
                group, cfg.ppo.n_envs, "teacher", seed + 1000 * gi,
                model=model,
                dr_ranges=DomainRandRanges() if cfg.domain_rand else None,
                stand_still_p=cfg.stand_still_p))
    return envs


def _collect_ppo_rollout(env, policy, normalizer, cfg: PPOConfig,
                         rng, jp_default):
    n, T = env.n, cfg.horizon
    obs_dim, act_dim = env.obs_dim, env.action_dim
    obs_buf = np.zeros((T, n, obs_dim))
    act_buf = np.zeros((T, n, act_dim))
    logp_buf = np.zeros((T, n))
    val_buf = np.zeros((T, n))
    rew_buf = np.zeros((T, n))
    done_buf = np.zeros((T, n))
    succ = {"body": 0, "obj": 0, "episodes": 0}
    obs = env.obs()
    for t in range(T):
        if cfg.normalize_input:
            normalizer.update(obs)
            obs_n = normalizer.normalize(obs).numpy()
        else:
            obs_n = obs
        with torch.no_grad():
            mean, value = policy(torch.as_tensor(obs_n, dtype=torch.float32),
                                 None)
        mean = mean.numpy()
        raw, logp = _sample_actions(mean, float(policy.log_std[0]), rng)
        obs, reward, done, info = env.step(jp_default + raw)
        obs_buf[t] = obs_n
        act_buf[t] = raw
        logp_buf[t] = logp
        val_buf[t] = value.numpy()
        rew_buf[t] = reward
        done_buf[t] = done
        succ["episodes"] += int(done.sum())
        succ["body"] += int(info["success_body"].sum())
        succ["obj"] += int(info["success_obj"].sum())
    if cfg.normalize_input:
        obs_n = normalizer.normalize(obs).numpy()
    else:
        obs_n = obs
    with torch.no_grad():
        _, boot = policy(torch.as_tensor(obs_n, dtype=torch.float32), None)
    adv, ret = compute_gae(rew_buf, val_buf, done_buf, boot.numpy(),
                           cfg.gamma, cfg.gae_lambda)
    batch = PPOBatch(
        obs=obs_buf.reshape(T * n, -1), actions=act_buf.reshape(T * n, -1),
        old_logp=logp_buf.reshape(-1), advantages=adv.reshape(-1),
        returns=ret.reshape(-1))
    return batch, float(rew_buf.mean()), succ


def eval_tracking(env, act_fn, episodes: int = 1) -> dict:
    """Deterministic success rates over full episodes on every trajectory."""
    total = {"body": 0, "obj": 0, "episodes": 0}
    env.reset()
    guard = 0
    target_eps = episodes * env.n
    while total["episodes"] < target_eps and guard < 100_000:
        obs = env.obs()
        _, _, done, info = env.step(act_fn(obs))
        total["episodes"] += int(done.sum())
        total["body"] += int(info["success_body"].sum())
        total["obj"] += int(info["success_obj"].sum())
        guard += 1
    eps = max(total["episodes"], 1)
    return {"success_body": total["body"] / eps,
            "success_obj": total["obj"] / eps,
            "episodes": total["episodes"]}


def _tracking_stage(stage: str, refs, out_dir, seed, cfg):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = default_figure()
    envs = _make_tracking_envs(refs, stage, cfg, seed, model)
    layout = teacher_layout()
    torch.manual_seed(seed)
    net = ActorCritic(layout.total_dim, model.n_joints)
    policy = ACPolicy(net)
    normalizer = RunningNormalizer(layout.total_dim)
    opt = torch.optim.Adam(policy.parameters(), lr=cfg.ppo.lr)
    act_rng = np.random.default_rng(seed)
    shuffle_rng = np.random.default_rng(seed + 1)
    jp_default = model.default_pose.copy()
    bounds = (model.joint_limit_lo - jp_default,
              model.joint_limit_hi - jp_default)
    logger = JsonlLogger(out / "log.jsonl")
    t0 = time.monotonic()
    best = -1.0
    ckpt_path = out / f"{stage}.pt"

    def act_fn(obs):
        o = normalizer.normalize(obs).numpy() if cfg.ppo.normalize_input \
            else obs
        with torch.no_grad():
            mean, _ = policy(torch.as_tensor(o, dtype=torch.float32), None)
        return jp_default + mean.numpy()

    def save(meta_extra):
        meta = {"stage": stage, "seed": seed,
                "obs_norm": normalizer.to_meta(),
                "cfg": _jsonable({"ppo": cfg.ppo.to_dict()}),
                "action_offset": torch.as_tensor(jp_default),
                **meta_extra}
        save_checkpoint(ckpt_path, stage, net, layout=layout, meta=meta)

    stop_reason = "epochs"
    for epoch in range(cfg.epochs):
        env = envs[epoch % len(envs)]
        batch, mean_rew, succ = _collect_ppo_rollout(
            env, policy, normalizer, cfg.ppo, act_rng, jp_default)
        stats = ppo_update(policy, opt, batch, cfg.ppo, shuffle_rng,
                           bounds=bounds)
        rec = {"epoch": epoch, "stage": stage, "reward": mean_rew,
               "episodes": succ["episodes"],
               **{f"loss_{k}": v for k, v in stats.items()}}
        if succ["episodes"]:
            rec["rollout_success_body"] = succ["body"] / succ["episodes"]
            rec["rollout_success_obj"] = succ["obj"] / succ["episodes"]
        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            agg = {"success_body": 0.0, "success_obj": 0.0}
            for e in envs:
                r = eval_tracking(e, act_fn, cfg.eval_episodes)
                agg["success_body"] += r["success_body"] / len(envs)
                agg["success_obj"] += r["success_obj"] / len(envs)
            rec.update({f"eval_{k}": v for k, v in agg.items()})
            score = agg["success_obj"] if stage == "teacher" \
                else agg["success_body"]
            if score >= best:
                best = score
                save({"epoch": epoch, "eval": _jsonable(agg)})
            if cfg.target_success is not None \
                    and score >= cfg.target_success:
                stop_reason = "target_success"
                logger.write(rec)
                break
        logger.write(rec)
        if cfg.time_budget_s is not None \
                and time.monotonic() - t0 > cfg.time_budget_s:
            stop_reason = "time_budget"
            break
    if best < 0.0:
        save({"epoch": cfg.epochs - 1})
    logger.write({"stage": stage, "final": True, "stop_reason": stop_reason,
                  "best_eval": best, "wall_s": time.monotonic() - t0})
    logger.close()
    return ckpt_path


# ---------------------------------------------------------------------------
# retarget rollout recording


def load_tracking_policy(ckpt_path, expect_kind: str):
    """(net, normalizer, jp_offset, layout) from a tracking checkpoint."""
    ckpt = load_checkpoint(ckpt_path, expect_kind=expect_kind)
    layout = ckpt.layout
    model = default_figure()
    net = ActorCritic(layout.total_dim, model.n_joints)
    net.load_state_dict(ckpt.params)
    net.eval()
    normalizer = RunningNormalizer.from_meta(ckpt.meta["obs_norm"])
    offset = np.asarray(ckpt.meta["action_offset"], dtype=float)
    return net, normalizer, offset, layout


def rollout_retarget(ckpt_path, refs, out_dir, seed: int = 0,
                     require_success: bool = True) -> list:
    """Track every trajectory with the retarget policy's mean action and
    record the resulting target-embodiment motions as trajectory files.

    Returns the written paths (successful episodes only, unless
    ``require_success`` is off)."""
    net, normalizer, offset, _ = load_tracking_policy(ckpt_path, "retarget")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = default_figure()
    written = []
    manifest = []
    for gi, group in enumerate(group_by_box_size(refs)):
        env = TrackingVecEnv(group, len(group), "retarget", seed + gi,
                             model=model, fixed_assignment=True)
        spf = env.steps_per_frame
        frames = []          # list of per-frame dict snapshots
        succeeded = np.zeros(len(group), dtype=bool)
        finished = np.zeros(len(group), dtype=bool)

        def record():
            view = sim_view(env.state, env.engine, env.params)
            frames.append({
                "link_pos": view.tracked_pos.copy(),
                "link_rot": view.tracked_ang.copy(),
                "link_vel": view.tracked_vel.copy(),
                "link_rot_vel": view.tracked_angvel.copy(),
                "contact": view.contact_flags.copy(),
                "obj_pose": env.state.box_pose.copy(),
                "obj_vel": env.state.box_vel.copy(),
                "root_pose": env.state.root_pose.copy(),
                "root_vel": env.state.root_vel.copy(),
                "joint_pos": env.state.joint_pos.copy(),
                "joint_vel": env.state.joint_vel.copy(),
            })

        max_frames = max(tr.n_frames for tr in group)
        total_steps = env.blend_steps + (max_frames - 1) * spf
        for step in range(total_steps):
            obs = env.obs()
            o = normalizer.normalize(obs).numpy()
            with torch.no_grad():
                mean, _ = net(torch.as_tensor(o, dtype=torch.float32))
            _, _, done, info = env.step(offset + mean.numpy())
            newly = done & ~finished
            succeeded |= newly & info["success_obj"]
            finished |= done
            # frame k of the rollout = state after blend + k*spf steps
            done_steps = step + 1
            if done_steps >= env.blend_steps \
                    and (done_steps - env.blend_steps) % spf == 0:
                record()
        for i, src in enumerate(group):
            T = min(src.n_frames, len(frames))
            ok = bool(succeeded[i])
            name = f"rollout_{gi:02d}_{i:03d}"
            manifest.append({"source": src.text_label, "task": src.task_kind,
                             "file": name, "success": bool(ok),
                             "frames": int(T)})
            if not ok and require_success:
                continue
            traj = ReferenceTrajectory(
                fps=src.fps, anchors=list(TRACKED_BODIES),
                link_pos=np.stack([f["link_pos"][i] for f in frames[:T]]),
                link_rot=np.stack([f["link_rot"][i] for f in frames[:T]]),
                link_vel=np.stack([f["link_vel"][i] for f in frames[:T]]),
                link_rot_vel=np.stack(
                    [f["link_rot_vel"][i] for f in frames[:T]]),
                contact=np.stack([f["contact"][i] for f in frames[:T]]),
                obj_pose=np.stack([f["obj_pose"][i] for f in frames[:T]]),
                obj_vel=np.stack([f["obj_vel"][i] for f in frames[:T]]),
                root_pose=np.stack([f["root_pose"][i] for f in frames[:T]]),
                root_vel=np.stack([f["root_vel"][i] for f in frames[:T]]),
                joint_pos=np.stack([f["joint_pos"][i] for f in frames[:T]]),
                joint_vel=np.stack([f["joint_vel"][i] for f in frames[:T]]),
                box_size=src.box_size, leg_length=model.leg_length,
                correspondence={b: b for b in TRACKED_BODIES},
                text_label=src.text_label, task_kind=src.task_kind,
                embodiment="target")
            traj.validate()
            written.append(save_reference(traj, out / name))
    with open(out / "rollout_manifest.json", "w", encoding="utf8") as fh:
        json.dump(manifest, fh, indent=1)
    if not written:
        raise RuntimeError(
            "no successful retarget rollouts; train the retarget stage "
            "longer before recording teacher references")
    return written


# ---------------------------------------------------------------------------
# distillation


def _mask_curriculum(epoch: int, cfg: DistillStageConfig):
    if cfg.mask_ramp_epochs <= 0:
        return cfg.mask_p
    frac = min(epoch / cfg.mask_ramp_epochs, 1.0)
    return cfg.mask_p_start + (cfg.mask_p - cfg.mask_p_start) * frac


def distill_stage(teacher_ckpt, refs, out_dir, seed, cfg: DistillStageConfig):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = default_figure()
    t_net, t_norm, t_offset, t_layout = load_tracking_policy(
        teacher_ckpt, "teacher")
    s_layout = student_layout()
    torch.manual_seed(seed)
    arch = StudentArchConfig.desk()
    if cfg.latent_reg:
        arch = replace(arch, latent_decode=True)
    student = StudentPolicy(s_layout, t_layout.total_dim, model.n_joints,
                            arch=arch)
    s_norm = RunningNormalizer(s_layout.total_dim)
    opt = torch.optim.Adam(student.parameters(),
                           lr=distill_lr(0.0, cfg.distill) + 1e-12)
    rng = np.random.default_rng(seed)
    jp_default = model.default_pose.copy()
    dcfg = cfg.distill

    groups = group_by_box_size(refs)
    envs = [TrackingVecEnv(
        g, dcfg.n_envs, "teacher", seed + 1000 * gi, model=model,
        dr_ranges=DomainRandRanges() if cfg.domain_rand else None,
        stand_still_p=cfg.stand_still_p, student=True,
        mask_p=_mask_curriculum(0, cfg), obs_noise=cfg.obs_noise)
        for gi, g in enumerate(groups)]

    logger = JsonlLogger(out / "log.jsonl")
    ckpt_path = out / "student.pt"
    t0 = time.monotonic()

    def teacher_action(teacher_obs):
        o = t_norm.normalize(teacher_obs).numpy()
        with torch.no_grad():
            mean, _ = t_net(torch.as_tensor(o, dtype=torch.float32))
        return mean.numpy()

    def save(meta_extra):
        save_checkpoint(
            ckpt_path, "student", student, layout=s_layout,
            arch=student.arch.to_dict(),
            meta={"stage": "distill", "seed": seed,
                  "obs_norm": s_norm.to_meta(),
                  "teacher_obs_norm": t_norm.to_meta(),
                  "teacher_dim": t_layout.total_dim,
                  "action_offset": torch.as_tensor(jp_default),
                  "cfg": _jsonable({"distill": dcfg.to_dict()}),
                  **meta_extra})

    best = -1.0
    stop_reason = "epochs"
    for epoch in range(cfg.epochs):
        env = envs[epoch % len(envs)]
        env.mask_p = _mask_curriculum(epoch, cfg)
        beta = dagger_fraction(epoch, dcfg)
        lr = distill_lr(epoch, dcfg)
        for pg in opt.param_groups:
            pg["lr"] = max(lr, 1e-12)
        T, B = dcfg.horizon, env.n
        buf = {k: [] for k in ("obs", "priv", "flags", "a_exp", "local",
                               "fresh")}
        aux_buf: dict = {}
        fresh = np.ones(B)
        local_sl = s_layout.slice("local")
        for t in range(T):
            bundle = env.student_inputs()
            a_exp = teacher_action(bundle.privileged_obs)
            s_norm.update(bundle.obs)
            obs_n = s_norm.normalize(bundle.obs).numpy()
            priv_n = t_norm.normalize(bundle.privileged_obs).numpy()
            with torch.no_grad():
                s_mean, _, _ = student(
                    torch.as_tensor(obs_n, dtype=torch.float32),
                    torch.as_tensor(bundle.flags, dtype=torch.float32),
                    privileged_obs=torch.as_tensor(priv_n,
                                                   dtype=torch.float32),
                    mode="posterior")
            exec_raw = choose_expert_actions(rng, beta, a_exp,
                                             s_mean.numpy())
            buf["obs"].append(obs_n)
            buf["priv"].append(priv_n)
            buf["flags"].append(bundle.flags)
            buf["a_exp"].append(a_exp)
            # clean (unmasked) local block, normalized like the obs input so
            # the local-goal head can substitute for hidden entries
            buf["local"].append(
                s_norm.normalize_block(bundle.local_goal_target, local_sl))
            buf["fresh"].append(fresh.copy())
            for g, v in bundle.aux_targets.items():
                aux_buf.setdefault(g, []).append(v)
            _, _, done, _ = env.step(jp_default + exec_raw)
            fresh = done.astype(float)
        batch = {
            "obs": torch.as_tensor(np.stack(buf["obs"]),
                                   dtype=torch.float32),
            "privileged_obs": torch.as_tensor(np.stack(buf["priv"]),
                                              dtype=torch.float32),
            "mask_flags": torch.as_tensor(np.stack(buf["flags"]),
                                          dtype=torch.float32),
            "expert_actions": torch.as_tensor(np.stack(buf["a_exp"]),
                                              dtype=torch.float32),
            "fresh": torch.as_tensor(np.stack(buf["fresh"]),
                                     dtype=torch.float32),
            "aux_targets": {
                g: torch.as_tensor(np.stack(v), dtype=torch.float32)
                for g, v in aux_buf.items()},
            "local_goal_target": torch.as_tensor(
                np.stack(buf["local"]), dtype=torch.float32),
        }
        env_mb = max(1, dcfg.minibatch // dcfg.horizon)
        terms_acc: dict = {}
        count = 0
        for _ in range(dcfg.mini_epochs):
            order = rng.permutation(B)
            for s0 in range(0, B, env_mb):
                sel = torch.as_tensor(order[s0:s0 + env_mb])
                sub = {
                    "obs": batch["obs"][:, sel],
                    "privileged_obs": batch["privileged_obs"][:, sel],
                    "mask_flags": batch["mask_flags"][:, sel],
                    "expert_actions": batch["expert_actions"][:, sel],
                    "fresh": batch["fresh"][:, sel],
                    "aux_targets": {g: v[:, sel]
                                    for g, v in batch["aux_targets"].items()},
                    "local_goal_target": batch["local_goal_target"][:, sel],
                }
                total, terms = distill_losses(student, sub, epoch, dcfg)
                opt.zero_grad(set_to_none=True)
                total.backward()
                torch.nn.utils.clip_grad_norm_(student.parameters(), 1.0)
                opt.step()
                for k, v in terms.items():
                    terms_acc[k] = terms_acc.get(k, 0.0) + v
                count += 1
        rec = {"epoch": epoch, "stage": "distill", "beta": beta, "lr": lr,
               "mask_p": env.mask_p,
               **{k: v / count for k, v in terms_acc.items()}}
        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            agg = {"success_body": 0.0, "success_obj": 0.0}
            for e in envs:
                r = eval_student_tracking(student, s_norm, e, jp_default,
                                          episodes=cfg.eval_episodes)
                agg["success_body"] += r["success_body"] / len(envs)
                agg["success_obj"] += r["success_obj"] / len(envs)
            rec.update({f"eval_{k}": v for k, v in agg.items()})
            if agg["success_obj"] >= best:
                best = agg["success_obj"]
                save({"epoch": epoch, "eval": _jsonable(agg)})
            if cfg.target_success is not None \
                    and agg["success_obj"] >= cfg.target_success:
                stop_reason = "target_success"
                logger.write(rec)
                break
        logger.write(rec)
        if cfg.time_budget_s is not None \
                and time.monotonic() - t0 > cfg.time_budget_s:
            stop_reason = "time_budget"
            break
    if best < 0.0:
        save({"epoch": cfg.epochs - 1})
    logger.write({"stage": "distill", "final": True,
                  "stop_reason": stop_reason, "best_eval": best,
                  "wall_s": time.monotonic() - t0})
    logger.close()
    return ckpt_path


def eval_student_tracking(student, s_norm, env, jp_default,
                          episodes: int = 1, mode: str = "prior_only") -> dict:
    """Deployment-mode (prior-only) success rates on a tracking env."""
    total = {"body": 0, "obj": 0, "episodes": 0}
    env.reset_envs(np.arange(env.n))
    guard = 0
    while total["episodes"] < episodes * env.n and guard < 100_000:
        bundle = env.student_inputs()
        obs_n = s_norm.normalize(bundle.obs).numpy()
        with torch.no_grad():
            mean, _, _ = student(
                torch.as_tensor(obs_n, dtype=torch.float32),
                torch.as_tensor(bundle.flags, dtype=torch.float32),
                mode=mode)
        _, _, done, info = env.step(jp_default + mean.numpy())
        total["episodes"] += int(done.sum())
        total["body"] += int(info["success_body"].sum())
        total["obj"] += int(info["success_obj"].sum())
        guard += 1
    eps = max(total["episodes"], 1)
    return {"success_body": total["body"] / eps,
            "success_obj": total["obj"] / eps,
            "episodes": total["episodes"]}


# ---------------------------------------------------------------------------
# finetuning


def load_student(ckpt_path):
    """(student, s_norm, t_norm, jp_offset, layout, meta) from a checkpoint."""
    ckpt = load_checkpoint(ckpt_path, expect_kind="student")
    layout = ckpt.layout
    arch = StudentArchConfig.from_dict(ckpt.arch)
    model = default_figure()
    student = StudentPolicy(layout, int(ckpt.meta["teacher_dim"]),
                            model.n_joints, arch=arch)
    student.load_state_dict(ckpt.params)
    s_norm = RunningNormalizer.from_meta(ckpt.meta["obs_norm"])
    t_norm = RunningNormalizer.from_meta(ckpt.meta["teacher_obs_norm"])
    offset = np.asarray(ckpt.meta["action_offset"], dtype=float)
    return student, s_norm, t_norm, offset, layout, ckpt.meta


def finetune_stage(student_ckpt, teacher_ckpt, refs, out_dir, seed,
                   cfg: FinetuneStageConfig):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = default_figure()
    student, s_norm, t_norm, jp_default, s_layout, _ = \
        load_student(student_ckpt)
    t_net, t_norm2, t_offset, t_layout = load_tracking_policy(
        teacher_ckpt, "teacher")
    torch.manual_seed(seed)
    dcfg = cfg.distill
    offset_epoch = cfg.schedule_offset if cfg.schedule_offset is not None \
        else dcfg.ramp_start + dcfg.ramp_width

    n_total = cfg.ppo.n_envs
    n_distill = max(1, int(round(cfg.distill_env_fraction * n_total)))
    n_goal = n_total - n_distill
    if n_goal <= 0:
        raise ValueError("distill_env_fraction leaves no goal-reaching envs")

    groups = group_by_box_size(refs)
    denv = TrackingVecEnv(
        groups[0], n_distill, "teacher", seed + 7, model=model,
        dr_ranges=None, stand_still_p=0.0, student=True, mask_p=0.0,
        obs_noise=cfg.obs_noise)
    genv = GoalVecEnv(n_goal, seed + 13, model=model,
                      box_size=groups[0][0].box_size,
                      goal_range=cfg.goal_range,
                      init_jitter=cfg.init_jitter,
                      episode_seconds=cfg.episode_seconds,
                      mask_preset=cfg.mask_preset, obs_noise=cfg.obs_noise)
    policy = PriorStudentPolicy(student)
    opt = torch.optim.Adam(student.parameters(), lr=cfg.ppo.lr)
    act_rng = np.random.default_rng(seed)
    shuffle_rng = np.random.default_rng(seed + 1)
    bounds = (model.joint_limit_lo - jp_default,
              model.joint_limit_hi - jp_default)
    logger = JsonlLogger(out / "log.jsonl")
    ckpt_path = out / "student_finetuned.pt"
    t0 = time.monotonic()

    def teacher_action(teacher_obs):
        o = t_norm2.normalize(teacher_obs).numpy()
        with torch.no_grad():
            mean, _ = t_net(torch.as_tensor(o, dtype=torch.float32))
        return mean.numpy()

    def save(meta_extra):
        save_checkpoint(
            ckpt_path, "student", student, layout=s_layout,
            arch=student.arch.to_dict(),
            meta={"stage": "finetune", "seed": seed,
                  "obs_norm": s_norm.to_meta(),
                  "teacher_obs_norm": t_norm.to_meta(),
                  "teacher_dim": t_layout.total_dim,
                  "action_offset": torch.as_tensor(jp_default),
                  "partition": {"distill": n_distill, "goal": n_goal},
                  "cfg": _jsonable({"ppo": cfg.ppo.to_dict(),
                                    "distill": dcfg.to_dict(),
                                    "ppo_scale": cfg.ppo_scale,
                                    "critic_warmup_epochs":
                                        cfg.critic_warmup_epochs}),
                  **meta_extra})

    best = -1.0
    stop_reason = "epochs"
    for epoch in range(cfg.epochs):
        pg_mult = critic_warmup_multiplier(epoch, cfg.critic_warmup_epochs)
        # ---------------- goal-reaching rollout (prior-only + exploration)
        T = cfg.ppo.horizon
        n = genv.n
        obs_buf = np.zeros((T, n, genv.obs_dim))
        flag_buf = np.zeros((T, n, 7))
        act_buf = np.zeros((T, n, genv.action_dim))
        logp_buf = np.zeros((T, n))
        val_buf = np.zeros((T, n))
        rew_buf = np.zeros((T, n))
        done_buf = np.zeros((T, n))
        succ = {"goal": 0, "episodes": 0}
        obs = genv.obs()
        for t in range(T):
            s_norm.update(obs)
            obs_n = s_norm.normalize(obs).numpy()
            flags = genv.flags()
            with torch.no_grad():
                mean, value = policy(
                    torch.as_tensor(obs_n, dtype=torch.float32),
                    torch.as_tensor(flags, dtype=torch.float32))
            raw, logp = _sample_actions(mean.numpy(),
                                        float(student.log_std[0]), act_rng)
            obs, reward, done, info = genv.step(jp_default + raw)
            obs_buf[t], flag_buf[t] = obs_n, flags
            act_buf[t], logp_buf[t] = raw, logp
            val_buf[t], rew_buf[t], done_buf[t] = value.numpy(), reward, done
            succ["episodes"] += int(done.sum())
            succ["goal"] += int(info["success"].sum())
        obs_n = s_norm.normalize(obs).numpy()
        with torch.no_grad():
            _, boot = policy(torch.as_tensor(obs_n, dtype=torch.float32),
                             torch.as_tensor(genv.flags(),
                                             dtype=torch.float32))
        adv, ret = compute_gae(rew_buf, val_buf, done_buf, boot.numpy(),
                               cfg.ppo.gamma, cfg.ppo.gae_lambda)
        if cfg.ppo.normalize_advantage:
            adv = normalize_advantages(adv.reshape(-1)).reshape(adv.shape)
        N = T * n
        obs_f = torch.as_tensor(obs_buf.reshape(N, -1), dtype=torch.float32)
        flags_f = torch.as_tensor(flag_buf.reshape(N, -1),
                                  dtype=torch.float32)
        act_f = torch.as_tensor(act_buf.reshape(N, -1), dtype=torch.float32)
        logp_f = torch.as_tensor(logp_buf.reshape(-1), dtype=torch.float32)
        adv_f = torch.as_tensor(adv.reshape(-1), dtype=torch.float32)
        ret_f = torch.as_tensor(ret.reshape(-1), dtype=torch.float32)

        # ---------------- distillation rollout (imitation continues)
        Td, Bd = dcfg.horizon, denv.n
        buf = {k: [] for k in ("obs", "priv", "flags", "a_exp", "local",
                               "fresh")}
        aux_buf: dict = {}
        fresh = np.ones(Bd)
        local_sl = s_layout.slice("local")
        for t in range(Td):
            bundle = denv.student_inputs()
            a_exp = teacher_action(bundle.privileged_obs)
            obs_dn = s_norm.normalize(bundle.obs).numpy()
            priv_n = t_norm2.normalize(bundle.privileged_obs).numpy()
            with torch.no_grad():
                s_mean, _, _ = student(
                    torch.as_tensor(obs_dn, dtype=torch.float32),
                    torch.as_tensor(bundle.flags, dtype=torch.float32),
                    privileged_obs=torch.as_tensor(priv_n,
                                                   dtype=torch.float32),
                    mode="posterior")
            buf["obs"].append(obs_dn)
            buf["priv"].append(priv_n)
            buf["flags"].append(bundle.flags)
            buf["a_exp"].append(a_exp)
            buf["local"].append(
                s_norm.normalize_block(bundle.local_goal_target, local_sl))
            buf["fresh"].append(fresh.copy())
            for g, v in bundle.aux_targets.items():
                aux_buf.setdefault(g, []).append(v)
            _, _, done, _ = denv.step(jp_default + s_mean.numpy())
            fresh = done.astype(float)
        dbatch = {
            "obs": torch.as_tensor(np.stack(buf["obs"]),
                                   dtype=torch.float32),
            "privileged_obs": torch.as_tensor(np.stack(buf["priv"]),
                                              dtype=torch.float32),
            "mask_flags": torch.as_tensor(np.stack(buf["flags"]),
                                          dtype=torch.float32),
            "expert_actions": torch.as_tensor(np.stack(buf["a_exp"]),
                                              dtype=torch.float32),
            "fresh": torch.as_tensor(np.stack(buf["fresh"]),
                                     dtype=torch.float32),
            "aux_targets": {
                g: torch.as_tensor(np.stack(v), dtype=torch.float32)
                for g, v in aux_buf.items()},
            "local_goal_target": torch.as_tensor(
                np.stack(buf["local"]), dtype=torch.float32),
        }

        # ---------------- combined updates
        agg: dict = {}
        count = 0
        for _ in range(cfg.ppo.mini_epochs):
            order = shuffle_rng.permutation(N)
            size = min(cfg.ppo.minibatch, N)
            for s0 in range(0, N - size + 1, size):
                sel = torch.as_tensor(order[s0:s0 + size])
                ppo_total, stats = ppo_losses(
                    policy, obs_f[sel], act_f[sel], logp_f[sel], adv_f[sel],
                    ret_f[sel], cfg.ppo, bounds=bounds,
                    mask_flags=flags_f[sel], pg_multiplier=pg_mult)
                d_total, d_terms = distill_losses(
                    student, dbatch, offset_epoch + epoch, dcfg)
                total = cfg.ppo_scale * ppo_total + d_total
                opt.zero_grad(set_to_none=True)
                total.backward()
                torch.nn.utils.clip_grad_norm_(
                    [p for p in student.parameters() if p.requires_grad],
                    cfg.ppo.max_grad_norm)
                opt.step()
                for k, v in stats.items():
                    agg[f"ppo_{k}"] = agg.get(f"ppo_{k}", 0.0) + v
                for k, v in d_terms.items():
                    agg[f"distill_{k}"] = agg.get(f"distill_{k}", 0.0) + v
                count += 1
        rec = {"epoch": epoch, "stage": "finetune", "pg_mult": pg_mult,
               "reward": float(rew_buf.mean()),
               "episodes": succ["episodes"],
               **{k: v / count for k, v in agg.items()}}
        if succ["episodes"]:
            rec["rollout_success_goal"] = succ["goal"] / succ["episodes"]
        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            r = eval_goal(student, s_norm, genv, jp_default)
            rec["eval_success_goal"] = r["success_goal"]
            if r["success_goal"] >= best:
                best = r["success_goal"]
                save({"epoch": epoch, "eval": _jsonable(r)})
        logger.write(rec)
        if cfg.time_budget_s is not None \
                and time.monotonic() - t0 > cfg.time_budget_s:
            stop_reason = "time_budget"
            break
    if best < 0.0:
        save({"epoch": cfg.epochs - 1})
    logger.write({"stage": "finetune", "final": True,
                  "stop_reason": stop_reason, "best_eval": best,
                  "wall_s": time.monotonic() - t0})
    logger.close()
    return ckpt_path


def eval_goal(student, s_norm, env: GoalVecEnv, jp_default,
              episodes: int = 1) -> dict:
    """Deterministic prior-only goal success over full episodes."""
    total = {"goal": 0, "episodes": 0}
    env.reset_envs(np.arange(env.n))
    guard = 0
    while total["episodes"] < episodes * env.n and guard < 100_000:
        obs = env.obs()
        obs_n = s_norm.normalize(obs).numpy()
        with torch.no_grad():
            mean, _, _ = student(
                torch.as_tensor(obs_n, dtype=torch.float32),
                torch.as_tensor(env.flags(), dtype=torch.float32),
                mode="prior_only")
        _, _, done, info = env.step(jp_default + mean.numpy())
        total["episodes"] += int(done.sum())
        total["goal"] += int(info["success"].sum())
        guard += 1
    eps = max(total["episodes"], 1)
    return {"success_goal": total["goal"] / eps,
            "episodes": total["episodes"]}


# ---------------------------------------------------------------------------
# dispatcher


def run_stage(stage: str, cfg: dict | None, data: dict, seed: int):
    """Run one pipeline stage.

    ``data`` carries stage inputs: ``refs`` (trajectory paths or loaded
    trajectories), ``out_dir``, and prerequisite checkpoint paths
    (``retarget_ckpt``, ``teacher_ckpt``, ``student_ckpt``).
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")
    out_dir = data.get("out_dir", "runs/" + stage)
    refs = data.get("refs")
    if refs is not None and refs and not isinstance(
            refs[0], ReferenceTrajectory):
        refs = load_refs(refs)
    if stage == "retarget":
        if not refs:
            raise ValueError("retarget stage requires reference trajectories")
        return _tracking_stage("retarget", refs, out_dir, seed,
                               RetargetStageConfig.from_dict(cfg))
    if stage == "teacher":
        if not refs:
            raise ValueError(
                "teacher stage requires retargeted rollout trajectories; "
                "run train-retarget and rollout-retarget first")
        return _tracking_stage("teacher", refs, out_dir, seed,
                               TeacherStageConfig.from_dict(cfg))
    if stage == "distill":
        ckpt = data.get("teacher_ckpt")
        if not ckpt or not Path(ckpt).exists():
            raise FileNotFoundError(
                "distillation requires a teacher checkpoint; run "
                "train-teacher first")
        if not refs:
            raise ValueError("distillation requires reference trajectories")
        return distill_stage(ckpt, refs, out_dir, seed,
                             DistillStageConfig.from_dict(cfg))
    # finetune
    student_ckpt = data.get("student_ckpt")
    teacher_ckpt = data.get("teacher_ckpt")
    if not student_ckpt or not Path(student_ckpt).exists():
        raise FileNotFoundError(
            "finetuning requires a distilled student checkpoint; run "
            "distill first")
    if not teacher_ckpt or not Path(teacher_ckpt).exists():
        raise FileNotFoundError(
            "finetuning requires the teacher checkpoint for the "
            "distillation partition; run train-teacher first")
    if not refs:
        raise ValueError("finetuning requires reference trajectories for "
                         "the distillation partition")
    return finetune_stage(student_ckpt, teacher_ckpt, refs, out_dir, seed,
                          FinetuneStageConfig.from_dict(cfg))
