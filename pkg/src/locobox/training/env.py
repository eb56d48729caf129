"""Vectorized rollout environments for the tracking and goal stages.

``TrackingVecEnv`` drives n parallel figures against recorded reference
trajectories: the retarget stage runs at simulation frequency with raised
torque limits from a standing start (a 1 s ramp of tracking temperatures
while the first frame is held), the teacher stage runs at control frequency
from randomly sampled reference frames with domain randomization, pushes,
and occasional stand-still episodes. It can additionally produce student-
side inputs (goals, sensed points, history, masks) so distillation rollouts
reuse the same stepping loop.

``GoalVecEnv`` drives goal-reaching episodes with randomly offset object and
base targets for the finetuning stage.

All trajectories inside one env instance must share a single object size
(the simulator's box edge is global); ``group_by_box_size`` partitions a
mixed corpus accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..obs.layout import ObservationLayout, student_layout, teacher_layout
from ..obs.mask import AvailabilityMask, preset_mask, sample_availability_mask
from ..obs.noise import apply_obs_noise
from ..obs.student import (GoalPacket, ProprioHistory, StudentSensors,
                           build_student_obs, proprio_frame)
from ..obs.teacher import build_teacher_obs
from ..rewards.finetune import finetune_reward
from ..rewards.smoothness import smoothness_penalties, smoothness_total
from ..rewards.tracking import tracking_factors, sim_view
from ..rewards.types import (FinetuneCoeffs, GoalTargets, RefFrame,
                             TrackingCoeffs)
from ..sim.domain_rand import (DomainRandRanges, apply_push, nominal_params,
                               resample_gravity, sample_domain_params)
from ..sim.engine import get_engine
from ..sim.figure import TRACKED_BODIES, default_figure, stand_pose
from ..sim.sensor import SensorNoise, sense_points
from ..sim.state import SimConfig
from ..sim.termination import (REASON_NAMES, TerminationConfig,
                               check_termination)

_FOOT_COLS = (TRACKED_BODIES.index("l_foot"), TRACKED_BODIES.index("r_foot"))
_PALM_COLS = (TRACKED_BODIES.index("l_palm"), TRACKED_BODIES.index("r_palm"))

SUCCESS_RADIUS = 0.3           # strict per-frame error bound for success


def group_by_box_size(refs: list, tol: float = 1e-9) -> list:
    """Partition trajectories into groups sharing one object size."""
    groups: list = []
    for ref in refs:
        for g in groups:
            if abs(g[0].box_size - ref.box_size) <= tol:
                g.append(ref)
                break
        else:
            groups.append([ref])
    return groups


def gather_multi(trajs: list, traj_ids: np.ndarray, frame_idx: np.ndarray
                 ) -> RefFrame:
    """Per-env reference frames drawn from per-env trajectories."""
    traj_ids = np.asarray(traj_ids, dtype=int)
    frame_idx = np.asarray(frame_idx, dtype=int)
    n = traj_ids.shape[0]
    t0 = trajs[0]
    K = t0.link_pos.shape[1]
    J = t0.joint_pos.shape[1]
    out = RefFrame(
        link_pos=np.zeros((n, K, 2)), link_rot=np.zeros((n, K)),
        link_vel=np.zeros((n, K, 2)), link_rot_vel=np.zeros((n, K)),
        contact=np.zeros((n, K)), obj_pose=np.zeros((n, 3)),
        obj_vel=np.zeros((n, 3)), root_pose=np.zeros((n, 3)),
        root_vel=np.zeros((n, 3)), joint_pos=np.zeros((n, J)),
        joint_vel=np.zeros((n, J)), box_size=t0.box_size)
    for tid in np.unique(traj_ids):
        rows = np.nonzero(traj_ids == tid)[0]
        tr = trajs[tid]
        idx = np.clip(frame_idx[rows], 0, tr.n_frames - 1)
        out.link_pos[rows] = tr.link_pos[idx]
        out.link_rot[rows] = tr.link_rot[idx]
        out.link_vel[rows] = tr.link_vel[idx]
        out.link_rot_vel[rows] = tr.link_rot_vel[idx]
        out.contact[rows] = tr.contact[idx]
        out.obj_pose[rows] = tr.obj_pose[idx]
        out.obj_vel[rows] = tr.obj_vel[idx]
        out.root_pose[rows] = tr.root_pose[idx]
        out.root_vel[rows] = tr.root_vel[idx]
        out.joint_pos[rows] = tr.joint_pos[idx]
        out.joint_vel[rows] = tr.joint_vel[idx]
    return out


def stand_still_reference(model, box_size: float, duration: float = 4.0,
                          fps: float = 30.0):
    """Constant standing trajectory with the object at rest off to the side."""
    from ..motion.types import ReferenceTrajectory

    eng = get_engine(model, SimConfig(box_size=box_size))
    st = eng.make_state(1)
    root, jp = stand_pose(model)
    box = np.array([1.5, box_size / 2.0, 0.0])
    eng.reset_pose(st, root, jp, box_pose=box)
    snap = eng.snapshot(st)
    T = max(2, int(round(duration * fps)))
    K = snap.tracked_pos.shape[1]
    contact = np.zeros((T, K))
    contact[:, list(_FOOT_COLS)] = 1.0
    return ReferenceTrajectory(
        fps=fps, anchors=list(TRACKED_BODIES),
        link_pos=np.repeat(snap.tracked_pos, T, axis=0),
        link_rot=np.repeat(snap.tracked_ang, T, axis=0),
        link_vel=np.zeros((T, K, 2)), link_rot_vel=np.zeros((T, K)),
        contact=contact,
        obj_pose=np.repeat(box[None], T, axis=0), obj_vel=np.zeros((T, 3)),
        root_pose=np.repeat(root[None], T, axis=0), root_vel=np.zeros((T, 3)),
        joint_pos=np.repeat(jp[None], T, axis=0),
        joint_vel=np.zeros((T, len(jp))), box_size=box_size,
        leg_length=model.leg_length,
        correspondence={b: b for b in TRACKED_BODIES},
        text_label="stand still", task_kind="stand", embodiment="target")


def phase_command(traj) -> np.ndarray:
    """(T, 4) per-frame command rows: approaching, leaving, time_to_go,
    end_of_episode; contact phases come from the palm labels."""
    T = traj.n_frames
    palm_cols = [traj.anchors.index(a) for a in ("l_palm", "r_palm")
                 if a in traj.anchors]
    touching = traj.contact[:, palm_cols].any(axis=1) if palm_cols \
        else np.zeros(T, dtype=bool)
    cmd = np.zeros((T, 4))
    if touching.any():
        first, last = np.nonzero(touching)[0][[0, -1]]
        cmd[:first, 0] = 1.0
        cmd[last + 1:, 1] = 1.0
    t = np.arange(T)
    cmd[:, 2] = 1.0 - t / max(T - 1, 1)
    cmd[-1, 3] = 1.0
    if traj.task_kind == "stand":
        cmd[:] = 0.0
        cmd[:, 3] = 1.0
    return cmd


def remask_obs(obs: np.ndarray, layout: ObservationLayout) -> np.ndarray:
    """Re-zero maskable groups using the flags stored in the vector itself
    (restores hard zeros after additive observation noise)."""
    out = np.asarray(obs).copy()
    cursor = layout.slice("mask").start
    for _, idx in layout.mask_groups:
        flag = out[:, cursor]
        out[:, idx] *= flag[:, None]
        cursor += idx.size
    return out


def effective_flags(obs: np.ndarray, layout: ObservationLayout) -> np.ndarray:
    """(n, groups) availability recorded in the vector's mask block."""
    cursor = layout.slice("mask").start
    cols = []
    for _, idx in layout.mask_groups:
        cols.append(np.asarray(obs)[:, cursor])
        cursor += idx.size
    return np.stack(cols, axis=1)


@dataclass
class StudentBundle:
    """Student-side inputs aligned with one tracking control step."""

    obs: np.ndarray              # (n, obs_dim) masked + noised policy input
    flags: np.ndarray            # (n, groups) effective availability
    privileged_obs: np.ndarray   # (n, teacher_dim)
    aux_targets: dict            # group -> (n, dim) clean block contents
    local_goal_target: np.ndarray


class TrackingVecEnv:
    """n parallel tracking episodes over a shared-object-size trajectory set."""

    def __init__(self, refs: list, n_envs: int, stage: str, seed: int,
                 model=None, dr_ranges: DomainRandRanges | None = None,
                 stand_still_p: float = 0.0, blend_seconds: float = 1.0,
                 random_start: bool | None = None,
                 term_cfg: TerminationConfig | None = None,
                 student: bool = False, mask_p=0.0,
                 sensor_noise: SensorNoise | None = None,
                 obs_noise: bool = False, fixed_assignment: bool = False):
        if stage not in ("retarget", "teacher"):
            raise ValueError(f"unknown tracking stage {stage!r}")
        if not refs:
            raise ValueError("at least one reference trajectory is required")
        sizes = {round(float(r.box_size), 9) for r in refs}
        if len(sizes) > 1:
            raise ValueError(
                f"trajectories mix object sizes {sorted(sizes)}; split them "
                "with group_by_box_size()")
        self.stage = stage
        self.n = int(n_envs)
        self.model = model if model is not None else default_figure()
        box_size = float(refs[0].box_size)
        if stage == "retarget":
            self.cfg = SimConfig(control_decimation=1, torque_limit_scale=3.0,
                                 box_size=box_size)
        else:
            self.cfg = SimConfig(box_size=box_size)
        self.engine = get_engine(self.model, self.cfg)
        self.layout = teacher_layout()
        self.refs = list(refs)
        self.dr = dr_ranges
        self.stand_still_p = float(stand_still_p) if stage == "teacher" else 0.0
        if self.stand_still_p > 0.0:
            self.refs.append(stand_still_reference(self.model, box_size))
            self.stand_tid = len(self.refs) - 1
        else:
            self.stand_tid = -1
        self.random_start = (stage == "teacher") if random_start is None \
            else bool(random_start)
        self.term_cfg = term_cfg if term_cfg is not None \
            else TerminationConfig()
        self.coeffs = TrackingCoeffs(mode=stage)
        self.rng = np.random.default_rng(seed)
        # env i always replays trajectory i % n_refs from frame 0
        self.fixed_assignment = bool(fixed_assignment)

        fps = float(self.refs[0].fps)
        spf = 1.0 / (fps * self.cfg.dt_control)
        if abs(spf - round(spf)) > 1e-9 or spf < 1.0:
            raise ValueError(
                f"control period {self.cfg.dt_control} does not divide the "
                f"reference frame period 1/{fps}")
        self.steps_per_frame = int(round(spf))
        self.blend_steps = int(round(blend_seconds / self.cfg.dt_control)) \
            if stage == "retarget" else 0

        for r in self.refs:
            if list(r.anchors) != list(TRACKED_BODIES):
                raise ValueError("trajectory anchors do not match the rig's "
                                 "tracked bodies")
            if abs(float(r.fps) - fps) > 1e-9:
                raise ValueError("trajectories mix frame rates")
        self._cmd_tables = [phase_command(r) for r in self.refs]
        self._lengths = np.array([r.n_frames for r in self.refs])

        n = self.n
        self.state = self.engine.make_state(n)
        self.params = nominal_params(n)
        self.traj_id = np.zeros(n, dtype=int)
        self.start_frame = np.zeros(n, dtype=int)
        self.tick = np.zeros(n, dtype=int)        # control steps past blend
        self.blend_left = np.zeros(n, dtype=int)
        self.frozen = np.zeros(n, dtype=bool)     # stand-still episodes
        self.t_in_ep = np.zeros(n, dtype=int)
        self.max_steps = np.zeros(n, dtype=int)
        self.time_since_push = np.full(n, 1e9)
        self.ok_body = np.ones(n, dtype=bool)
        self.ok_obj = np.ones(n, dtype=bool)
        self.mismatch = np.zeros(n, dtype=int)
        self.prev_action = np.zeros((n, self.model.n_joints))
        self.episode_counter = 0
        self._gravity_timer = 0.0

        self.student = bool(student)
        self.mask_p = mask_p
        self.obs_noise = bool(obs_noise)
        if self.student:
            self.student_layout = student_layout()
            self.sensor_noise = sensor_noise if sensor_noise is not None \
                else SensorNoise()
            meta = self.student_layout.meta
            self.history = ProprioHistory(n, meta["history"],
                                          meta["proprio_dim"])
            self.mask = AvailabilityMask.all_visible(n)

        self.reset()

    # ------------------------------------------------------------------
    @property
    def obs_dim(self) -> int:
        return self.layout.total_dim

    @property
    def action_dim(self) -> int:
        return self.model.n_joints

    @property
    def bounds(self):
        return self.model.joint_limit_lo, self.model.joint_limit_hi

    @property
    def dt_control(self) -> float:
        return self.cfg.dt_control

    def _frame_target(self) -> np.ndarray:
        """Reference frame index each env is currently held against."""
        adv = np.ceil(self.tick / self.steps_per_frame).astype(int)
        adv = np.where(self.frozen, 0, adv)
        return np.minimum(self.start_frame + adv, self._lengths[self.traj_id] - 1)

    def _gather(self, frame_idx: np.ndarray) -> RefFrame:
        return gather_multi(self.refs, self.traj_id, frame_idx)

    # ------------------------------------------------------------------
    def reset(self) -> np.ndarray:
        self.reset_envs(np.arange(self.n))
        return self.obs()

    def reset_envs(self, idx) -> None:
        idx = np.atleast_1d(np.asarray(idx, dtype=int))
        if idx.size == 0:
            return
        n_refs = len(self.refs) - (1 if self.stand_tid >= 0 else 0)
        for i in idx:
            if self.fixed_assignment:
                tid, start, frozen = int(i) % n_refs, 0, False
            elif self.stand_tid >= 0 \
                    and self.rng.uniform() < self.stand_still_p:
                tid, start, frozen = self.stand_tid, 0, True
            else:
                tid = int(self.rng.integers(0, n_refs))
                T = self.refs[tid].n_frames
                if self.random_start:
                    hi = max(1, T - 30)
                    start = int(self.rng.integers(0, hi))
                else:
                    start = 0
                frozen = False
            tr = self.refs[tid]
            self.traj_id[i] = tid
            self.start_frame[i] = start
            self.frozen[i] = frozen
            self.tick[i] = 0
            self.blend_left[i] = self.blend_steps
            self.t_in_ep[i] = 0
            if frozen:
                self.max_steps[i] = int(round(
                    tr.duration / self.cfg.dt_control))
            else:
                self.max_steps[i] = self.blend_steps + \
                    (tr.n_frames - 1 - start) * self.steps_per_frame
            if self.stage == "retarget":
                root, jp = stand_pose(self.model)
                root = root.copy()
                root[0] = tr.root_pose[start, 0]
                self.engine.reset_pose(self.state, root, jp,
                                       box_pose=tr.obj_pose[start],
                                       env_idx=i)
            else:
                self.engine.reset_pose(self.state, tr.root_pose[start],
                                       tr.joint_pos[start],
                                       box_pose=tr.obj_pose[start], env_idx=i)
                self.state.root_vel[i] = tr.root_vel[start]
                self.state.joint_vel[i] = tr.joint_vel[start]
                self.state.box_vel[i] = tr.obj_vel[start]
            if self.dr is not None and self.dr.enabled:
                p = sample_domain_params(self.rng, self.dr,
                                         episode_index=self.episode_counter)
                self.params.set_env(i, p)
                self.time_since_push[i] = self.rng.uniform(
                    0.0, self.dr.push_interval_s)
            else:
                self.time_since_push[i] = 1e9
            self.episode_counter += 1
            self.mismatch[i] = 0
            self.ok_body[i] = True
            self.ok_obj[i] = True
            self.prev_action[i] = self.state.last_action[i]
        if self.student:
            self.history.reset(np.isin(np.arange(self.n), idx))
            flags = sample_availability_mask(self.rng, self.mask_p, idx.size)
            for g in self.mask.as_dict():
                getattr(self.mask, g)[idx] = getattr(flags, g)

    # ------------------------------------------------------------------
    def step(self, actions: np.ndarray):
        """Advance one control step. Returns (obs, reward, done, info)."""
        actions = np.asarray(actions, dtype=float)
        prev_state = self.state.copy()
        prev_action = self.prev_action.copy()

        if self.dr is not None and self.dr.enabled:
            self._gravity_timer += self.cfg.dt_control
            if self._gravity_timer >= self.dr.gravity_interval_s:
                self._gravity_timer = 0.0
                resample_gravity(self.params, self.rng, self.dr)
            due = self.time_since_push >= self.dr.push_interval_s
            if due.any():
                apply_push(self.state, self.rng, self.dr.max_push_vel,
                           env_mask=due.astype(float))
                self.time_since_push[due] = 0.0
        self.time_since_push += self.cfg.dt_control

        self.engine.step(self.state, actions, self.params)
        self.prev_action = actions.copy()
        self.t_in_ep += 1
        blending = self.blend_left > 0
        self.blend_left = np.maximum(self.blend_left - 1, 0)
        self.tick += (~blending & ~self.frozen).astype(int)

        frame = self._frame_target()
        ref = self._gather(frame)
        view = sim_view(self.state, self.engine, self.params)
        bd = tracking_factors(view, ref, self.coeffs, self.cfg.box_size)
        if self.blend_steps > 0:
            factor = np.where(
                blending,
                (self.t_in_ep.astype(float)) / self.blend_steps, 1.0)
            r_track = bd.r_track ** np.clip(factor, 0.0, 1.0)
        else:
            r_track = bd.r_track

        # the standing-start blend gets the same grace window as a push,
        # so deviation/mismatch cannot kill an episode while it settles in
        tsp = self.time_since_push
        if self.stage == "retarget":
            settling = self.t_in_ep <= self.blend_steps
            tsp = np.where(settling, 0.0, tsp)
        term, reason, self.mismatch = check_termination(
            self.state, ref.root_pose[:, :2],
            ref.contact[:, list(_FOOT_COLS)],
            view.contact_flags[:, list(_FOOT_COLS)],
            self.mismatch, self.term_cfg, time_since_push=tsp)
        smooth = smoothness_penalties(
            self.state, prev_state, actions, prev_action, ref, self.engine,
            terminated=term.astype(float), params=self.params)
        reward = r_track + smoothness_total(smooth, self.stage)

        body_err = np.linalg.norm(
            view.tracked_pos - ref.link_pos, axis=-1).mean(axis=1)
        obj_err = np.linalg.norm(
            view.box_pose[:, :2] - ref.obj_pose[:, :2], axis=-1)
        self.ok_body &= ~term & (body_err < SUCCESS_RADIUS)
        self.ok_obj &= ~term & (obj_err < SUCCESS_RADIUS)

        timeout = self.t_in_ep >= self.max_steps
        done = term | timeout
        info = {
            "r_track": bd.r_track, "reward": reward,
            "reasons": [REASON_NAMES[r] for r in reason],
            "timeout": timeout,
            "body_err": body_err, "obj_err": obj_err,
            "success_body": (done & timeout & self.ok_body),
            "success_obj": (done & timeout & self.ok_body & self.ok_obj),
            "done_count": int(done.sum()),
        }
        if self.student:
            self.history.push(proprio_frame(self.state))
        if done.any():
            self.reset_envs(np.nonzero(done)[0])
        return self.obs(), reward, done, info

    # ------------------------------------------------------------------
    def obs(self) -> np.ndarray:
        frame = self._frame_target()
        near = self._gather(np.where(self.frozen, frame, frame + 1))
        far = self._gather(np.where(self.frozen, frame, frame + 16))
        return build_teacher_obs(self.state, [near, far], self.layout,
                                 self.engine, self.params)

    def student_inputs(self) -> StudentBundle:
        """Masked/noised student observation plus clean targets, aligned
        with the current state (call right after obs())."""
        if not self.student:
            raise ValueError("environment built without student inputs")
        frame = self._frame_target()
        near = self._gather(np.where(self.frozen, frame, frame + 1))
        final = gather_multi(self.refs, self.traj_id,
                             self._lengths[self.traj_id] - 1)
        cmd = np.stack([self._cmd_tables[t][min(f, self._cmd_tables[t].shape[0] - 1)]
                        for t, f in zip(self.traj_id, frame)])
        goals = GoalPacket(
            root_pose=final.root_pose, cmd=cmd,
            local_pitch=near.root_pose[:, 2], local_joint=near.joint_pos,
            obj_xy=final.obj_pose[:, :2], obj_theta=final.obj_pose[:, 2])
        pts, valid = sense_points(self.state, self.sensor_noise, self.rng,
                                  self.model, self.cfg.box_size)
        sensors = StudentSensors(obj_pose=self.state.box_pose.copy(),
                                 points=pts, points_valid=valid)
        lay = self.student_layout
        clean = build_student_obs(
            self.state, goals, sensors, AvailabilityMask.all_visible(self.n),
            self.history, lay, self.engine, self.params)
        masked = build_student_obs(
            self.state, goals, sensors, self.mask, self.history, lay,
            self.engine, self.params)
        if self.obs_noise:
            masked = remask_obs(apply_obs_noise(masked, lay, self.rng), lay)
        # effective availability as the builder recorded it (mask AND data)
        flags = effective_flags(masked, lay)
        aux_targets = {
            "global_goal": clean[:, lay.slice("global")],
            "goal_cmd": clean[:, lay.slice("cmd")],
            "object_trans": clean[:, lay.row_slice("task_obj_trans")],
            "object_rot": clean[:, lay.row_slice("task_obj_rot")],
            "object_pos": clean[:, lay.row_slice("task_obj_pos")],
            "object_pcd": clean[:, lay.row_slice("task_pcd")],
        }
        return StudentBundle(obs=masked, flags=flags,
                             privileged_obs=self.obs(),
                             aux_targets=aux_targets,
                             local_goal_target=clean[:, lay.slice("local")])


class GoalVecEnv:
    """Goal-reaching episodes: random object/base goal offsets from a
    jittered standing start; sparse-goal student observations."""

    def __init__(self, n_envs: int, seed: int, model=None,
                 box_size: float = 0.30, goal_range: float = 0.5,
                 init_jitter: float = 0.1, episode_seconds: float = 6.0,
                 lift_p: float = 0.3, lift_max: float = 0.3,
                 mask_preset: str = "sparse_goal",
                 sensor_noise: SensorNoise | None = None,
                 obs_noise: bool = False,
                 coeffs: FinetuneCoeffs | None = None):
        self.n = int(n_envs)
        self.model = model if model is not None else default_figure()
        self.cfg = SimConfig(box_size=box_size)
        self.engine = get_engine(self.model, self.cfg)
        self.layout = student_layout()
        self.rng = np.random.default_rng(seed)
        self.goal_range = float(goal_range)
        self.init_jitter = float(init_jitter)
        self.lift_p = float(lift_p)
        self.lift_max = float(lift_max)
        self.mask_preset = mask_preset
        self.sensor_noise = sensor_noise if sensor_noise is not None \
            else SensorNoise()
        self.obs_noise = bool(obs_noise)
        self.coeffs = coeffs if coeffs is not None else FinetuneCoeffs()
        self.max_steps = int(round(episode_seconds / self.cfg.dt_control))

        n = self.n
        self.state = self.engine.make_state(n)
        self.params = nominal_params(n)
        meta = self.layout.meta
        self.history = ProprioHistory(n, meta["history"], meta["proprio_dim"])
        self.mask = preset_mask(mask_preset, n)
        self.goals = GoalTargets(obj_xy=np.zeros((n, 2)),
                                 root_xy=np.zeros((n, 2)),
                                 obj_theta=None, root_theta=None)
        self.goal_root_pose = np.zeros((n, 3))
        self.t_in_ep = np.zeros(n, dtype=int)
        self.prev_action = np.zeros((n, self.model.n_joints))
        self.prev_dist: dict | None = None
        self.fell = np.zeros(n, dtype=bool)
        self.reset()

    @property
    def obs_dim(self) -> int:
        return self.layout.total_dim

    @property
    def action_dim(self) -> int:
        return self.model.n_joints

    @property
    def bounds(self):
        return self.model.joint_limit_lo, self.model.joint_limit_hi

    @property
    def dt_control(self) -> float:
        return self.cfg.dt_control

    def flags(self) -> np.ndarray:
        return np.stack([getattr(self.mask, g) for g in
                         ("global_goal", "goal_cmd", "local_goal",
                          "object_trans", "object_rot", "object_pos",
                          "object_pcd")], axis=1)

    # ------------------------------------------------------------------
    def reset(self) -> np.ndarray:
        self.reset_envs(np.arange(self.n))
        return self.obs()

    def reset_envs(self, idx) -> None:
        idx = np.atleast_1d(np.asarray(idx, dtype=int))
        if idx.size == 0:
            return
        half = self.cfg.box_size / 2.0
        root0, jp = stand_pose(self.model)
        for i in idx:
            root = root0.copy()
            root[0] += self.rng.uniform(-self.init_jitter, self.init_jitter)
            box_x = root[0] + 0.5 \
                + self.rng.uniform(-self.init_jitter, self.init_jitter)
            box = np.array([box_x, half, 0.0])
            self.engine.reset_pose(self.state, root, jp, box_pose=box,
                                   env_idx=i)
            gx = box_x + self.rng.uniform(-self.goal_range, self.goal_range)
            gz = half
            if self.rng.uniform() < self.lift_p:
                gz += self.rng.uniform(0.0, self.lift_max)
            self.goals.obj_xy[i] = (gx, gz)
            rx = root[0] + self.rng.uniform(-self.goal_range, self.goal_range)
            self.goals.root_xy[i] = (rx, root[1])
            self.goal_root_pose[i] = (rx, root[1], 0.0)
            self.t_in_ep[i] = 0
            self.fell[i] = False
            self.prev_action[i] = self.state.last_action[i]
        self.history.reset(np.isin(np.arange(self.n), idx))
        if self.prev_dist is not None:
            # re-baseline progress for the fresh episodes
            cur = self._distances()
            for key in self.prev_dist:
                self.prev_dist[key][idx] = cur[key][idx]

    def _distances(self) -> dict:
        return {
            "object": np.linalg.norm(
                self.state.box_pose[:, :2] - self.goals.obj_xy, axis=-1),
            "root": np.linalg.norm(
                self.state.root_pose[:, :2] - self.goals.root_xy, axis=-1),
        }

    # ------------------------------------------------------------------
    def step(self, actions: np.ndarray):
        actions = np.asarray(actions, dtype=float)
        prev_state = self.state.copy()
        prev_action = self.prev_action.copy()
        self.engine.step(self.state, actions, self.params)
        self.prev_action = actions.copy()
        self.t_in_ep += 1

        fall = (self.state.root_pose[:, 1] < 0.3) \
            | (np.abs(self.state.root_pose[:, 2]) > 1.0) \
            | self.state.unhealthy
        self.fell |= fall
        timeout = self.t_in_ep >= self.max_steps
        done = fall | timeout

        goal_r, terms = finetune_reward(
            self.state, self.goals, self.mask, self.prev_dist, self.coeffs,
            terminal=done)
        dist = terms["distances"]
        self.prev_dist = {k: v.copy() for k, v in dist.items()}
        smooth = smoothness_penalties(
            self.state, prev_state, actions, prev_action, None, self.engine,
            terminated=fall.astype(float), params=self.params)
        reward = goal_r + smoothness_total(smooth, "finetune")

        radius = self.coeffs.success_radius
        reached = (dist["object"] < radius) & (dist["root"] < radius)
        info = {"reward": reward, "goal_reward": goal_r,
                "success": done & ~self.fell & reached,
                "distances": dist,
                "timeout": timeout, "fall": fall,
                "done_count": int(done.sum())}
        self.history.push(proprio_frame(self.state))
        if done.any():
            self.reset_envs(np.nonzero(done)[0])
        return self.obs(), reward, done, info

    # ------------------------------------------------------------------
    def obs(self) -> np.ndarray:
        cmd = np.zeros((self.n, 4))
        cmd[:, 2] = 1.0 - self.t_in_ep / max(self.max_steps, 1)
        goals = GoalPacket(root_pose=self.goal_root_pose.copy(), cmd=cmd,
                           local_pitch=None, local_joint=None,
                           obj_xy=self.goals.obj_xy.copy(),
                           obj_theta=None)
        pts, valid = sense_points(self.state, self.sensor_noise, self.rng,
                                  self.model, self.cfg.box_size)
        sensors = StudentSensors(obj_pose=self.state.box_pose.copy(),
                                 points=pts, points_valid=valid)
        vec = build_student_obs(self.state, goals, sensors, self.mask,
                                self.history, self.layout, self.engine,
                                self.params)
        if self.obs_noise:
            vec = remask_obs(apply_obs_noise(vec, self.layout, self.rng),
                             self.layout)
        return vec
