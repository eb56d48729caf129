"""Synthetic source-embodiment motion generator.

Each task is scripted as C1 keyframe tracks for the root, the object, the
palm reach points, and the foot plants; limb joint angles then come from
closed-form two-link inverse kinematics, and the stored anchor positions are
re-derived by forward kinematics so the trajectory is self-consistent. Palms
lock onto the box faces while the object moves, and every plan is checked
against the joint limits and reach envelopes, raising ValueError for
infeasible task requests.
"""

from __future__ import annotations

import numpy as np

from ..sim.figure import (FigureModel, source_figure, fk, site_table,
                          points_world, stand_pose, TRACKED_BODIES)
from .types import ReferenceTrajectory, TaskSpec, central_difference

# joint vector layout (matches the figure): legs then arms
HIP_L, KNEE_L, ANK_L, HIP_R, KNEE_R, ANK_R, SH_L, EL_L, SH_R, EL_R = range(10)

_TEXT_TEMPLATES = {
    "stand": ["stand still and keep balance",
              "hold a steady upright stance"],
    "lift": ["lift the box to {dz:.2f} m and hold it up",
             "raise the box off the ground and keep holding it"],
    "push": ["push the box {dx:.2f} m along the ground",
             "slide the box forward without lifting it"],
    "reposition": ["pick the box up and set it down {dx:.2f} m away",
                   "move the box to a nearby spot and release it"],
    "carry": ["carry the box {dx:.2f} m and set it down",
              "walk the box over to a new spot and release it"],
}


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _bump(t: np.ndarray) -> np.ndarray:
    """0 -> 1 -> 0 with zero slope at both ends."""
    t = np.clip(t, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * t))


def _track(T: int, keys: list) -> np.ndarray:
    """Piecewise-smoothstep interpolation of (frame, value) keyframes.

    Values hold before the first and after the last key; every segment has
    zero end slopes, so the whole track is C1.
    """
    vals = [np.asarray(v, dtype=float) for _, v in keys]
    out = np.empty((T,) + vals[0].shape)
    out[: keys[0][0]] = vals[0]
    for (f0, _), (f1, _), v0, v1 in zip(keys[:-1], keys[1:], vals[:-1], vals[1:]):
        if f1 <= f0:
            raise ValueError("keyframes must be strictly increasing")
        w = _smoothstep(np.arange(f1 - f0) / (f1 - f0))
        out[f0:f1] = v0 + (v1 - v0) * w.reshape((-1,) + (1,) * v0.ndim)
    out[keys[-1][0]:] = vals[-1]
    return out


def _apply_rot(theta, v):
    """Rotate planar vectors v (..., 2) by angles theta (...)."""
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([c * v[..., 0] - s * v[..., 1],
                     s * v[..., 0] + c * v[..., 1]], axis=-1)


def _two_link_ik(base: np.ndarray, target: np.ndarray, l1: float, l2: float,
                 bend: float):
    """World angles (a1, a2) of a two-segment chain that hangs straight down
    at zero angles. bend=-1 folds the middle joint backward (knee), +1
    forward (elbow). Returns (a1, a2, raw_distance)."""
    r = target - base
    raw = np.linalg.norm(r, axis=-1)
    d = np.clip(raw, abs(l1 - l2) + 1e-9, (l1 + l2) * (1.0 - 1e-9))
    cg = np.clip((l1 * l1 + l2 * l2 - d * d) / (2.0 * l1 * l2), -1.0, 1.0)
    gamma = np.arccos(cg)
    theta2 = bend * (np.pi - gamma)
    phi = np.arctan2(r[..., 0], -r[..., 1])
    cb = np.clip((l1 * l1 + d * d - l2 * l2) / (2.0 * l1 * d), -1.0, 1.0)
    beta = np.arccos(cb)
    a1 = phi - bend * beta
    return a1, a1 + theta2, raw


class _Rig:
    """Cached geometry of the source figure used by the planner."""

    def __init__(self, model: FigureModel):
        self.model = model
        self.l_thigh = -model.anchor[2, 1]      # shin anchor depth in thigh
        self.l_shin = -model.anchor[3, 1]
        self.l_uarm = -model.anchor[8, 1]
        self.l_farm = -model.sites["l_palm"][1][1]
        self.l_torso = model.anchor[7, 1]       # arm anchor height
        self.ankle_h = -model.sites["l_foot"][1][1]
        self.sole_dx = model.sites["l_foot"][1][0]
        self.arm = self.l_uarm + self.l_farm
        root, jp = stand_pose(model)
        self.stand_root = root
        self.stand_joints = jp
        origins, angles = fk(model, root[None], jp[None])
        li, lx = site_table(model, ["l_foot"])
        self.stand_foot_x = float(points_world(origins, angles, li, lx)[0, 0, 0])

    def shoulder(self, root: np.ndarray) -> np.ndarray:
        """World shoulder position for root poses (..., 3)."""
        off = _apply_rot(root[..., 2], np.broadcast_to(
            np.array([0.0, self.l_torso]), root.shape[:-1] + (2,)))
        return root[..., :2] + off

    def default_palm(self, root: np.ndarray) -> np.ndarray:
        """Palm position at the default hanging-arm angles, (..., 2)."""
        au = root[..., 2] + self.stand_joints[SH_L]
        af = au + self.stand_joints[EL_L]
        p = self.shoulder(root)
        p = p + self.l_uarm * np.stack([np.sin(au), -np.cos(au)], axis=-1)
        return p + self.l_farm * np.stack([np.sin(af), -np.cos(af)], axis=-1)


def _reach_root(rig: _Rig, targets: np.ndarray, lean: float,
                root_z: float | None = None) -> np.ndarray:
    """Root pose (x, z, pitch) putting the shoulder in comfortable reach of
    every target; the worst-case target corner sits at 93% arm extension."""
    tz = targets[:, 1].min()
    tx_far = targets[:, 0].max()
    pitch = -lean
    off = _apply_rot(np.array(pitch), np.array([0.0, rig.l_torso]))
    lo, hi = 0.58 * rig.stand_root[1], 0.97 * rig.stand_root[1]
    if root_z is None:
        root_z = tz + 0.62 * rig.arm - off[1]
    root_z = float(np.clip(root_z, lo, hi))
    dz = tz - (root_z + off[1])
    gap = (0.93 * rig.arm) ** 2 - dz * dz
    if gap < 1e-4:
        raise ValueError("reach targets sit too far below the shoulder; "
                         "the task is outside the figure's envelope")
    return np.array([tx_far - off[0] - np.sqrt(gap), root_z, pitch])


def _ground_pose(rig: _Rig, targets: np.ndarray, root_x: float,
                 lean: float = 0.72) -> np.ndarray:
    """Root pose reaching grounded targets with the root x pinned (e.g. above
    the feet): the root height is solved so the worst-case target corner sits
    at 93% arm extension."""
    tz = targets[:, 1].min()
    tx_far = targets[:, 0].max()
    off = _apply_rot(np.array(-lean), np.array([0.0, rig.l_torso]))
    horiz = tx_far - off[0] - root_x
    gap = (0.93 * rig.arm) ** 2 - horiz * horiz
    if gap < 1e-4:
        raise ValueError("reach targets sit too far ahead of the root; "
                         "the task is outside the figure's envelope")
    root_z = tz - off[1] + np.sqrt(gap)
    lo, hi = 0.58 * rig.stand_root[1], 0.97 * rig.stand_root[1]
    return np.array([root_x, float(np.clip(root_z, lo, hi)), -lean])


def _grasp_points(box_pose: np.ndarray, half: float, grab_h: float):
    """Palm squeeze points on the two side faces, (..., 2, 2): [far, near]."""
    local = np.array([[half, grab_h], [-half, grab_h]])
    pts = _apply_rot(box_pose[..., None, 2], np.broadcast_to(
        local, box_pose.shape[:-1] + (2, 2)))
    return box_pose[..., None, :2] + pts


def _push_points(box_pose: np.ndarray, half: float):
    """Both palms on the near face at staggered heights, (..., 2, 2)."""
    local = np.array([[-half, 0.62 * half], [-half, 0.38 * half]])
    pts = _apply_rot(box_pose[..., None, 2], np.broadcast_to(
        local, box_pose.shape[:-1] + (2, 2)))
    return box_pose[..., None, :2] + pts


class _Plan:
    """Dense per-frame targets awaiting the IK solve."""

    def __init__(self, T: int, rig: _Rig):
        self.T = T
        self.root = np.tile(rig.stand_root, (T, 1))
        self.box = np.zeros((T, 3))
        self.palm_target = np.zeros((T, 2, 2))           # [far, near] world
        self.palm_active = np.zeros((T, 2), dtype=bool)  # IK vs default arms
        self.palm_lock = np.zeros((T, 2), dtype=bool)    # on-surface contact
        self.foot_x = np.full((T, 2), rig.stand_foot_x)
        self.foot_lift = np.zeros((T, 2))
        self.foot_contact = np.ones((T, 2), dtype=bool)


def _reach_in(plan: _Plan, rig: _Rig, i0: int, i1: int, goal: np.ndarray):
    """Take palms from their per-frame default pose onto goal targets over
    [i0, i1). The blend runs in shoulder-relative coordinates so that while
    the root moves, every intermediate target stays within the reach of the
    blend endpoints."""
    T = plan.T
    sh = rig.shoulder(plan.root)[:, None, :]
    base = rig.default_palm(plan.root[:, None, :]) - sh
    g = np.broadcast_to(goal, (T, 2, 2)) - sh
    w = np.zeros(T)
    w[i0:i1] = _smoothstep(np.arange(i1 - i0) / (i1 - i0))
    w[i1:] = 1.0
    sel = w > 0
    mix = base[sel] + w[sel, None, None] * (g[sel] - base[sel])
    plan.palm_target[sel] = sh[sel, 0][:, None, :] + mix
    plan.palm_active[sel] = True


def _blend_targets(plan: _Plan, rig: _Rig, i0: int, i1: int, goal: np.ndarray):
    """Move palm targets from where they were at i0-1 to goal over [i0, i1)
    and hold the goal afterwards; blends shoulder-relative."""
    sh = rig.shoulder(plan.root)[:, None, :]
    cur = plan.palm_target[i0 - 1] - sh[i0 - 1]
    g = np.broadcast_to(goal, (plan.T, 2, 2)) - sh
    w = _smoothstep(np.arange(i1 - i0) / (i1 - i0))
    plan.palm_target[i0:i1] = sh[i0:i1] + cur + w[:, None, None] * (g[i0:i1] - cur)
    plan.palm_target[i1:] = sh[i1:] + g[i1:]
    plan.palm_active[i0:] = True


def _retract_palms(plan: _Plan, rig: _Rig, i0: int):
    """Return palms to the default hanging pose over [i0, T), blending
    shoulder-relative. Call after the root track is final so the blend lands
    on the true resting pose."""
    T = plan.T
    sh = rig.shoulder(plan.root)[:, None, :]
    cur = plan.palm_target[i0 - 1] - sh[i0 - 1]
    base = rig.default_palm(plan.root[:, None, :]) - sh
    w = _smoothstep(np.arange(T - i0) / max(T - i0 - 1, 1))
    plan.palm_target[i0:] = sh[i0:] + cur + w[:, None, None] * (base[i0:] - cur)
    plan.palm_active[i0:] = True


def _step_foot(plan: _Plan, foot: int, i0: int, i1: int, x_to: float,
               lift_h: float):
    """Swing one foot to x_to over [i0, i1) with a smooth lift bump."""
    x_from = plan.foot_x[i0, foot]
    tau = np.arange(i1 - i0) / max(i1 - i0 - 1, 1)
    plan.foot_x[i0:i1, foot] = x_from + (x_to - x_from) * _smoothstep(tau)
    plan.foot_x[i1:, foot] = x_to
    plan.foot_lift[i0:i1, foot] = lift_h * _bump(tau)
    plan.foot_contact[i0:i1, foot] = False


def _schedule_steps(plan: _Plan, i0: int, i1: int, delta: float,
                    step_len: float, lift_h: float):
    """Alternate left/right steps inside [i0, i1) moving both feet by delta.
    Every stride covers delta/n so the stance split never exceeds one
    stride; a final catch-up step squares the trailing foot."""
    n = max(2, int(np.ceil(abs(delta) / step_len)))
    w = (i1 - i0) // (n + 1)
    if w < 8:
        raise ValueError("walk phase too short for the requested distance")
    base = plan.foot_x[i0].copy()
    for k in range(n + 1):
        foot = k % 2
        frac = min((k + 1) / n, 1.0)
        s0 = i0 + k * w
        s1 = s0 + max(int(w * 0.8), 4)
        _step_foot(plan, foot, s0, s1, base[foot] + delta * frac, lift_h)


def _follow_feet(plan: _Plan, i0: int, i1: int) -> None:
    """Slave the root x to the feet midpoint over [i0, i1), preserving the
    offset at i0; keeps leg splits small while walking."""
    mean = plan.foot_x[i0:i1].mean(axis=1)
    plan.root[i0:i1, 0] = mean - (plan.foot_x[i0].mean() - plan.root[i0, 0])


def _solve_plan(plan: _Plan, rig: _Rig) -> np.ndarray:
    """Joint angles (T, 10) realizing the plan; raises on unreachable targets."""
    T = plan.T
    m = rig.model
    joints = np.tile(rig.stand_joints, (T, 1))
    pitch = plan.root[:, 2]

    # legs: flat soles, ankle point above the mid-sole ground point
    ankle_t = np.stack([plan.foot_x - rig.sole_dx,
                        plan.foot_lift + rig.ankle_h], axis=-1)   # (T, 2, 2)
    hip = np.broadcast_to(plan.root[:, None, :2], (T, 2, 2))
    a_t, a_s, raw = _two_link_ik(hip, ankle_t, rig.l_thigh, rig.l_shin, -1.0)
    leg_max = (rig.l_thigh + rig.l_shin) * 0.9995
    over_leg = (raw > leg_max) & plan.foot_contact
    if over_leg.any():
        i = int(np.argmax(over_leg.any(axis=1)))
        raise ValueError(f"foot plant {raw.max() - leg_max:.3f} m outside "
                         f"the leg envelope at frame {i}")
    lo, hi = m.joint_limit_lo, m.joint_limit_hi
    for f, (jh, jk, ja) in enumerate([(HIP_L, KNEE_L, ANK_L),
                                      (HIP_R, KNEE_R, ANK_R)]):
        joints[:, jh] = a_t[:, f] - pitch
        joints[:, jk] = a_s[:, f] - a_t[:, f]
        # planted feet keep a level sole and exact placement; a swinging
        # foot's path is cosmetic, so its joints relax into the limit range
        # (the clamp is inactive at lift-off and landing, keeping the
        # trajectory continuous)
        flat = -a_s[:, f]
        joints[:, ja] = np.where(plan.foot_contact[:, f], flat,
                                 np.clip(flat, lo[ja] + 0.02, hi[ja] - 0.02))
        swing = ~plan.foot_contact[:, f]
        for j in (jh, jk):
            joints[swing, j] = np.clip(joints[swing, j],
                                       lo[j] + 0.005, hi[j] - 0.005)

    # arms: IK only where a reach target is active
    act = plan.palm_active
    if act.any():
        sh = rig.shoulder(plan.root)
        a_u, a_f, raw = _two_link_ik(
            np.broadcast_to(sh[:, None, :], (T, 2, 2)), plan.palm_target,
            rig.l_uarm, rig.l_farm, +1.0)
        over = np.where(act, raw - 0.9985 * rig.arm, -1.0)
        if (over > 0).any():
            i = int(np.argmax(over.max(axis=1) > 0))
            raise ValueError(f"palm target {over.max():.3f} m outside the "
                             f"arm envelope at frame {i}")
        for f, (js, je) in enumerate([(SH_L, EL_L), (SH_R, EL_R)]):
            on = act[:, f]
            joints[on, js] = (a_u[:, f] - pitch)[on]
            joints[on, je] = (a_f[:, f] - a_u[:, f])[on]

    if (joints < lo - 1e-6).any() or (joints > hi + 1e-6).any():
        worst = np.maximum(lo - joints, joints - hi).max()
        raise ValueError(f"task drives joints {worst:.3f} rad past their "
                         "limits; the request is infeasible")
    return np.clip(joints, lo, hi)


def _package(plan: _Plan, joints: np.ndarray, rig: _Rig, spec: TaskSpec,
             text: str) -> ReferenceTrajectory:
    model = rig.model
    T = plan.T
    origins, angles = fk(model, plan.root, joints)
    li, lx = site_table(model, TRACKED_BODIES)
    link_pos = points_world(origins, angles, li, lx)
    link_rot = angles[:, li]

    contact = np.zeros((T, len(TRACKED_BODIES)))
    contact[:, TRACKED_BODIES.index("l_palm")] = plan.palm_lock[:, 0]
    contact[:, TRACKED_BODIES.index("r_palm")] = plan.palm_lock[:, 1]
    contact[:, TRACKED_BODIES.index("l_foot")] = plan.foot_contact[:, 0]
    contact[:, TRACKED_BODIES.index("r_foot")] = plan.foot_contact[:, 1]

    fps = spec.fps
    ref = ReferenceTrajectory(
        fps=fps,
        anchors=list(TRACKED_BODIES),
        link_pos=link_pos,
        link_rot=link_rot,
        link_vel=central_difference(link_pos, fps),
        link_rot_vel=central_difference(link_rot, fps),
        contact=contact,
        obj_pose=plan.box.copy(),
        obj_vel=central_difference(plan.box, fps),
        root_pose=plan.root.copy(),
        root_vel=central_difference(plan.root, fps),
        joint_pos=joints,
        joint_vel=central_difference(joints, fps),
        box_size=spec.box_size,
        leg_length=model.leg_length,
        correspondence={a: a for a in TRACKED_BODIES},
        text_label=text,
        task_kind=spec.task_kind,
        embodiment="source",
    )
    ref.validate()
    _check_consistency(ref, plan)
    return ref


def _check_consistency(ref: ReferenceTrajectory, plan: _Plan) -> None:
    palms = [ref.anchor_index("l_palm"), ref.anchor_index("r_palm")]
    locked = plan.palm_lock
    err = np.linalg.norm(ref.link_pos[:, palms] - plan.palm_target, axis=-1)
    if locked.any() and err[locked].max() > 1e-6:
        raise ValueError("palm lock targets not attained; task is infeasible")
    feet = [ref.anchor_index("l_foot"), ref.anchor_index("r_foot")]
    sole_z = ref.link_pos[:, feet, 1]
    if np.abs(sole_z[plan.foot_contact]).max() > 1e-6:
        raise ValueError("planted feet left the ground in the solve")
    moving = np.abs(ref.obj_vel[:, :2]).max(axis=1) > 1e-9
    held = locked.any(axis=1)
    if (moving & ~held).any():
        raise ValueError("object moved without a palm contact label")


def _pre_offset(kind: str, u: float) -> np.ndarray:
    """Approach offsets from the face points: the near palm backs away from
    the box, but the far palm is already near full extension so it slides in
    along the face from above instead."""
    if kind == "push":
        return np.array([[-0.06 * u, 0.0], [-0.06 * u, 0.0]])
    return np.array([[0.0, 0.06 * u], [-0.06 * u, 0.0]])


def _phase(T: int, frac: float) -> int:
    return int(round(T * frac))


def generate_reference(spec: TaskSpec, rng: np.random.Generator
                       ) -> ReferenceTrajectory:
    """Script one task instance into a kinematic reference trajectory."""
    spec.validate()
    model = source_figure(spec.limb_ratio)
    rig = _Rig(model)
    T = max(int(round(spec.duration * spec.fps)), 8)
    half = spec.box_size / 2.0
    start = np.asarray(spec.start_pose, dtype=float)
    goal = np.asarray(spec.goal_pose, dtype=float)
    plan = _Plan(T, rig)
    plan.box[:] = start

    kind = spec.task_kind
    dx = goal[0] - start[0]
    text = str(rng.choice(_TEXT_TEMPLATES[kind])).format(dx=abs(dx), dz=goal[1])

    if kind == "stand":
        joints = _solve_plan(plan, rig)
        return _package(plan, joints, rig, spec, text)

    if T < int(4.0 * spec.fps):
        raise ValueError("interaction tasks need at least four seconds")
    if abs(start[1] - half) > 1e-6:
        raise ValueError("the box must start resting on the ground")

    u = spec.limb_ratio / 1.3       # size factor relative to the tuned rig
    stand_z = rig.stand_root[1]
    grab_h = (0.62 + rng.uniform(-0.06, 0.06)) * half

    if kind == "push":
        lean = 0.62 + rng.uniform(-0.03, 0.03)
        stance = 0.20 * u
        grasp_fn = lambda bp: _push_points(bp, half)
    else:
        lean = 0.72 + rng.uniform(-0.03, 0.03)
        stance = (0.10 if kind == "carry" else 0.12) * u
        grasp_fn = lambda bp: _grasp_points(bp, half, grab_h)
    faces0 = grasp_fn(start)

    if kind == "push":
        crouch = _reach_root(rig, faces0, lean, root_z=0.605 * stand_z)
    else:
        crouch = _reach_root(rig, faces0, lean)
    feet_x = crouch[0] + stance

    # prologue: step into stance while descending from a plain stand
    fstep = 0.12 * u
    stand0 = np.array([feet_x - rig.stand_foot_x - fstep, stand_z, 0.0])
    plan.root[:] = stand0
    plan.foot_x[:] = stand0[0] + rig.stand_foot_x
    fA, fB = _phase(T, 0.04), _phase(T, 0.24)
    fR, fC = _phase(T, 0.285), _phase(T, 0.32)
    wAB = fB - fA
    _step_foot(plan, 0, fA, fA + int(0.40 * wAB), feet_x, 0.05 * u)
    _step_foot(plan, 1, fA + int(0.48 * wAB), fA + int(0.88 * wAB),
               feet_x, 0.05 * u)

    root_keys = [(fA, stand0), (fB, crouch)]
    rise0 = rel0 = None

    if kind == "lift":
        if abs(dx) > 0.08 * u or goal[1] <= start[1] + 0.05:
            raise ValueError("lift must raise the box roughly in place")
        fT0, fT1 = _phase(T, 0.38), _phase(T, 0.80)
        hold = _reach_root(rig, grasp_fn(goal), lean=0.35)
        root_keys += [(fT0, crouch), (fT1, hold)]
        plan.box[fT0:] = _track(T, [(fT0, start), (fT1, goal)])[fT0:]
        # feet shuffle along under the root as it strides toward the hold;
        # short alternating strides keep the stance margin through the hoist
        s_off = hold[0] - crouch[0]
        if abs(s_off) > 0.02:
            wT = fT1 - fT0
            _schedule_steps(plan, fT0 + int(0.10 * wT), fT0 + int(0.95 * wT),
                            s_off, step_len=0.08, lift_h=0.04 * u)

    elif kind == "push":
        if abs(goal[1] - start[1]) > 1e-6 or abs(goal[2] - start[2]) > 1e-6:
            raise ValueError("push can only slide the box along the ground")
        if dx <= 0:
            raise ValueError("push only moves the box away from the figure")
        if spec.box_size < 0.42 * u:
            raise ValueError("box too low to push inside the reach envelope")
        fD, fE = _phase(T, 0.36), _phase(T, 0.90)
        n_cyc = max(1, int(np.ceil(dx / (0.12 * u))))
        L = (fE - fD) // n_cyc
        if L < 20:
            raise ValueError("push distance exceeds what the duration allows")
        delta = dx / n_cyc
        for c in range(n_cyc):
            b = fD + c * L
            p0 = fC if c == 0 else b
            p1 = b + int(0.40 * L)
            tau = np.arange(p1 - p0) / (p1 - p0 - 1)
            plan.box[p0:p1, 0] = start[0] + c * delta + delta * _smoothstep(tau)
            plan.box[p1:, 0] = start[0] + (c + 1) * delta
            plan.palm_lock[p0:p1] = True
            sL = b + int(0.54 * L)
            sR = b + int(0.72 * L)
            _step_foot(plan, 0, sL, b + int(0.70 * L),
                       plan.foot_x[sL, 0] + delta, 0.035 * u)
            _step_foot(plan, 1, sR, b + int(0.88 * L),
                       plan.foot_x[sR, 1] + delta, 0.035 * u)
        rise0 = rel0 = fD + n_cyc * L

    elif kind == "reposition":
        if abs(dx) > 0.10 * u:
            raise ValueError("reposition window exceeded; use a carry task")
        if abs(goal[1] - start[1]) > 1e-6:
            raise ValueError("reposition keeps the box on the ground")
        fU0, fU1 = _phase(T, 0.38), _phase(T, 0.50)
        fX0, fX1 = _phase(T, 0.54), _phase(T, 0.66)
        fD0, fD1 = _phase(T, 0.70), _phase(T, 0.80)
        z_up = (0.77 * stand_z + np.cos(0.50) * rig.l_torso
                - 0.80 * rig.arm - grab_h)
        if z_up < half + 0.03 or z_up < start[1] + 0.05:
            raise ValueError("box too large to lift clear of the ground")
        up = np.array([start[0], z_up, start[2]])
        over = np.array([goal[0], z_up, goal[2]])
        lifted = _reach_root(rig, grasp_fn(up), lean=0.50,
                             root_z=0.77 * stand_z)
        plan.box[fU0:] = _track(T, [(fU0, start), (fU1, up), (fX0, up),
                                    (fX1, over), (fD0, over),
                                    (fD1, goal)])[fU0:]
        # the root strides forward as the shoulder rises; the feet follow
        # during the hoist, then shuffle sideways with the shifting root so
        # every holding pose keeps the stance margin it started with
        s_off = lifted[0] - crouch[0]
        if abs(s_off) > 0.02:
            wU = fU1 - fU0
            _step_foot(plan, 0, fU0, fU0 + int(0.45 * wU),
                       feet_x + s_off, 0.04 * u)
            _step_foot(plan, 1, fU0 + int(0.50 * wU), fU0 + int(0.95 * wU),
                       feet_x + s_off, 0.04 * u)
        wX = fX1 - fX0
        _step_foot(plan, 0, fX0, fX0 + int(0.45 * wX),
                   feet_x + s_off + dx, 0.04 * u)
        _step_foot(plan, 1, fX0 + int(0.50 * wX), fX0 + int(0.95 * wX),
                   feet_x + s_off + dx, 0.04 * u)
        # set the box down from a taller pose solved above the stepped feet
        # rather than striding all the way back to the approach crouch
        ground2 = _ground_pose(rig, grasp_fn(goal - [dx, 0.0, 0.0]),
                               lifted[0])
        root_keys += [(fU0, crouch), (fU1, lifted), (fD0, lifted),
                      (fD1, ground2)]
        rise0, rel0 = _phase(T, 0.90), _phase(T, 0.82)

    elif kind == "carry":
        if dx <= 0.2 * u:
            raise ValueError("carry needs a forward walk; use reposition")
        if abs(goal[1] - start[1]) > 1e-6:
            raise ValueError("carry keeps the box at ground level")
        fU0, fU1 = _phase(T, 0.38), _phase(T, 0.46)
        fW0, fW1 = _phase(T, 0.48), _phase(T, 0.78)
        fD0, fD1 = _phase(T, 0.80), _phase(T, 0.86)
        z_c = (0.825 * stand_z + np.cos(0.50) * rig.l_torso
               - 0.78 * rig.arm - grab_h)
        if z_c < half + 0.03:
            raise ValueError("box too large to carry clear of the ground")
        up = np.array([start[0], z_c, start[2]])
        hold = _reach_root(rig, grasp_fn(up), lean=0.50,
                           root_z=0.825 * stand_z)
        plan.box[fU0:] = _track(T, [(fU0, start), (fU1, up), (fW0, up),
                                    (fW1, up + [dx, 0, 0]),
                                    (fD0, up + [dx, 0, 0]),
                                    (fD1, goal)])[fU0:]
        # feet follow the root's stride into the hold, then walk
        s_off = hold[0] - crouch[0]
        if abs(s_off) > 0.02:
            wU = fU1 - fU0
            _step_foot(plan, 0, fU0, fU0 + int(0.45 * wU),
                       feet_x + s_off, 0.04 * u)
            _step_foot(plan, 1, fU0 + int(0.50 * wU), fU0 + int(0.95 * wU),
                       feet_x + s_off, 0.04 * u)
        _schedule_steps(plan, fW0, fW1, dx, step_len=0.234 * u,
                        lift_h=0.06 * u)
        ground2 = _ground_pose(rig, grasp_fn(goal), hold[0] + dx)
        root_keys += [(fU0, crouch), (fU1, hold), (fW0, hold),
                      (fW1, hold + [dx, 0, 0]), (fD0, hold + [dx, 0, 0]),
                      (fD1, ground2)]
        rise0, rel0 = _phase(T, 0.93), _phase(T, 0.87)

    else:
        raise ValueError(f"unknown task kind {kind!r}")

    # root track, then walking overrides that slave root/box to the feet
    plan.root[:] = _track(T, root_keys)
    if kind == "push":
        plan.root[fC:, 0] = crouch[0] + (plan.box[fC:, 0] - start[0])
    elif kind == "carry":
        _follow_feet(plan, fW0, fW1)
        plan.box[fW0:fW1, 0] = start[0] + (plan.root[fW0:fW1, 0] - hold[0])
    elif kind == "reposition":
        plan.root[fU0:, 0] += plan.box[fU0:, 0] - start[0]

    if rise0 is not None:
        end_x = plan.foot_x[T - 1].mean() - rig.stand_foot_x
        end_stand = np.array([end_x, stand_z, 0.0])
        plan.root[rise0:] = _track(T, [(rise0, plan.root[rise0].copy()),
                                       (T - 1, end_stand)])[rise0:]

    # palms: reach in once the crouch has settled (static shoulder keeps
    # every blended target within the reach of its endpoints), ride the
    # faces, then release and retract
    _reach_in(plan, rig, fB, fR,
              faces0 + _apply_rot(start[2], _pre_offset(kind, u)))
    _blend_targets(plan, rig, fR, fC, np.broadcast_to(faces0, (T, 2, 2)))
    if kind == "push":
        # on the face during each push stroke, hovering just off it between
        faces = grasp_fn(plan.box)
        hover = faces + np.array([[-0.05 * u, 0.0], [-0.05 * u, 0.0]])
        lock = plan.palm_lock[:, 0].copy()
        plan.palm_target[fC:] = np.where(lock[fC:, None, None],
                                         faces[fC:], hover[fC:])
        edges = np.flatnonzero(np.diff(lock[fC:].astype(int))) + fC + 1
        for e in edges:
            # the approach/retreat blend lives entirely in the unlocked gap,
            # so every locked frame sits exactly on the face
            if lock[e]:
                lo, hi, a, bnd = max(e - 7, fC), e, hover, faces
            else:
                lo, hi, a, bnd = e, min(e + 7, T), faces, hover
            n = hi - lo
            if n < 2:
                continue
            ww = _smoothstep(np.arange(n) / (n - 1))[:, None, None]
            plan.palm_target[lo:hi] = a[lo:hi] * (1 - ww) + bnd[lo:hi] * ww
        plan.palm_active[fC:] = True
    else:
        f_off = T if kind == "lift" else rel0
        plan.palm_target[fC:f_off] = grasp_fn(plan.box[fC:f_off])
        plan.palm_lock[fC:f_off] = True
        if kind != "lift":
            rel1 = min(rel0 + max(_phase(T, 0.05), 3), T - 2)
            release = grasp_fn(plan.box) + _apply_rot(goal[2], np.array(
                [[0.0, 0.05 * u], [-0.06 * u, 0.02]]))
            _blend_targets(plan, rig, rel0, rel1, release)
    if rise0 is not None:
        _retract_palms(plan, rig, max(rise0, rel0 + 2))

    joints = _solve_plan(plan, rig)
    return _package(plan, joints, rig, spec, text)
