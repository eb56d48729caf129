"""Multiplicative tracking-reward factors.

Oracle values are frozen closed-form evaluations of the factor formulas
(exp(-k * error) with the published temperatures), computed independently
of the kernel under test.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locobox.rewards import (RefFrame, SimView, TrackingCoeffs,
                             box_surface_points, sim_view, tracking_factors,
                             tracking_reward)
from locobox.sim.domain_rand import nominal_params
from locobox.sim.engine import get_engine
from locobox.sim.figure import default_figure, stand_pose
from locobox.sim.state import SimConfig


@pytest.fixture(scope="module")
def rig():
    model = default_figure()
    cfg = SimConfig(box_size=0.30)
    eng = get_engine(model, cfg)
    return model, cfg, eng


def _standing_state(eng, model, n=1, box_x=0.45):
    st_ = eng.make_state(n)
    root, joints = stand_pose(model)
    eng.reset_pose(st_, np.tile(root, (n, 1)), np.tile(joints, (n, 1)),
                   box_pose=np.tile([box_x, 0.15, 0.0], (n, 1)))
    return st_


def _matching_ref(state, eng, box_size):
    """Reference frame equal to the simulated state (zero tracking error)."""
    view = sim_view(state, eng)
    n = state.n
    return RefFrame(
        link_pos=view.tracked_pos.copy(),
        link_rot=view.tracked_ang.copy(),
        link_vel=view.tracked_vel.copy(),
        link_rot_vel=view.tracked_angvel.copy(),
        contact=view.contact_flags.copy(),
        obj_pose=state.box_pose.copy(),
        obj_vel=state.box_vel.copy(),
        joint_pos=state.joint_pos.copy(),
        joint_vel=state.joint_vel.copy(),
        root_pose=state.root_pose.copy(),
        root_vel=state.root_vel.copy(),
        box_size=box_size,
    )


@pytest.fixture()
def scene(rig):
    model, cfg, eng = rig
    state = _standing_state(eng, model)
    ref = _matching_ref(state, eng, cfg.box_size)
    return eng, state, ref


def test_zero_error_gives_unit_factors(scene):
    eng, state, ref = scene
    out = tracking_reward(state, ref, TrackingCoeffs(), eng)
    for name in ("r_p", "r_r", "r_pv", "r_rv", "r_op", "r_or", "r_opv",
                 "r_int", "r_ct"):
        assert getattr(out, name)[0] == pytest.approx(1.0, abs=1e-12), name
    assert out.r_track[0] == pytest.approx(1.0, abs=1e-12)


def test_facing_follows_feet_not_velocity(rig):
    """A figure stepping backward still faces forward.

    The facing sign that aligns the reference must come from the foot
    geometry (toe ahead of heel), exactly as the simulator computes it for
    the live state; a negative root velocity alone must not flip it.  With
    the link data identical on both sides, every factor stays at 1 even
    when the reference reports backward root motion.
    """
    model, cfg, eng = rig
    state = _standing_state(eng, model, n=3)
    ref = _matching_ref(state, eng, cfg.box_size)
    ref.root_vel = ref.root_vel + np.array([[-0.2, 0.0, 0.0],
                                            [0.0, 0.0, 0.0],
                                            [0.3, 0.0, 0.0]])
    for mode in ("teacher", "retarget"):
        out = tracking_reward(state, ref, TrackingCoeffs(mode=mode), eng)
        assert np.allclose(out.r_p, 1.0, atol=1e-12), mode
        assert np.allclose(out.r_r, 1.0, atol=1e-12), mode


def test_position_factor_matches_table_value(scene):
    eng, state, ref = scene
    # uniform per-body offset d gives mean squared error d^2 = 0.1
    ref.link_pos = ref.link_pos + np.array([math.sqrt(0.1), 0.0])
    out = tracking_reward(state, ref, TrackingCoeffs(), eng)
    assert out.r_p[0] == pytest.approx(0.367879, abs=1e-6)
    assert out.r_p[0] == pytest.approx(math.exp(-10.0 * 0.1), abs=1e-12)


def test_contact_factor_matches_table_value(scene):
    eng, state, ref = scene
    # palms mismatch, feet agree: mean |c - c_hat| over 4 labelled links = 0.5
    ref.contact = ref.contact.copy()
    ref.contact[:, 5] = 1.0
    ref.contact[:, 6] = 1.0
    out = tracking_reward(state, ref, TrackingCoeffs(), eng)
    assert out.r_ct[0] == pytest.approx(0.082085, abs=1e-6)
    assert out.r_ct[0] == pytest.approx(math.exp(-5.0 * 0.5), abs=1e-12)


def test_object_factors(scene):
    eng, state, ref = scene
    ref.obj_pose = ref.obj_pose + np.array([0.3, 0.4, 0.0])
    out = tracking_reward(state, ref, TrackingCoeffs(), eng)
    assert out.r_op[0] == pytest.approx(math.exp(-5.0 * 0.25), abs=1e-9)

    ref2 = _matching_ref(state, eng, ref.box_size)
    ref2.obj_pose = ref2.obj_pose + np.array([0.0, 0.0, 0.1])
    out2 = tracking_reward(state, ref2, TrackingCoeffs(), eng)
    # quadratic branch of the Huber loss: 0.5 * 0.1^2 / nothing... delta=0.25
    assert out2.r_or[0] == pytest.approx(math.exp(-0.5 * 0.5 * 0.1 ** 2),
                                         abs=1e-9)

    ref3 = _matching_ref(state, eng, ref.box_size)
    ref3.obj_pose = ref3.obj_pose + np.array([0.0, 0.0, 1.0])
    out3 = tracking_reward(state, ref3, TrackingCoeffs(), eng)
    # linear branch: delta * (|a| - delta/2) = 0.25 * (1 - 0.125)
    assert out3.r_or[0] == pytest.approx(
        math.exp(-0.5 * 0.25 * (1.0 - 0.125)), abs=1e-9)

    ref4 = _matching_ref(state, eng, ref.box_size)
    ref4.obj_vel = ref4.obj_vel + np.array([0.6, 0.8, 0.0])
    out4 = tracking_reward(state, ref4, TrackingCoeffs(), eng)
    assert out4.r_opv[0] == pytest.approx(math.exp(-0.1 * 1.0), abs=1e-9)


def test_velocity_and_joint_factors(scene):
    eng, state, ref = scene
    ref.link_vel = ref.link_vel + np.array([0.0, 1.0])
    out = tracking_reward(state, ref, TrackingCoeffs(), eng)
    assert out.r_pv[0] == pytest.approx(math.exp(-0.1 * 1.0), abs=1e-9)

    ref2 = _matching_ref(state, eng, ref.box_size)
    ref2.joint_vel = ref2.joint_vel + 2.0
    out2 = tracking_reward(state, ref2, TrackingCoeffs(), eng)
    assert out2.r_rv[0] == pytest.approx(math.exp(-0.001 * 4.0), abs=1e-9)

    ref3 = _matching_ref(state, eng, ref.box_size)
    ref3.joint_pos = ref3.joint_pos + 0.2
    out3 = tracking_reward(state, ref3, TrackingCoeffs(), eng)
    # rotation error uses the chord norm 2 - 2 cos(dq) per joint
    err = 2.0 - 2.0 * math.cos(0.2)
    assert out3.r_r[0] == pytest.approx(math.exp(-5.0 * err), abs=1e-9)


def test_track_is_product_of_factors(scene):
    eng, state, ref = scene
    rng = np.random.default_rng(0)
    ref.link_pos = ref.link_pos + rng.normal(0, 0.05, ref.link_pos.shape)
    ref.joint_pos = ref.joint_pos + rng.normal(0, 0.2, ref.joint_pos.shape)
    ref.obj_pose = ref.obj_pose + np.array([0.1, 0.0, 0.3])
    ref.contact = (rng.uniform(size=ref.contact.shape) < 0.5).astype(float)
    out = tracking_reward(state, ref, TrackingCoeffs(), eng)
    prod = (out.r_p * out.r_r * out.r_pv * out.r_rv * out.r_op * out.r_or
            * out.r_opv * out.r_int * out.r_ct)
    assert abs(out.r_track[0] - prod[0]) < 1e-12
    for name in ("r_p", "r_r", "r_pv", "r_rv", "r_op", "r_or", "r_opv",
                 "r_int", "r_ct"):
        v = getattr(out, name)[0]
        assert 0.0 < v <= 1.0, name


def test_factors_monotone_in_error(scene):
    eng, state, ref = scene
    vals = []
    for d in (0.0, 0.05, 0.1, 0.2, 0.4):
        r = _matching_ref(state, eng, ref.box_size)
        r.link_pos = r.link_pos + np.array([d, 0.0])
        vals.append(tracking_reward(state, r, TrackingCoeffs(), eng).r_p[0])
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_retarget_mode_uses_end_effectors_only(scene):
    eng, state, ref = scene
    coeffs = TrackingCoeffs(mode="retarget")
    out = tracking_reward(state, ref, coeffs, eng)
    assert out.r_p[0] == pytest.approx(1.0, abs=1e-12)
    assert out.r_r[0] == pytest.approx(1.0, abs=1e-9)
    assert out.r_rv[0] == pytest.approx(1.0)

    # perturbing knees changes nothing in retarget position tracking
    ref.link_pos = ref.link_pos.copy()
    ref.link_pos[:, 1] += np.array([0.3, 0.0])
    ref.link_pos[:, 2] += np.array([0.3, 0.0])
    out2 = tracking_reward(state, ref, coeffs, eng)
    assert out2.r_p[0] == pytest.approx(1.0, abs=1e-12)
    # but it does rotate the root->knee edge directions
    assert out2.r_r[0] < 1.0

    # joint-space data is ignored entirely in retarget mode
    ref2 = _matching_ref(state, eng, ref.box_size)
    ref2.joint_pos = None
    ref2.joint_vel = None
    out3 = tracking_reward(state, ref2, coeffs, eng)
    assert out3.r_rv[0] == pytest.approx(1.0)
    assert out3.r_r[0] == pytest.approx(1.0, abs=1e-9)

    # feet/palm offsets do register
    ref3 = _matching_ref(state, eng, ref.box_size)
    ref3.link_pos = ref3.link_pos.copy()
    ref3.link_pos[:, 3:] += np.array([math.sqrt(0.1), 0.0])
    out4 = tracking_reward(state, ref3, coeffs, eng)
    assert out4.r_p[0] == pytest.approx(math.exp(-10.0 * 0.1), abs=1e-9)


def test_heading_reflection_invariance(scene):
    eng, state, ref = scene
    rng = np.random.default_rng(3)
    view = sim_view(state, eng)
    view.tracked_pos = view.tracked_pos + rng.normal(0, 0.1, view.tracked_pos.shape)
    view.tracked_vel = rng.normal(0, 1.0, view.tracked_vel.shape)
    view.tracked_ang = rng.normal(0, 0.5, view.tracked_ang.shape)
    view.tracked_angvel = rng.normal(0, 1.0, view.tracked_angvel.shape)
    view.joint_pos = rng.normal(0, 0.5, view.joint_pos.shape)
    view.joint_vel = rng.normal(0, 1.0, view.joint_vel.shape)
    view.box_pose = view.box_pose + np.array([0.1, 0.0, 0.4])
    view.box_vel = rng.normal(0, 1.0, view.box_vel.shape)
    ref.link_pos = ref.link_pos + rng.normal(0, 0.1, ref.link_pos.shape)
    ref.obj_pose = ref.obj_pose + np.array([0.05, 0.02, -0.2])

    def mirror_view(v):
        out = SimView(
            tracked_pos=v.tracked_pos * np.array([-1.0, 1.0]),
            tracked_ang=-v.tracked_ang,
            tracked_vel=v.tracked_vel * np.array([-1.0, 1.0]),
            tracked_angvel=-v.tracked_angvel,
            facing=-v.facing,
            contact_flags=v.contact_flags,
            root_xy=v.root_xy * np.array([-1.0, 1.0]),
            box_pose=v.box_pose * np.array([-1.0, 1.0, -1.0]),
            box_vel=v.box_vel * np.array([-1.0, 1.0, -1.0]),
            joint_pos=-v.joint_pos,
            joint_vel=-v.joint_vel,
        )
        return out

    def mirror_ref(r):
        # a link orientation is measured by a body-frame +x vector (the
        # toe-minus-heel offset), and reflecting the world across x maps the
        # angle of such a vector to pi - angle
        out = RefFrame(
            link_pos=r.link_pos * np.array([-1.0, 1.0]),
            link_rot=np.pi - r.link_rot,
            link_vel=r.link_vel * np.array([-1.0, 1.0]),
            link_rot_vel=-r.link_rot_vel,
            contact=r.contact,
            obj_pose=r.obj_pose * np.array([-1.0, 1.0, -1.0]),
            obj_vel=r.obj_vel * np.array([-1.0, 1.0, -1.0]),
            joint_pos=None if r.joint_pos is None else -r.joint_pos,
            joint_vel=None if r.joint_vel is None else -r.joint_vel,
            root_pose=r.root_pose * np.array([-1.0, 1.0, -1.0]),
            root_vel=r.root_vel * np.array([-1.0, 1.0, -1.0]),
            box_size=r.box_size,
        )
        return out

    for mode in ("teacher", "retarget"):
        coeffs = TrackingCoeffs(mode=mode)
        a = tracking_factors(view, ref, coeffs, ref.box_size)
        b = tracking_factors(mirror_view(view), mirror_ref(ref), coeffs,
                             ref.box_size)
        assert abs(a.r_track[0] - b.r_track[0]) < 1e-9, mode


def test_dimension_mismatch_rejected(scene):
    eng, state, ref = scene
    bad = _matching_ref(state, eng, ref.box_size)
    bad.link_pos = bad.link_pos[:, :5]
    with pytest.raises(ValueError):
        tracking_reward(state, bad, TrackingCoeffs(), eng)

    bad2 = _matching_ref(state, eng, ref.box_size)
    bad2.box_size = ref.box_size * 2.0
    with pytest.raises(ValueError):
        tracking_reward(state, bad2, TrackingCoeffs(), eng)

    bad3 = _matching_ref(state, eng, ref.box_size)
    bad3.joint_pos = None
    with pytest.raises(ValueError):
        tracking_reward(state, bad3, TrackingCoeffs(), eng)


def test_coefficient_scaling_ramps_toward_one(scene):
    eng, state, ref = scene
    ref.link_pos = ref.link_pos + np.array([0.2, 0.0])
    ref.obj_pose = ref.obj_pose + np.array([0.2, 0.0, 0.0])
    full = tracking_reward(state, ref, TrackingCoeffs(), eng)
    half = tracking_reward(state, ref, TrackingCoeffs().scaled(0.5), eng)
    zero = tracking_reward(state, ref, TrackingCoeffs().scaled(0.0), eng)
    assert zero.r_track[0] == pytest.approx(1.0, abs=1e-12)
    assert full.r_track[0] < half.r_track[0] < 1.0


def test_surface_points_lie_on_box():
    pose = np.array([[0.4, 0.3, 0.7]])
    pts = box_surface_points(pose, 0.3)
    assert pts.shape == (1, 32, 2)
    c, s = math.cos(-0.7), math.sin(-0.7)
    rel = pts[0] - pose[0, :2]
    local = np.stack([c * rel[:, 0] - s * rel[:, 1],
                      s * rel[:, 0] + c * rel[:, 1]], axis=1)
    assert np.abs(np.abs(local).max(axis=1) - 0.15).max() < 1e-12


@settings(deadline=None, max_examples=30)
@given(dx=st.floats(-0.3, 0.3), dth=st.floats(-1.0, 1.0),
       dv=st.floats(-1.0, 1.0))
def test_factor_bounds_property(dx, dth, dv):
    model = default_figure()
    cfg = SimConfig(box_size=0.30)
    eng = get_engine(model, cfg)
    state = _standing_state(eng, model)
    ref = _matching_ref(state, eng, cfg.box_size)
    ref.link_pos = ref.link_pos + np.array([dx, 0.0])
    ref.obj_pose = ref.obj_pose + np.array([dx, 0.0, dth])
    ref.link_vel = ref.link_vel + np.array([dv, 0.0])
    ref.joint_pos = ref.joint_pos + dth
    out = tracking_reward(state, ref, TrackingCoeffs(), eng)
    for name in ("r_p", "r_r", "r_pv", "r_rv", "r_op", "r_or", "r_opv",
                 "r_int", "r_ct"):
        v = getattr(out, name)[0]
        assert 0.0 < v <= 1.0 + 1e-15
    prod = (out.r_p * out.r_r * out.r_pv * out.r_rv * out.r_op * out.r_or
            * out.r_opv * out.r_int * out.r_ct)
    assert abs(out.r_track[0] - prod[0]) < 1e-12
