"""Physics engine behavior: contacts, energy, determinism, limits."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locobox.sim import (SimConfig, default_figure, get_engine, stand_pose,
                         nominal_params)
from locobox.sim.figure import site_table, points_world, fk


@pytest.fixture(scope="module")
def rig():
    model = default_figure()
    cfg = SimConfig()
    eng = get_engine(model, cfg)
    return model, cfg, eng


def standing_state(eng, model, cfg, n=1, box_x=0.45):
    st_ = eng.make_state(n)
    root, jp = stand_pose(model)
    eng.reset_pose(st_, np.tile(root, (n, 1)), np.tile(jp, (n, 1)),
                   box_pose=np.tile([box_x, cfg.box_size / 2, 0.0], (n, 1)))
    return st_, np.tile(jp, (n, 1))


def box_corner_heights(state, cfg):
    th = state.box_pose[:, 2]
    c, s = np.cos(th), np.sin(th)
    half = cfg.box_size / 2
    signs = np.array([(1, 1), (1, -1), (-1, -1), (-1, 1)]) * half
    return state.box_pose[:, 1, None] + s[:, None] * signs[:, 0] + c[:, None] * signs[:, 1]


def sole_heights(model, state):
    origins, angles = fk(model, state.root_pose, state.joint_pos)
    li, lx = site_table(model, ["l_heel", "l_toe", "r_heel", "r_toe"])
    return points_world(origins, angles, li, lx)[..., 1]


def test_resting_penetration_bounded(rig):
    model, cfg, eng = rig
    state, jp = standing_state(eng, model, cfg)
    params = nominal_params(1)
    for _ in range(30):  # settle
        eng.step(state, jp, params)
    worst_box = 0.0
    worst_sole = 0.0
    for _ in range(300):  # 10 s
        eng.step(state, jp, params)
        worst_box = max(worst_box, -box_corner_heights(state, cfg).min())
        worst_sole = max(worst_sole, -sole_heights(model, state).min())
    assert worst_box <= cfg.contact_offset
    assert worst_sole <= cfg.contact_offset
    assert not state.unhealthy.any()


def test_box_drop_touchdown_time(rig):
    model, cfg, eng = rig
    state, jp = standing_state(eng, model, cfg, box_x=3.0)
    h = 0.5
    state.box_pose[0] = [3.0, cfg.box_size / 2 + h, 0.0]
    state.box_vel[0] = 0.0
    params = nominal_params(1)
    expected = np.sqrt(2 * h / cfg.gravity)
    touchdown = None
    for k in range(40):
        eng.step(state, jp, params)
        pairs = np.array([p == ("box", "ground") for p in state.contact_pairs])
        if state.contact_active[0][pairs].any():
            touchdown = (k + 1) * cfg.dt_control
            break
    assert touchdown is not None
    assert abs(touchdown - expected) <= 2 * cfg.dt_control


def _energy_trace(eng, state, jp, params, steps):
    worst = -np.inf
    e = eng.mechanical_energy(state, params)[0]
    for _ in range(steps):
        eng.step(state, jp, params)
        e2 = eng.mechanical_energy(state, params)[0]
        worst = max(worst, (e2 - e) / max(abs(e), 1e-9))
        e = e2
    return worst


def test_energy_monotone_zero_actuation_collapse(rig):
    model, cfg, eng = rig
    state, jp = standing_state(eng, model, cfg)
    params = nominal_params(1)
    params.motor_strength = np.zeros(1)
    assert _energy_trace(eng, state, jp, params, 240) <= 1e-6


def test_energy_monotone_box_drop(rig):
    model, cfg, eng = rig
    state, jp = standing_state(eng, model, cfg, box_x=3.0)
    params = nominal_params(1)
    params.motor_strength = np.zeros(1)
    for _ in range(150):  # figure finishes collapsing first
        eng.step(state, jp, params)
    state.box_pose[0] = [0.0, 0.6, 0.3]
    state.box_vel[0] = 0.0
    assert _energy_trace(eng, state, jp, params, 240) <= 1e-6


def test_free_fall_com_velocity_exact(rig):
    model, cfg, eng = rig
    state, jp = standing_state(eng, model, cfg)
    eng.reset_pose(state, np.array([[0.0, 8.0, 0.0]]), jp,
                   box_pose=np.array([[5.0, 6.0, 0.0]]))
    params = nominal_params(1)
    params.motor_strength = np.zeros(1)
    for _ in range(15):
        eng.step(state, jp, params)
    t = state.step_count[0] * cfg.dt_sim
    # CoM velocity read back through the same point Jacobians the solver uses
    pts, Jac, _, _ = eng._kin(state, params)
    u = np.concatenate([state.root_vel, state.joint_vel], axis=1)
    vcom = np.einsum("nlxd,nd->nlx", Jac[:, eng.i_com], u)
    vz = (vcom[0, :, 1] * model.mass).sum() / model.mass.sum()
    assert vz == pytest.approx(-cfg.gravity * t, abs=1e-9)
    assert state.box_vel[0, 1] == pytest.approx(-cfg.gravity * t, abs=1e-9)


def test_stand_ten_seconds_healthy(rig):
    model, cfg, eng = rig
    state, jp = standing_state(eng, model, cfg, box_x=2.0)
    params = nominal_params(1)
    root0 = state.root_pose[0].copy()
    for _ in range(300):
        eng.step(state, jp, params)
    assert not state.unhealthy[0]
    assert abs(state.root_pose[0, 1] - root0[1]) < 0.05
    assert abs(state.root_pose[0, 2]) < 0.25
    assert np.abs(state.joint_pos[0] - jp[0]).max() < 0.2


def test_determinism_bit_identical(rig):
    model, cfg, eng = rig
    params = nominal_params(2)

    def run():
        state, jp = standing_state(eng, model, cfg, n=2)
        rng = np.random.default_rng(7)
        for _ in range(90):
            targets = jp + rng.normal(scale=0.2, size=jp.shape)
            eng.step(state, targets, params)
        return state

    a, b = run(), run()
    assert a.root_pose.tobytes() == b.root_pose.tobytes()
    assert a.joint_pos.tobytes() == b.joint_pos.tobytes()
    assert a.box_pose.tobytes() == b.box_pose.tobytes()
    assert a.joint_vel.tobytes() == b.joint_vel.tobytes()


def test_batched_step_matches_solo(rig):
    # no cross-env reductions: env k of a batch reproduces a solo run bitwise
    model, cfg, eng = rig
    rng = np.random.default_rng(3)
    root, jp = stand_pose(model)
    roots = np.tile(root, (3, 1)) + np.array([[0.0, 0, 0], [0.3, 0.2, 0.1], [-0.2, 0, -0.2]])
    targets = jp[None] + rng.normal(scale=0.3, size=(40, 3, 10))

    batch = eng.make_state(3)
    eng.reset_pose(batch, roots, np.tile(jp, (3, 1)),
                   box_pose=np.tile([0.45, cfg.box_size / 2, 0.0], (3, 1)))
    pb = nominal_params(3)
    for k in range(40):
        eng.step(batch, targets[k], pb)

    solo = eng.make_state(1)
    eng.reset_pose(solo, roots[1][None], jp[None],
                   box_pose=np.array([[0.45, cfg.box_size / 2, 0.0]]))
    ps = nominal_params(1)
    for k in range(40):
        eng.step(solo, targets[k, 1][None], ps)

    assert np.array_equal(batch.root_pose[1], solo.root_pose[0])
    assert np.array_equal(batch.joint_pos[1], solo.joint_pos[0])
    assert np.array_equal(batch.joint_vel[1], solo.joint_vel[0])
    assert np.array_equal(batch.box_pose[1], solo.box_pose[0])


def test_action_delay_shifts_effective_targets(rig):
    model, cfg, eng = rig
    root, jp = stand_pose(model)
    shifted = jp + 0.1

    def run(delay, switch_at):
        state = eng.make_state(1)
        eng.reset_pose(state, root[None], jp[None],
                       box_pose=np.array([[2.0, cfg.box_size / 2, 0.0]]))
        params = nominal_params(1)
        params.action_delay_steps = np.array([delay])
        for k in range(20):
            tgt = shifted if k >= switch_at else jp
            eng.step(state, tgt[None], params)
        return state

    delayed = run(2, 5)
    plain = run(0, 7)
    assert np.array_equal(delayed.joint_pos, plain.joint_pos)
    assert np.array_equal(delayed.root_pose, plain.root_pose)


def test_applied_torques_respect_limits(rig):
    model, cfg, eng = rig
    state, jp = standing_state(eng, model, cfg)
    params = nominal_params(1)
    lim = model.torque_limit * cfg.torque_limit_scale
    for k in range(20):
        eng.step(state, jp + ((-1) ** k) * 2.0, params)
        assert (np.abs(state.applied_torques) <= lim + 1e-12).all()


def test_health_caps_set_unhealthy_flag(rig):
    model, cfg, eng = rig
    state, jp = standing_state(eng, model, cfg)
    state.joint_vel[0, 0] = 500.0
    params = nominal_params(1)
    eng.step(state, jp, params)
    assert state.unhealthy[0]
    assert np.abs(state.joint_vel).max() <= 100.0


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_joint_positions_stay_within_limits(seed: int):
    model = default_figure()
    cfg = SimConfig()
    eng = get_engine(model, cfg)
    state, jp = standing_state(eng, model, cfg)
    rng = np.random.default_rng(seed)
    state.root_vel[0] = rng.uniform(-1, 1, 3)
    params = nominal_params(1)
    for _ in range(30):
        targets = rng.uniform(-4.0, 4.0, size=(1, 10))
        eng.step(state, targets, params)
        assert (state.joint_pos >= model.joint_limit_lo - 1e-9).all()
        assert (state.joint_pos <= model.joint_limit_hi + 1e-9).all()
