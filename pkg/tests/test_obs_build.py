"""Observation vector builders, masking, history, and noise injection.

Block-content oracles are rebuilt here entry by entry from the raw state
arrays; the builders under test must reproduce them exactly.
"""
import numpy as np
import pytest

from locobox.obs import (AvailabilityMask, GoalPacket, ProprioHistory,
                         StudentSensors, apply_obs_noise, build_student_obs,
                         build_teacher_obs, paper_teacher_layout, preset_mask,
                         proprio_frame, sample_availability_mask,
                         student_layout, teacher_layout)
from locobox.rewards import RefFrame, sim_view
from locobox.sim.engine import get_engine
from locobox.sim.figure import default_figure, stand_pose
from locobox.sim.state import SimConfig


@pytest.fixture(scope="module")
def rig():
    model = default_figure()
    cfg = SimConfig(box_size=0.30)
    eng = get_engine(model, cfg)
    return model, cfg, eng


def _standing(eng, model, n=1):
    st = eng.make_state(n)
    root, joints = stand_pose(model)
    eng.reset_pose(st, np.tile(root, (n, 1)), np.tile(joints, (n, 1)),
                   box_pose=np.tile([0.45, 0.15, 0.0], (n, 1)))
    return st


def _ref_of(state, eng, box_size):
    view = sim_view(state, eng)
    return RefFrame(
        link_pos=view.tracked_pos.copy(), link_rot=view.tracked_ang.copy(),
        link_vel=view.tracked_vel.copy(),
        link_rot_vel=view.tracked_angvel.copy(),
        contact=view.contact_flags.copy(), obj_pose=state.box_pose.copy(),
        obj_vel=state.box_vel.copy(), joint_pos=state.joint_pos.copy(),
        joint_vel=state.joint_vel.copy(), root_pose=state.root_pose.copy(),
        root_vel=state.root_vel.copy(), box_size=box_size,
    )


# ---------------------------------------------------------------- teacher


def test_teacher_shape_and_zero_residuals(rig):
    model, cfg, eng = rig
    state = _standing(eng, model)
    ref = _ref_of(state, eng, cfg.box_size)
    lay = teacher_layout()
    vec = build_teacher_obs(state, (ref, ref), lay, eng)
    assert vec.shape == (1, lay.total_dim)
    for k in (0, 1):
        assert np.abs(vec[0, lay.row_slice(f"delta_body_{k}")]).max() < 1e-12
        assert np.abs(vec[0, lay.row_slice(f"delta_object_{k}")]).max() < 1e-12
        ig = vec[0, lay.row_slice(f"ig_{k}")]
        assert np.abs(ig[21:]).max() < 1e-12      # residual half
        assert vec[0, lay.row_slice(f"sim_root_h_{k}")][0] == \
            pytest.approx(state.root_pose[0, 1], abs=1e-12)
        view = sim_view(state, eng)
        assert np.array_equal(vec[0, lay.row_slice(f"sim_contact_{k}")],
                              view.contact_flags[0])


def test_teacher_joint_state_block(rig):
    model, cfg, eng = rig
    state = _standing(eng, model)
    rng = np.random.default_rng(0)
    state.joint_vel = rng.normal(0, 1.0, state.joint_vel.shape)
    state.prev_joint_pos = rng.normal(0, 0.3, state.joint_pos.shape)
    state.last_action = rng.normal(0, 0.5, state.last_action.shape)
    state.applied_torques = rng.normal(0, 10.0, state.applied_torques.shape)
    ref = _ref_of(state, eng, cfg.box_size)
    lay = teacher_layout()
    vec = build_teacher_obs(state, (ref, ref), lay, eng)
    lim = model.torque_limit * eng.cfg.torque_limit_scale
    expected = np.concatenate([
        state.joint_pos[0], 0.05 * state.joint_vel[0],
        state.prev_joint_pos[0], state.last_action[0],
        state.applied_torques[0] / lim,
    ])
    got = vec[0, lay.row_slice("sim_joint_state_0")]
    assert np.allclose(got, expected, atol=1e-12)
    assert np.array_equal(got, vec[0, lay.row_slice("sim_joint_state_1")])


def test_teacher_two_reference_horizons(rig):
    model, cfg, eng = rig
    state = _standing(eng, model)
    ref1 = _ref_of(state, eng, cfg.box_size)
    ref16 = _ref_of(state, eng, cfg.box_size)
    ref16.link_pos = ref16.link_pos + np.array([0.1, 0.0])
    lay = teacher_layout()
    vec = build_teacher_obs(state, (ref1, ref16), lay, eng)
    d0 = vec[0, lay.row_slice("delta_body_0")]
    d1 = vec[0, lay.row_slice("delta_body_1")]
    assert np.abs(d0).max() < 1e-12
    # first 14 entries are the aligned position residuals (sim - ref), so a
    # +0.1 x-shift of the reference shows up as -0.1 on every x entry
    pos_res = d1[:14].reshape(7, 2)
    assert np.allclose(pos_res[:, 0], -0.1, atol=1e-9)
    assert np.allclose(pos_res[:, 1], 0.0, atol=1e-12)


def _box_closest_oracle(p, center, half):
    """Closest surface point + signed distance, axis-aligned box."""
    local = p - center
    if np.all(np.abs(local) <= half):
        gap = half - np.abs(local)
        axis = int(np.argmin(gap))
        closest = local.copy()
        closest[axis] = np.sign(local[axis]) * half if local[axis] != 0 \
            else half
        return center + closest, -float(gap[axis])
    clamped = np.clip(local, -half, half)
    closest = center + clamped
    return closest, float(np.linalg.norm(p - closest))


def test_teacher_interaction_features_match_sdf_oracle(rig):
    model, cfg, eng = rig
    state = _standing(eng, model)
    ref = _ref_of(state, eng, cfg.box_size)
    lay = teacher_layout()
    vec = build_teacher_obs(state, (ref, ref), lay, eng)
    view = sim_view(state, eng)
    ig = vec[0, lay.row_slice("ig_0")][:21].reshape(7, 3)
    center = state.box_pose[0, :2]
    half = 0.5 * cfg.box_size
    for b in range(7):
        p = view.tracked_pos[0, b]
        closest, sd = _box_closest_oracle(p, center, half)
        off = closest - p
        assert ig[b, 0] == pytest.approx(off[0] * view.facing[0], abs=1e-9)
        assert ig[b, 1] == pytest.approx(off[1], abs=1e-9)
        assert ig[b, 2] == pytest.approx(sd, abs=1e-9)


def test_teacher_rejects_wrong_layout(rig):
    model, cfg, eng = rig
    state = _standing(eng, model)
    ref = _ref_of(state, eng, cfg.box_size)
    with pytest.raises(ValueError):
        build_teacher_obs(state, (ref, ref), paper_teacher_layout(), eng)
    with pytest.raises(ValueError):
        build_teacher_obs(state, (ref, ref), teacher_layout(joints=8), eng)
    with pytest.raises(ValueError):
        build_teacher_obs(state, (ref,), teacher_layout(), eng)


# ---------------------------------------------------------------- student


def _sensors(state, rng=None):
    rng = rng or np.random.default_rng(7)
    return StudentSensors(
        obj_pose=state.box_pose.copy(),
        points=rng.normal(0.4, 0.2, (state.n, 16, 2)),
        points_valid=np.ones(state.n),
    )


def _goals_matching(state, sensors):
    n = state.n
    return GoalPacket(
        root_pose=state.root_pose.copy(),
        cmd=np.zeros((n, 4)),
        local_pitch=state.root_pose[:, 2].copy(),
        local_joint=state.joint_pos.copy(),
        obj_xy=sensors.obj_pose[:, :2].copy(),
        obj_theta=sensors.obj_pose[:, 2].copy(),
    )


def test_student_shape_proprio_and_zero_residuals(rig):
    model, cfg, eng = rig
    state = _standing(eng, model)
    rng = np.random.default_rng(1)
    state.root_vel = np.array([[0.1, 0.2, 0.3]])
    state.joint_vel = rng.normal(0, 1.0, state.joint_vel.shape)
    state.last_action = rng.normal(0, 0.5, state.last_action.shape)
    sensors = _sensors(state)
    goals = _goals_matching(state, sensors)
    lay = student_layout()
    hist = ProprioHistory(1, 10, lay.length("proprio"))
    mask = AvailabilityMask.all_visible(1)
    vec = build_student_obs(state, goals, sensors, mask, hist, lay, eng)
    assert vec.shape == (1, lay.total_dim)

    expected_proprio = np.concatenate([
        [state.root_vel[0, 2]], [state.root_pose[0, 2]], state.joint_pos[0],
        0.05 * state.joint_vel[0], state.last_action[0]])
    assert np.allclose(vec[0, lay.slice("proprio")], expected_proprio,
                       atol=1e-12)
    assert np.array_equal(proprio_frame(state)[0], expected_proprio)

    assert np.abs(vec[0, lay.slice("global")]).max() < 1e-12
    assert np.abs(vec[0, lay.slice("local")]).max() < 1e-12
    assert np.abs(vec[0, lay.row_slice("task_obj_trans")]).max() < 1e-12
    assert np.abs(vec[0, lay.row_slice("task_obj_rot")]).max() < 1e-12
    assert np.abs(vec[0, lay.slice("history")]).max() == 0.0
    assert np.all(vec[0, lay.slice("mask")] == 1.0)

    view = sim_view(state, eng)
    f = view.facing[0]
    rx = state.root_pose[0, 0]
    obj = vec[0, lay.row_slice("task_obj_pos")]
    assert obj[0] == pytest.approx((state.box_pose[0, 0] - rx) * f, abs=1e-12)
    assert obj[1] == pytest.approx(state.box_pose[0, 1], abs=1e-12)
    pcd = vec[0, lay.row_slice("task_pcd")].reshape(16, 2)
    expect = sensors.points[0].copy()
    expect[:, 0] = (expect[:, 0] - rx) * f
    assert np.allclose(pcd, expect, atol=1e-12)


def test_student_residual_values(rig):
    model, cfg, eng = rig
    state = _standing(eng, model)
    sensors = _sensors(state)
    goals = _goals_matching(state, sensors)
    goals.root_pose = goals.root_pose + np.array([0.3, 0.1, 0.2])
    goals.local_pitch = goals.local_pitch + 0.05
    goals.local_joint = goals.local_joint + 0.1
    goals.obj_xy = goals.obj_xy + np.array([0.5, 0.0])
    goals.obj_theta = goals.obj_theta + 0.3
    goals.cmd = np.array([[0.1, 0.2, 0.3, 0.4]])
    lay = student_layout()
    hist = ProprioHistory(1, 10, lay.length("proprio"))
    vec = build_student_obs(state, goals, sensors,
                            AvailabilityMask.all_visible(1), hist, lay, eng)
    assert np.allclose(vec[0, lay.slice("global")], [0.3, 0.1, 0.2],
                       atol=1e-9)
    assert np.allclose(vec[0, lay.slice("cmd")], [0.1, 0.2, 0.3, 0.4])
    local = vec[0, lay.slice("local")]
    assert local[0] == pytest.approx(0.05, abs=1e-9)
    assert np.allclose(local[1:], 0.1, atol=1e-9)
    assert np.allclose(vec[0, lay.row_slice("task_obj_trans")], [0.5, 0.0],
                       atol=1e-9)
    rot = vec[0, lay.row_slice("task_obj_rot")]
    assert rot[0] == pytest.approx(np.sin(0.3), abs=1e-9)
    assert rot[1] == pytest.approx(1.0 - np.cos(0.3), abs=1e-9)


def test_student_masking_zeroes_and_is_input_independent(rig):
    model, cfg, eng = rig
    state = _standing(eng, model)
    sensors = _sensors(state)
    goals = _goals_matching(state, sensors)
    lay = student_layout()
    hist = ProprioHistory(1, 10, lay.length("proprio"))
    mask = AvailabilityMask.all_visible(1)
    mask.object_pcd[:] = 0.0
    mask.global_goal[:] = 0.0
    a = build_student_obs(state, goals, sensors, mask, hist, lay, eng)

    sensors2 = StudentSensors(obj_pose=sensors.obj_pose.copy(),
                              points=sensors.points + 123.0,
                              points_valid=sensors.points_valid.copy())
    goals2 = _goals_matching(state, sensors2)
    goals2.root_pose = goals2.root_pose + 55.0
    b = build_student_obs(state, goals2, sensors2, mask, hist, lay, eng)
    assert np.array_equal(a, b)
    assert np.abs(a[0, lay.row_slice("task_pcd")]).max() == 0.0
    assert np.abs(a[0, lay.slice("global")]).max() == 0.0

    flags = a[0, lay.slice("mask")]
    names = {g: i for i, (g, _) in enumerate(lay.mask_groups)}
    starts = np.cumsum([0] + [idx.size for _, idx in lay.mask_groups])
    assert np.all(flags[starts[names["global_goal"]]:
                        starts[names["global_goal"] + 1]] == 0.0)
    assert np.all(flags[starts[names["object_pcd"]]:
                        starts[names["object_pcd"] + 1]] == 0.0)
    assert np.all(flags[starts[names["goal_cmd"]]:
                        starts[names["goal_cmd"] + 1]] == 1.0)


def test_student_pcd_sentinel_forces_mask(rig):
    model, cfg, eng = rig
    state = _standing(eng, model)
    sensors = _sensors(state)
    sensors.points_valid = np.zeros(state.n)
    goals = _goals_matching(state, sensors)
    lay = student_layout()
    hist = ProprioHistory(1, 10, lay.length("proprio"))
    vec = build_student_obs(state, goals, sensors,
                            AvailabilityMask.all_visible(1), hist, lay, eng)
    assert np.abs(vec[0, lay.row_slice("task_pcd")]).max() == 0.0
    names = {g: i for i, (g, _) in enumerate(lay.mask_groups)}
    starts = np.cumsum([0] + [idx.size for _, idx in lay.mask_groups])
    flags = vec[0, lay.slice("mask")]
    assert np.all(flags[starts[names["object_pcd"]]:
                        starts[names["object_pcd"] + 1]] == 0.0)
    assert np.all(flags[starts[names["object_pos"]]:
                        starts[names["object_pos"] + 1]] == 1.0)


def test_student_absent_goals_zero_blocks_and_flags(rig):
    model, cfg, eng = rig
    state = _standing(eng, model)
    sensors = _sensors(state)
    lay = student_layout()
    hist = ProprioHistory(1, 10, lay.length("proprio"))
    vec = build_student_obs(state, GoalPacket(), sensors,
                            AvailabilityMask.all_visible(1), hist, lay, eng)
    assert np.abs(vec[0, lay.slice("global")]).max() == 0.0
    assert np.abs(vec[0, lay.slice("cmd")]).max() == 0.0
    assert np.abs(vec[0, lay.slice("local")]).max() == 0.0
    assert np.abs(vec[0, lay.row_slice("task_obj_trans")]).max() == 0.0
    names = {g: i for i, (g, _) in enumerate(lay.mask_groups)}
    starts = np.cumsum([0] + [idx.size for _, idx in lay.mask_groups])
    flags = vec[0, lay.slice("mask")]
    for g in ("global_goal", "goal_cmd", "local_goal", "object_trans",
              "object_rot"):
        assert np.all(flags[starts[names[g]]:starts[names[g] + 1]] == 0.0), g
    for g in ("object_pos", "object_pcd"):
        assert np.all(flags[starts[names[g]]:starts[names[g] + 1]] == 1.0), g


def test_history_buffer_order_and_obs_block(rig):
    model, cfg, eng = rig
    buf = ProprioHistory(1, 3, 2)
    assert np.all(buf.flat() == 0.0)
    for k, frame in enumerate(([1.0, 2.0], [3.0, 4.0], [5.0, 6.0],
                               [7.0, 8.0])):
        buf.push(np.array([frame]))
    assert np.array_equal(buf.flat()[0], [3, 4, 5, 6, 7, 8])
    buf.reset(np.array([True]))
    assert np.all(buf.flat() == 0.0)

    state = _standing(eng, model)
    sensors = _sensors(state)
    goals = _goals_matching(state, sensors)
    lay = student_layout()
    hist = ProprioHistory(1, 10, lay.length("proprio"))
    for _ in range(4):
        hist.push(proprio_frame(state))
    vec = build_student_obs(state, goals, sensors,
                            AvailabilityMask.all_visible(1), hist, lay, eng)
    assert np.array_equal(vec[0, lay.slice("history")], hist.flat()[0])

    bad = ProprioHistory(1, 4, lay.length("proprio"))
    with pytest.raises(ValueError):
        build_student_obs(state, goals, sensors,
                          AvailabilityMask.all_visible(1), bad, lay, eng)


# ------------------------------------------------------------ mask + noise


def test_mask_sampling_rates_and_presets():
    rng = np.random.default_rng(0)
    n = 10_000
    m = sample_availability_mask(rng, 0.3, n)
    for g in ("global_goal", "goal_cmd", "local_goal", "object_trans",
              "object_rot", "object_pos", "object_pcd"):
        rate = 1.0 - getattr(m, g).mean()
        assert 0.28 <= rate <= 0.32, g

    m0 = sample_availability_mask(rng, 0.0, 8)
    assert all(np.all(getattr(m0, g) == 1.0) for g in
               ("global_goal", "goal_cmd", "local_goal", "object_trans",
                "object_rot", "object_pos", "object_pcd"))

    m1 = sample_availability_mask(rng, {"object": 1.0}, 8)
    for g in ("object_trans", "object_rot", "object_pos", "object_pcd"):
        assert np.all(getattr(m1, g) == 0.0), g
    assert np.all(m1.global_goal == 1.0)

    with pytest.raises(ValueError):
        sample_availability_mask(rng, 1.5, 4)
    with pytest.raises(ValueError):
        sample_availability_mask(rng, {"nonsense": 0.5}, 4)

    t = preset_mask("tracking", 3)
    assert np.all(t.local_goal == 1.0) and np.all(t.object_pcd == 1.0)
    s = preset_mask("sparse_goal", 3)
    assert np.all(s.local_goal == 0.0) and np.all(s.global_goal == 1.0)
    v = preset_mask("vision", 3)
    assert np.all(v.object_trans == 0.0) and np.all(v.object_rot == 0.0)
    assert np.all(v.object_pos == 0.0) and np.all(v.object_pcd == 1.0)
    with pytest.raises(ValueError):
        preset_mask("nope", 3)


def test_apply_obs_noise_scales_and_exclusions():
    lay = student_layout()
    rng = np.random.default_rng(5)
    n = 10_000
    vec = np.zeros((n, lay.total_dim))
    out = apply_obs_noise(vec, lay, rng)
    assert out.shape == vec.shape

    jp = out[:, lay.row_slice("proprio_joint_pos")].ravel()
    assert 0.0095 <= jp.std() <= 0.0105
    av = out[:, lay.row_slice("proprio_angvel")].ravel()
    assert 0.0475 <= av.std() <= 0.0525
    jv = out[:, lay.row_slice("proprio_joint_vel")].ravel()
    assert 0.00475 <= jv.std() <= 0.00525

    for name in ("mask", "history", "cmd"):
        assert np.abs(out[:, lay.slice(name)]).max() == 0.0, name
    for row in ("task_pcd", "proprio_prev_action", "task_obj_rot"):
        assert np.abs(out[:, lay.row_slice(row)]).max() == 0.0, row

    tl = teacher_layout()
    tv = np.zeros((4, tl.total_dim))
    same = apply_obs_noise(tv, tl, rng)
    assert np.array_equal(same, tv)
