"""Observation layout calculators: block tables, sums, serialization.

Expected totals are recomputed here by explicit addition of the block
lengths (independent oracle), never read back from the code under test.
"""
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locobox.obs import (ObservationLayout, paper_student_layout,
                         paper_teacher_layout, student_layout, teacher_layout)


def _assert_contiguous(layout):
    running = 0
    for blk in layout.blocks:
        assert blk.offset == running, blk.name
        assert blk.length > 0, blk.name
        running += blk.length
    assert layout.total_dim == running


def test_desk_student_layout_blocks():
    lay = student_layout()
    got = {b.name: b.length for b in lay.blocks}
    # desk figure: 10 joints, pitch-only IMU, 16 sensed points, 10-step history
    proprio = 1 + 1 + 10 + 10 + 10            # angvel, imu, q, qdot, prev act
    task = 2 + 2 + 2 + 16 * 2                 # trans res, rot res, pos, points
    maskable = 3 + 4 + (1 + 10) + task
    expected = {
        "global": 3,
        "cmd": 4,
        "local": 1 + 10,
        "proprio": proprio,
        "history": 10 * proprio,
        "task": task,
        "mask": maskable,
    }
    assert got == expected
    assert lay.total_dim == sum(expected.values()) == 464
    _assert_contiguous(lay)


def test_desk_teacher_layout_blocks():
    lay = teacher_layout()
    got = {b.name: b.length for b in lay.blocks}
    o_sim = 1 + 6 * 2 + 7 * 2 + 7 * 2 + 7 + 7 + 10 * 5
    o_ref = 7 * (2 + 2) + 7
    o_delta = 7 * (2 + 2 + 2 + 1) + 7
    o_ig = 7 * 3 * 2
    assert o_sim == 105 and o_ref == 35 and o_delta == 56 and o_ig == 42
    expected = {}
    for k in (0, 1):
        expected[f"o_sim_{k}"] = o_sim
        expected[f"o_ref_{k}"] = o_ref
        expected[f"o_delta_{k}"] = o_delta
        expected[f"o_ig_{k}"] = o_ig
    assert got == expected
    assert lay.total_dim == 2 * (o_sim + o_ref + o_delta + o_ig) == 476
    _assert_contiguous(lay)
    # dense short-horizon imitation runs without observation noise
    assert np.all(lay.noise_std == 0.0)


def test_paper_student_layout_dims():
    lay = paper_student_layout()
    got = {b.name: b.length for b in lay.blocks}
    assert got == {
        "global": 3,
        "cmd": 4,
        "local": 2 + 29,
        "proprio": 3 + 2 + 29 + 29 + 29,
        "history": 10 * 92,
        "task": 3 + 6 + 3 + 64 * 3,
        "mask": 3 + 4 + 31 + 204,
    }
    assert got["local"] == 31 and got["proprio"] == 92
    assert got["task"] == 204 and got["mask"] == 242
    assert lay.total_dim == 3 + 4 + 31 + 92 + 920 + 204 + 242 == 1496
    _assert_contiguous(lay)


def test_paper_teacher_layout_dims():
    lay = paper_teacher_layout()
    rows = lay.meta["rows"]
    assert rows["contact"] == 39
    assert rows["ref_object"] == 13
    assert rows["root_height"] == 1
    assert rows["body_pos"] == 38 * 3
    assert rows["body_rot"] == 39 * 6
    assert rows["body_lin_vel"] == 39 * 3
    assert rows["body_ang_vel"] == 39 * 3
    assert rows["joint_state"] == 29 * 5
    assert rows["ref_body"] == 39 * 9
    assert rows["delta_body"] == 39 * 15
    assert rows["delta_object"] == 21
    assert rows["interaction"] == 234
    per_frame = sum(rows.values())
    assert per_frame == 1971
    assert lay.total_dim == 2 * per_frame == 3942
    # the published grand total disagrees with its own component rows; the
    # layout reports both numbers instead of fudging either
    assert lay.meta["printed_total"] == 4052
    assert lay.meta["printed_total"] - lay.total_dim == 110
    _assert_contiguous(lay)


def test_mask_entries_match_mask_block():
    lay = student_layout()
    n_flags = sum(idx.size for _, idx in lay.mask_groups)
    assert n_flags == lay.length("mask")
    names = [g for g, _ in lay.mask_groups]
    assert names == ["global_goal", "goal_cmd", "local_goal", "object_trans",
                     "object_rot", "object_pos", "object_pcd"]
    # masked entries never point into proprio, history, or the mask block
    protected = set(range(*lay.slice("proprio").indices(lay.total_dim)))
    protected |= set(range(*lay.slice("history").indices(lay.total_dim)))
    protected |= set(range(*lay.slice("mask").indices(lay.total_dim)))
    for _, idx in lay.mask_groups:
        assert not (set(idx.tolist()) & protected)


def test_noise_std_rows():
    lay = student_layout()
    std = lay.noise_std
    assert std[lay.slice("mask")].max() == 0.0
    assert std[lay.slice("history")].max() == 0.0
    assert std[lay.slice("cmd")].max() == 0.0
    # joint-position entries carry 0.01 rad; scaled joint velocity 0.005
    jp = lay.row_slice("proprio_joint_pos")
    jv = lay.row_slice("proprio_joint_vel")
    assert np.allclose(std[jp], 0.01)
    assert np.allclose(std[jv], 0.005)
    assert np.allclose(std[lay.row_slice("proprio_angvel")], 0.05)
    assert np.allclose(std[lay.row_slice("proprio_imu")], 0.05)
    assert np.allclose(std[lay.row_slice("global_goal_pos")], 0.05)
    assert np.allclose(std[lay.row_slice("task_pcd")], 0.0)
    assert np.allclose(std[lay.row_slice("proprio_prev_action")], 0.0)


def test_layout_serialization_roundtrip():
    for lay in (student_layout(), teacher_layout(), paper_student_layout(),
                paper_teacher_layout()):
        blob = json.dumps(lay.to_json())
        back = ObservationLayout.from_json(json.loads(blob))
        assert back.name == lay.name
        assert [(b.name, b.offset, b.length) for b in back.blocks] == \
            [(b.name, b.offset, b.length) for b in lay.blocks]
        assert np.array_equal(back.noise_std, lay.noise_std)
        assert len(back.mask_groups) == len(lay.mask_groups)
        for (ga, ia), (gb, ib) in zip(lay.mask_groups, back.mask_groups):
            assert ga == gb and np.array_equal(ia, ib)
        assert back.meta == lay.meta
        assert back.total_dim == lay.total_dim


@settings(deadline=None, max_examples=30)
@given(joints=st.integers(4, 40), points=st.integers(1, 128),
       history=st.integers(1, 20))
def test_layout_sum_property(joints, points, history):
    lay = student_layout(joints=joints, points=points, history=history)
    _assert_contiguous(lay)
    assert lay.total_dim == sum(b.length for b in lay.blocks)
    n_flags = sum(idx.size for _, idx in lay.mask_groups)
    assert n_flags == lay.length("mask")

    tl = teacher_layout(joints=joints)
    _assert_contiguous(tl)
