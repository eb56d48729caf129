"""Policy-network contracts.

Oracles: the fixed exploration scale is checked against its closed-form
value by Monte Carlo; gating/identity properties are asserted bitwise, since
the implementation guarantees them by construction (null-token substitution,
zero-initialized modulation heads, max pooling).
"""
import math

import numpy as np
import pytest
import torch

from locobox.nets import (ActorCritic, CHECKPOINT_VERSION, FIXED_LOG_STD,
                          PointSetEncoder, StudentArchConfig, StudentPolicy,
                          load_checkpoint, require_layout_match,
                          save_checkpoint)
from locobox.obs import (GROUPS, paper_student_layout, preset_mask,
                         student_layout, teacher_layout)

J = 10


@pytest.fixture(scope="module")
def layouts():
    return student_layout(), teacher_layout()


@pytest.fixture(scope="module")
def student(layouts):
    sl, tl = layouts
    torch.manual_seed(0)
    return StudentPolicy(sl, teacher_dim=tl.total_dim, action_dim=J)


def _obs(sl, n, seed=0):
    rng = np.random.default_rng(seed)
    return torch.as_tensor(rng.normal(0, 1, (n, sl.total_dim)),
                           dtype=torch.float32)


# --------------------------------------------------------------- actor-critic
def test_actor_zero_weights_give_zero_outputs():
    ac = ActorCritic(20, J)
    with torch.no_grad():
        for p in ac.parameters():
            p.zero_()
    mean, value = ac(torch.randn(5, 20))
    assert torch.all(mean == 0.0) and torch.all(value == 0.0)


def test_actor_sampled_std_matches_fixed_scale():
    ac = ActorCritic(8, J)
    torch.manual_seed(1)
    dist = ac.action_dist(torch.zeros(100_000, J))
    draws = dist.sample()
    target = math.exp(FIXED_LOG_STD)
    assert abs(float(draws.std()) - target) < 0.02 * target


def test_actor_mean_deterministic():
    ac = ActorCritic(12, J)
    obs = torch.randn(4, 12)
    m1, v1 = ac(obs)
    m2, v2 = ac(obs)
    assert torch.equal(m1, m2) and torch.equal(v1, v2)


def test_actor_rejects_nonfinite_obs():
    ac = ActorCritic(6, J)
    bad = torch.zeros(2, 6)
    bad[1, 3] = float("nan")
    with pytest.raises(ValueError):
        ac(bad)
    with pytest.raises(ValueError):
        ac(torch.zeros(2, 7))


def test_exploration_scale_not_trainable():
    ac = ActorCritic(6, J)
    names = [n for n, _ in ac.named_parameters()]
    assert "log_std" not in names
    before = ac.log_std.clone()
    opt = torch.optim.Adam(ac.parameters(), lr=1e-2)
    for _ in range(3):
        mean, value = ac(torch.randn(8, 6))
        dist = ac.action_dist(mean)
        loss = -dist.log_prob(torch.randn(8, J)).mean() + value.pow(2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert torch.equal(ac.log_std, before)
    assert float(before[0]) == pytest.approx(-2.9)


# ----------------------------------------------------------------- point set
def test_point_encoder_permutation_invariant_exactly():
    torch.manual_seed(2)
    enc = PointSetEncoder(2, 16)
    pts = torch.randn(5, 12, 2)
    perm = torch.randperm(12)
    out1 = enc(pts)
    out2 = enc(pts[:, perm, :])
    assert torch.equal(out1, out2)


def test_point_encoder_sensitive_to_point_values():
    torch.manual_seed(2)
    enc = PointSetEncoder(2, 16)
    pts = torch.randn(1, 12, 2)
    moved = pts.clone()
    moved[0, 3] += 1.0
    assert not torch.equal(enc(pts), enc(moved))


# ------------------------------------------------------------------- student
def test_masking_invariance_of_prior_only_mean(student, layouts):
    sl, _ = layouts
    rng = np.random.default_rng(5)
    groups_idx = {g: student._group_slices[g] for g in GROUPS}
    for trial in range(50):
        mask = preset_mask("tracking", 2)
        masked = rng.choice(len(GROUPS), size=3, replace=False)
        for gi in masked:
            getattr(mask, GROUPS[gi])[:] = 0.0
        base = _obs(sl, 2, seed=100 + trial)
        bumped = base.clone()
        for gi in masked:
            s = groups_idx[GROUPS[gi]]
            bumped[:, s] += torch.as_tensor(
                rng.normal(0, 5, (2, s.stop - s.start)), dtype=torch.float32)
        m1, l1, _ = student(base, mask)
        m2, l2, _ = student(bumped, mask)
        assert torch.equal(m1, m2), f"trial {trial}"
        assert torch.equal(l1.prior_mean, l2.prior_mean)


def test_unmasked_groups_do_influence_the_mean(layouts):
    sl, tl = layouts
    torch.manual_seed(8)
    net = StudentPolicy(sl, teacher_dim=tl.total_dim, action_dim=J)
    mask = preset_mask("tracking", 1)
    base = _obs(sl, 1, seed=7)

    # the local goal reaches the decoder through the shortcut immediately
    bumped = base.clone()
    bumped[:, net._group_slices["local_goal"]] += 1.0
    m1, _, _ = net(base, mask)
    m2, _, _ = net(bumped, mask)
    assert not torch.equal(m1, m2)

    # other goals act only through z: inert while the modulation heads are
    # zero-initialized, active once they carry weight
    bumped_g = base.clone()
    bumped_g[:, net._group_slices["global_goal"]] += 1.0
    m3, _, _ = net(bumped_g, mask)
    assert torch.equal(m1, m3)
    with torch.no_grad():
        for head in (*net.film_gamma, *net.film_beta):
            head.weight.normal_(0, 0.5)
    m4, _, _ = net(base, mask)
    m5, _, _ = net(bumped_g, mask)
    assert not torch.equal(m4, m5)


def test_attention_weights_exactly_zero_on_masked_slots(student, layouts):
    sl, _ = layouts
    mask = preset_mask("vision", 2)  # object trans/rot/pos masked
    obs = _obs(sl, 2, seed=9)
    _, _, _, maps = student(obs, mask, return_attention=True)
    masked_slots = [2 + GROUPS.index(g)
                    for g in ("object_trans", "object_rot", "object_pos")]
    open_slots = [i for i in range(2 + len(GROUPS)) if i not in masked_slots]
    assert len(maps) == student.arch.fusion_layers
    for w in maps:  # (n, heads, query, key)
        assert torch.all(w[..., masked_slots] == 0.0)
        assert torch.all(w[..., open_slots] > 0.0)
        sums = w.sum(dim=-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)


def test_film_heads_start_as_identity(student):
    torch.manual_seed(3)
    feats = torch.randn(4, student.arch.token_dim)
    shortcut = torch.randn(4, student.layout.length("local"))
    z_rand = torch.randn(4, student.arch.latent_dim)
    z_zero = torch.zeros(4, student.arch.latent_dim)
    assert torch.equal(student._decode(feats, shortcut, z_rand),
                       student._decode(feats, shortcut, z_zero))


def test_posterior_mode_requires_privileged(student, layouts):
    sl, _ = layouts
    with pytest.raises(ValueError):
        student(_obs(sl, 1), preset_mask("tracking", 1), mode="posterior")
    with pytest.raises(ValueError):
        student(_obs(sl, 1), preset_mask("tracking", 1), mode="bogus")


def test_posterior_forced_to_prior_equals_prior_only(layouts):
    sl, tl = layouts
    torch.manual_seed(4)
    net = StudentPolicy(sl, teacher_dim=tl.total_dim, action_dim=J)
    with torch.no_grad():
        last = [m for m in net.post_mean_head if isinstance(m, torch.nn.Linear)][-1]
        last.weight.zero_()
        last.bias.zero_()
    obs = _obs(sl, 3, seed=11)
    priv = torch.as_tensor(
        np.random.default_rng(12).normal(0, 1, (3, tl.total_dim)),
        dtype=torch.float32)
    mask = preset_mask("sparse_goal", 3)
    m_post, l_post, _ = net(obs, mask, privileged_obs=priv, mode="posterior")
    m_prior, l_prior, _ = net(obs, mask, mode="prior_only")
    assert torch.all(l_post.z_res == 0.0)
    assert torch.equal(m_post, m_prior)
    assert torch.equal(l_post.z, l_prior.z)


def test_latent_bookkeeping(student, layouts):
    sl, tl = layouts
    obs = _obs(sl, 4, seed=13)
    priv = torch.as_tensor(
        np.random.default_rng(14).normal(0, 1, (4, tl.total_dim)),
        dtype=torch.float32)
    mask = preset_mask("tracking", 4)
    _, lat, _ = student(obs, mask, privileged_obs=priv, mode="posterior")
    assert torch.all(lat.prior_std > 0.0) and torch.all(lat.post_std > 0.0)
    assert torch.equal(lat.z, lat.prior_mean + lat.z_res)
    assert torch.equal(lat.post_mean, lat.prior_mean + lat.z_res)
    _, lat_p, _ = student(obs, mask)
    assert torch.all(lat_p.z_res == 0.0)
    assert lat_p.post_mean is None and lat_p.post_std is None
    assert torch.equal(lat_p.z, lat_p.prior_mean)


def test_sampling_reproducible_with_generator(student, layouts):
    sl, _ = layouts
    obs = _obs(sl, 2, seed=15)
    mask = preset_mask("tracking", 2)
    g1 = torch.Generator().manual_seed(42)
    g2 = torch.Generator().manual_seed(42)
    m1, l1, _ = student(obs, mask, sample=True, generator=g1)
    m2, l2, _ = student(obs, mask, sample=True, generator=g2)
    assert torch.equal(m1, m2) and torch.equal(l1.z, l2.z)
    m3, l3, _ = student(obs, mask)
    assert not torch.equal(l1.z, l3.z)


def test_aux_outputs_cover_groups(student, layouts):
    sl, _ = layouts
    obs = _obs(sl, 2, seed=16)
    _, _, aux = student(obs, preset_mask("tracking", 2))
    recon = aux["recon"]
    assert set(recon) == set(GROUPS) - {"local_goal"}
    for g, pred in recon.items():
        s = student._group_slices[g]
        assert pred.shape == (2, s.stop - s.start)
    assert aux["local_goal"].shape == (2, sl.length("local"))
    assert "latent_decode" not in aux


def test_student_rejects_bad_inputs(student, layouts):
    sl, _ = layouts
    with pytest.raises(ValueError):
        student(torch.zeros(1, sl.total_dim + 1), preset_mask("tracking", 1))
    bad = torch.zeros(1, sl.total_dim)
    bad[0, 0] = float("inf")
    with pytest.raises(ValueError):
        student(bad, preset_mask("tracking", 1))
    with pytest.raises(ValueError):
        student(torch.zeros(1, sl.total_dim), np.ones((2, len(GROUPS))))


def test_full_scale_configuration_shapes():
    sl = paper_student_layout()
    torch.manual_seed(6)
    net = StudentPolicy(sl, teacher_dim=3942, action_dim=29,
                        arch=StudentArchConfig.full_scale())
    assert net.arch.latent_dim == 64 and net.arch.token_dim == 256
    obs = torch.zeros(1, sl.total_dim)
    priv = torch.zeros(1, 3942)
    mean, lat, aux = net(obs, preset_mask("tracking", 1),
                         privileged_obs=priv, mode="posterior")
    assert mean.shape == (1, 29) and lat.z.shape == (1, 64)
    assert aux["local_goal"].shape == (1, 31)


def test_student_fixed_scale_and_value_head(student, layouts):
    sl, _ = layouts
    names = [n for n, _ in student.named_parameters()]
    assert "log_std" not in names
    assert float(student.log_std[0]) == pytest.approx(FIXED_LOG_STD)
    v = student.value(_obs(sl, 5, seed=17))
    assert v.shape == (5,)


# ---------------------------------------------------------------- checkpoint
def test_checkpoint_roundtrip(tmp_path, student, layouts):
    sl, tl = layouts
    path = tmp_path / "student.pt"
    save_checkpoint(path, "student", student, layout=sl,
                    arch=student.arch.to_dict(), meta={"stage": "distill"})
    ckpt = load_checkpoint(path, expect_kind="student")
    assert ckpt.format_version == CHECKPOINT_VERSION == 1
    assert ckpt.meta["stage"] == "distill"
    assert StudentArchConfig.from_dict(ckpt.arch) == student.arch
    for key, val in student.state_dict().items():
        assert torch.equal(ckpt.params[key], val)
    require_layout_match(ckpt, sl)
    with pytest.raises(ValueError):
        require_layout_match(ckpt, tl)
    with pytest.raises(ValueError):
        load_checkpoint(path, expect_kind="actor_critic")
    fresh = StudentPolicy(sl, teacher_dim=tl.total_dim, action_dim=J)
    fresh.load_state_dict(ckpt.params)
    obs = _obs(sl, 2, seed=18)
    m1, _, _ = student(obs, preset_mask("tracking", 2))
    m2, _, _ = fresh(obs, preset_mask("tracking", 2))
    assert torch.equal(m1, m2)


def test_checkpoint_version_guard(tmp_path):
    ac = ActorCritic(4, 2)
    path = tmp_path / "ac.pt"
    save_checkpoint(path, "actor_critic", ac)
    payload = torch.load(path, weights_only=True)
    payload["format_version"] = 99
    torch.save(payload, path)
    with pytest.raises(ValueError):
        load_checkpoint(path)
