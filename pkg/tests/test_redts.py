import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from remtkd import cuenet, redts
from remtkd.redts import (ActionSample, EpisodeHistory, PolicyParams, RewardConfig, action_prob,
                          compute_reward, grad_action_prob, grad_log_action_prob, policy_prob,
                          policy_update, sample_action, state_dim, state_vector, teacher_summary)


@pytest.mark.parametrize("d,n", [(128, 259), (16, 35)])
def test_state_dimensions(d, n):
    assert state_dim(d) == n
    r, s = np.zeros(d), np.ones(d)
    t = teacher_summary(np.full((2, 1, 4, 4), 0.3), np.full(2, 0.7), np.full((2, 1, 4, 4), 0.1))
    v = state_vector(r, s, t)
    assert v.shape == (n,)
    assert np.array_equal(v[:d], r) and np.array_equal(v[d:2 * d], s) and np.array_equal(v[2 * d:], t)


def test_teacher_summary_values():
    t = teacher_summary(np.full((2, 1, 4, 4), 0.3), np.full(2, 0.7), np.full((2, 1, 4, 4), 0.1))
    assert t == pytest.approx([0.3, 0.7, 0.1])
    seg = np.zeros((1, 1, 4, 4))
    seg[0, 0, 2, 1] = 0.99
    assert teacher_summary(seg, [0.5], np.zeros((1, 1, 4, 4)))[0] == pytest.approx(0.99)


def test_state_vector_rejects_bad_lengths():
    with pytest.raises(ValueError):
        state_vector(np.zeros(4), np.zeros(5), np.zeros(3))
    with pytest.raises(ValueError):
        state_vector(np.zeros(4), np.zeros(4), np.zeros(2))


def test_repr_feature_batch_of_identical_images():
    model = cuenet.build(cuenet.TINY, seed=0)
    x = torch.rand(1, 3, 32, 32, generator=torch.Generator().manual_seed(0))
    one = redts.repr_feature(model, x)
    many = redts.repr_feature(model, x.repeat(4, 1, 1, 1))
    assert one.shape == (cuenet.TINY.d,)
    np.testing.assert_allclose(many, one, rtol=0, atol=1e-6)


def test_policy_basics():
    p0 = PolicyParams.zeros(4)
    assert policy_prob(np.ones(11), p0) == 0.5
    assert action_prob(0.7, 0) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        policy_prob(np.ones(10), p0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_policy_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    d = 3
    s = rng.normal(size=state_dim(d))
    params = PolicyParams(W=rng.normal(scale=0.3, size=state_dim(d)), b=float(rng.normal()))
    p = policy_prob(s, params)
    assert action_prob(p, 1) + action_prob(p, 0) == pytest.approx(1.0, abs=1e-15)
    h = 1e-6
    for a in (0, 1):
        gW, gb = grad_action_prob(s, params, a)
        lW, lb = grad_log_action_prob(s, params, a)
        j = int(rng.integers(0, s.size))
        plus, minus = params.copy(), params.copy()
        plus.W[j] += h
        minus.W[j] -= h
        fd = (action_prob(policy_prob(s, plus), a) - action_prob(policy_prob(s, minus), a)) / (2 * h)
        assert abs(fd - gW[j]) <= 1e-6 * max(abs(fd), 1e-6) + 1e-10
        fdl = (np.log(action_prob(policy_prob(s, plus), a)) - np.log(action_prob(policy_prob(s, minus), a))) / (2 * h)
        assert abs(fdl - lW[j]) <= 1e-6 * max(abs(fdl), 1e-6) + 1e-10
        pb, mb = params.copy(), params.copy()
        pb.b += h
        mb.b -= h
        fdb = (action_prob(policy_prob(s, pb), a) - action_prob(policy_prob(s, mb), a)) / (2 * h)
        assert abs(fdb - gb) <= 1e-6 * max(abs(fdb), 1e-6) + 1e-10
    g1, g0 = grad_action_prob(s, params, 1), grad_action_prob(s, params, 0)
    assert np.array_equal(g1[0], -g0[0]) and g1[1] == -g0[1]


def test_sampling():
    rng = np.random.default_rng(0)
    draws = [sample_action(0.3, rng).action for _ in range(100_000)]
    assert abs(np.mean(draws) - 0.3) < 0.01
    s = sample_action(1.0, np.random.default_rng(1))
    assert s.prob_select == 1 - 1e-6 and s.action == 1
    a = [sample_action(0.5, np.random.default_rng(9)).action for _ in range(3)]
    b = [sample_action(0.5, np.random.default_rng(9)).action for _ in range(3)]
    assert a == b
    assert ActionSample(0, 0.7).prob == pytest.approx(0.3)


def test_rewards():
    cfg = RewardConfig("reward3", 0.2)
    assert cfg.gamma == 0.2
    assert compute_reward(cfg, 0.6, 0.4, 0.6, 0.9) == pytest.approx(1.0)
    assert compute_reward(RewardConfig("reward1"), 0.6, 0.4, 0.6, 0.9) == pytest.approx(-0.6)
    assert compute_reward(RewardConfig("reward2"), 0.6, 0.4, 0.6, 0.9) == pytest.approx(-1.0)
    assert compute_reward(RewardConfig("reward3", 1.0), 0.6, 0.4, 0.6, 0.9) == \
        compute_reward(RewardConfig("reward2"), 0.6, 0.4, 0.6, 0.9)
    with pytest.raises(ValueError):
        RewardConfig("reward4")


def _one_step(action, r):
    s = np.linspace(0, 1, state_dim(2))
    pol = {"a": PolicyParams.zeros(2)}
    h = EpisodeHistory()
    h.add(0, "a", s, ActionSample(action, 0.5))
    before = policy_prob(s, pol["a"])
    policy_update(h, r, 0.1, pol)
    assert len(h) == 0
    return before, policy_prob(s, pol["a"]), pol["a"]


def test_policy_update_directions():
    before, after, params = _one_step(1, 0.0)
    assert after == before and not params.W.any() and params.b == 0
    before, after, _ = _one_step(1, 1.0)
    assert after > before
    before, after, _ = _one_step(0, 1.0)
    assert after < before
    with pytest.raises(ValueError):
        policy_update(EpisodeHistory(), 1.0, 0.1, {})


def test_cosine_lr():
    assert redts.cosine_lr(3e-4, 0, 10) == 3e-4
    assert redts.cosine_lr(3e-4, 10, 10) == pytest.approx(0.0, abs=1e-20)
    assert redts.cosine_lr(3e-4, 5, 10) == pytest.approx(1.5e-4)


@pytest.mark.parametrize("grad", ["prob", "logprob"])
def test_bandit_learns_good_teacher(grad):
    p = redts.run_bandit({"good": 1.0, "bad": -1.0}, windows=300, seed=0, grad=grad)
    assert p["good"] > 0.8 and p["bad"] < 0.2
