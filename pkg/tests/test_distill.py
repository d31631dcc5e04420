from dataclasses import replace

import numpy as np
import pytest
import torch

from remtkd import cuenet, distill, redts
from remtkd.data import ForgeryData
from remtkd.distill import TEACHER_TYPES, TrainerConfig
from remtkd.losses import LossWeights


@pytest.fixture(scope="module")
def world():
    data = ForgeryData.generate("train", {"authentic": 4, "copy_move": 4, "splicing": 4, "inpainting": 4},
                                seed=0, size=32)
    teachers = {k: cuenet.build(cuenet.TINY, seed=10 + i) for i, k in enumerate(TEACHER_TYPES)}
    bundle = distill.TeacherBundle(teachers)
    cache = {k: distill.frozen_outputs(m, data) for k, m in bundle.models.items()}
    reference = distill.frozen_outputs(cuenet.build(cuenet.TINY, seed=99), data)
    return data, bundle, cache, reference


def cfg(**kw):
    base = dict(epochs=2, batch_size=4, update_interval=2, model=cuenet.TINY, seed=5, strategy="baseline")
    base.update(kw)
    return TrainerConfig(**base)


def _run(world, **kw):
    data, _, cache, reference = world
    c = cfg(**kw)
    policies = {k: redts.PolicyParams.zeros(c.d) for k in TEACHER_TYPES} if c.strategy == "redts" else None
    return distill.train(data, c, teacher_cache=cache, reference=reference, policies=policies)


def test_config_validation():
    assert TrainerConfig().update_interval == 80
    with pytest.raises(ValueError):
        TrainerConfig(strategy="single")
    with pytest.raises(ValueError):
        TrainerConfig(strategy="bogus")
    with pytest.raises(ValueError):
        TrainerConfig(soft_variant="soft4")
    with pytest.raises(ValueError):
        TrainerConfig(batch_size=0)


def test_zero_epochs_is_noop(world):
    c = cfg(epochs=0)
    res = distill.train(world[0], c)
    _, init_seed, _ = c.streams()
    assert cuenet.params_hash(res.model) == cuenet.params_hash(cuenet.build(c.model, init_seed))
    assert res.log == []


def test_every_sample_once_per_epoch(world):
    res = _run(world, epochs=3)
    for e in range(3):
        seen = sorted(i for r in res.log if r["epoch"] == e for i in r["samples"])
        assert seen == list(range(len(world[0])))


@pytest.mark.parametrize("strategy", ["baseline", "u_ensemble", "redts", "single"])
def test_fixed_seed_reproducible(world, strategy):
    kw = dict(strategy=strategy, single_teacher="splicing" if strategy == "single" else None)
    a, b = _run(world, **kw), _run(world, **kw)
    assert a.log == b.log
    assert cuenet.params_hash(a.model) == cuenet.params_hash(b.model)


@pytest.mark.parametrize("strategy", ["u_ensemble", "redts", "single"])
def test_omega_zero_equals_baseline(world, strategy):
    base = _run(world)
    other = _run(world, strategy=strategy, single_teacher="inpainting" if strategy == "single" else None,
                 weights=LossWeights(omega=0.0))
    assert cuenet.params_hash(other.model) == cuenet.params_hash(base.model)
    assert [r["total"] for r in other.log] == [r["total"] for r in base.log]


def test_redts_forced_off_equals_baseline(world):
    data, _, cache, reference = world
    c = cfg(strategy="redts")
    res = distill.train(data, c, teacher_cache=cache, reference=reference, force_action=0)
    base = _run(world)
    assert [r["total"] for r in res.log] == [r["total"] for r in base.log]
    assert all(not any(r["actions"].values()) for r in res.log)


def test_teachers_untouched(world):
    _, bundle, _, _ = world
    before = bundle.hashes()
    _run(world, strategy="redts")
    _run(world, strategy="u_ensemble")
    assert bundle.hashes() == before
    assert all(not p.requires_grad for m in bundle.models.values() for p in m.parameters())


def test_u_ensemble_target_is_mean(world):
    _, _, cache, _ = world
    idx = np.arange(4)
    outs = [cache[k].batch(idx) for k in TEACHER_TYPES]
    avg = distill._mean_outputs(outs)
    want = (outs[0].seg + outs[1].seg + outs[2].seg) / 3
    assert torch.allclose(avg.seg, want, atol=1e-7)


def test_redts_log_contents(world):
    res = _run(world, strategy="redts", epochs=1)
    assert all(set(r["actions"]) == set(TEACHER_TYPES) for r in res.log)
    rewards = [r for r in res.log if "reward" in r]
    assert len(rewards) == len(res.log) // 2
    for r in res.log:
        assert all(0 < p < 1 for p in r["probs"].values())


def test_pretrain_policy(world):
    data, _, cache, reference = world
    c = cfg(strategy="redts", warmup_windows=0)
    init = cuenet.build(cuenet.TINY, seed=1)
    zero = distill.pretrain_policy(cache, init, data, c, reference)
    assert all(not p.W.any() and p.b == 0 for p in zero.values())
    c = replace(c, warmup_windows=2)
    a = distill.pretrain_policy(cache, init, data, c, reference)
    b = distill.pretrain_policy(cache, init, data, c, reference)
    for k in TEACHER_TYPES:
        assert np.array_equal(a[k].W, b[k].W) and a[k].b == b[k].b
        p = redts.policy_prob(np.zeros(redts.state_dim(c.d)), a[k])
        assert 0 < p < 1 and np.isfinite(p)
    with pytest.raises(ValueError):
        distill.pretrain_policy({}, init, data, c, reference)


def test_pretrain_teacher_checks_types(world):
    data = world[0]
    with pytest.raises(ValueError):
        distill.pretrain_teacher("copy_move", data, cfg())
    with pytest.raises(ValueError):
        distill.pretrain_teacher("multi", data, cfg())


def test_loss_trends_down():
    data = ForgeryData.generate("train", {"authentic": 8, "copy_move": 8}, seed=3, size=32)
    for seed in range(3):
        c = cfg(epochs=5, seed=seed, lr=3e-3)
        res = distill.pretrain_teacher("copy_move", data, c)
        per_epoch = [np.mean([r["hard"] for r in res.log if r["epoch"] == e]) for e in range(5)]
        assert per_epoch[-1] < per_epoch[0]
        # no more than one uptick along the way
        assert sum(b > a for a, b in zip(per_epoch, per_epoch[1:])) <= 1
