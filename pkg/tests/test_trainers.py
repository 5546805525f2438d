import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import tiny_batch, tiny_model
from multirep import repspace
from multirep.attacks import AttackSpec
from multirep.data import DatasetSplit
from multirep.trainers import (LossArm, MwuConfig, TrainLog, mwu_weight_update,
                               normalize_weights, round_robin_counts, sample_arm,
                               natural_pretrain, train_greedy, train_mwu_exact, train_mwu_scalable,
                               train_round_robin, train_single, update_weights,
                               validation_losses)


def _split(n=40, seed=0):
    x, y = tiny_batch(seed, n=n)
    vx, vy = tiny_batch(seed + 100, n=10)
    return DatasetSplit(x, y, vx, vy)


def _arms():
    return [
        LossArm("pix", repspace.identity_space((8, 8, 1)), AttackSpec("Linf", 0.1, steps=2)),
        LossArm("dct", repspace.dct2d_space(8, 8, 1), AttackSpec("L2", 0.5, steps=2)),
    ]


def _cfg(**kw):
    base = dict(T=3, r=1, h=2, batch_size=16, learning_rate=0.05, seed=7)
    base.update(kw)
    return MwuConfig(**base)


def test_weight_update_example():
    w = update_weights([1.0, 1.0], [1.0, 0.0], math.log(2))
    np.testing.assert_allclose(normalize_weights(w), [2 / 3, 1 / 3])


def test_weight_update_rescales_to_k_and_clamps():
    w = update_weights([1.0, 1.0, 1.0], [50.0, -3.0, 0.0], 1.0, cap=10.0)
    assert w.sum() == pytest.approx(3.0)
    # -3 clamps to 0, matching the third arm
    assert w[1] == pytest.approx(w[2])
    assert w[0] / w[2] == pytest.approx(math.exp(10.0))


def test_weight_update_rejects_nan():
    with pytest.raises(ValueError):
        update_weights([1.0, 1.0], [np.nan, 0.0], 0.1, cap=10.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=6), st.floats(0, 3))
def test_weight_update_matches_exponential_oracle(losses, eta):
    w = update_weights(np.ones(len(losses)), losses, eta)
    ref = np.exp(eta * np.array(losses))
    np.testing.assert_allclose(normalize_weights(w), ref / ref.sum(), rtol=1e-9)


def test_zero_eta_keeps_uniform():
    arms = _arms()
    mwu_weight_update(arms, [5.0, 0.1], 0.0)
    np.testing.assert_allclose(normalize_weights(arms), [0.5, 0.5])


def test_sample_arm_frequencies():
    rng = np.random.default_rng(0)
    p = np.array([0.2, 0.5, 0.3])
    counts = np.bincount([sample_arm(p, rng) for _ in range(20000)], minlength=3)
    np.testing.assert_allclose(counts / 20000, p, atol=0.02)
    assert sample_arm([0.0, 1.0], rng) == 1
    with pytest.raises(ValueError):
        sample_arm([0.5, 0.6], rng)


def test_round_robin_counts_example():
    assert tuple(round_robin_counts(3, 7)) == (3, 2, 2)


def test_config_validation():
    with pytest.raises(ValueError):
        MwuConfig(T=3, h=4)
    with pytest.raises(ValueError):
        MwuConfig(eta=-1)
    with pytest.raises(ValueError):
        MwuConfig(val_strength="strong")


def test_mwu_log_shape_and_weight_recursion():
    data, arms = _split(), _arms()
    cfg = _cfg()
    res = train_mwu_scalable(tiny_model(0), arms, data, cfg)
    assert len(res.log) == cfg.T and len(res.snapshots) == cfg.T
    batches = math.ceil(len(data.train_x) / cfg.batch_size) * cfg.r
    w = np.ones(2)
    for rec in res.log:
        np.testing.assert_allclose(rec.p, normalize_weights(w), rtol=1e-12)
        assert sum(rec.chosen_counts) == batches
        w = update_weights(w, rec.val_losses, cfg.eta, cfg.loss_cap)
    expected = np.mean([s.params for s in res.snapshots[-cfg.h:]], axis=0)
    np.testing.assert_allclose(res.model.params, expected)


def test_mwu_is_deterministic_under_seed():
    a = train_mwu_scalable(tiny_model(0), _arms(), _split(), _cfg())
    b = train_mwu_scalable(tiny_model(0), _arms(), _split(), _cfg())
    assert a.log.to_jsonl() == b.log.to_jsonl()
    np.testing.assert_array_equal(a.model.params, b.model.params)


def test_single_arm_mwu_equals_single_training():
    arm = _arms()[0]
    a = train_mwu_scalable(tiny_model(0), [arm], _split(), _cfg())
    b = train_single(tiny_model(0), arm, _split(), _cfg())
    assert a.log.to_jsonl() == b.log.to_jsonl()
    np.testing.assert_array_equal(a.model.params, b.model.params)


def test_zero_eta_mwu_keeps_p_uniform():
    res = train_mwu_scalable(tiny_model(0), _arms(), _split(), _cfg(eta=0.0))
    for rec in res.log:
        assert rec.p == [0.5, 0.5]


def test_round_robin_cycles_arms():
    res = train_round_robin(tiny_model(0), _arms() + [_arms()[0]], _split(n=40),
                            _cfg(batch_size=8, T=2, h=1))
    # 5 batches per step: arms 0,1,2,0,1 then 2,0,1,2,0
    assert res.log.records[0].chosen_counts == [2, 2, 1]
    assert res.log.records[1].chosen_counts == [2, 1, 2]


def test_greedy_picks_largest_validation_loss():
    data, arms = _split(), _arms()
    res = train_greedy(tiny_model(0), arms, data, _cfg(T=2, h=1))
    for rec in res.log:
        chosen = int(np.argmax(rec.chosen_counts))
        assert chosen == int(np.argmax(rec.val_losses))
        assert rec.p[chosen] == 1.0


def test_validation_losses_are_robust_losses():
    data, arms = _split(), _arms()
    model = tiny_model(0)
    val = validation_losses(model, arms, data, _cfg())
    clean = model.per_example_loss(data.val_x, data.val_y).mean()
    assert all(v >= clean - 1e-12 for v in val)


def test_trainlog_round_trip(tmp_path):
    res = train_single(tiny_model(0), _arms()[0], _split(), _cfg(T=2, h=1))
    path = tmp_path / "log.jsonl"
    res.log.write(path)
    assert TrainLog.read(path).to_jsonl() == res.log.to_jsonl()


def test_empty_inputs_rejected():
    with pytest.raises(ValueError):
        train_mwu_scalable(tiny_model(0), [], _split(), _cfg())
    empty = DatasetSplit(np.zeros((0, 8, 8, 1)), np.zeros(0, int), *tiny_batch(1, n=4))
    with pytest.raises(ValueError):
        train_mwu_scalable(tiny_model(0), _arms(), empty, _cfg())


def test_exact_loop_against_hand_computation():
    losses = {0: np.array([1.0, 0.0]), 1: np.array([0.0, 1.0])}
    trace = train_mwu_exact(lambda p: 0 if p[0] <= p[1] else 1, lambda th: losses[th],
                            k=2, eta=math.log(2), T=3)
    np.testing.assert_allclose(trace.p[0], [0.5, 0.5])
    np.testing.assert_allclose(trace.p[1], [2 / 3, 1 / 3])
    np.testing.assert_allclose(trace.p[2], [0.5, 0.5])
    assert trace.solutions == [0, 1, 0]


def test_natural_pretrain_lowers_clean_loss_and_is_seeded():
    data = _split()
    a, b = tiny_model(0), tiny_model(0)
    before = a.per_example_loss(data.train_x, data.train_y).mean()
    natural_pretrain(a, data, epochs=3, batch_size=8, learning_rate=0.1, seed=5)
    natural_pretrain(b, data, epochs=3, batch_size=8, learning_rate=0.1, seed=5)
    np.testing.assert_array_equal(a.params, b.params)
    assert a.per_example_loss(data.train_x, data.train_y).mean() < before
    c = tiny_model(0)
    natural_pretrain(c, data, epochs=0)
    np.testing.assert_array_equal(c.params, tiny_model(0).params)
