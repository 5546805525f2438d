import numpy as np
import pytest

from conftest import TINY_ARCH, tiny_batch, tiny_model
from multirep import tensor as tc
from multirep.model import (DEFAULT_ARCHITECTURE, Classifier, Ensemble, ParamSnapshot,
                            average_params, ensemble_predict, load_checkpoint,
                            save_checkpoint, sgd_step)


def _manual_forward(model, x):
    """Reference forward pass with explicit loops over output positions."""
    out = x
    slices = {}
    for li, name, pshape, off, size in model.param_slices():
        slices[(li, name)] = model.params[off:off + size].reshape(pshape)
    for li, layer in enumerate(model.architecture):
        kind = layer["type"]
        if kind == "conv":
            w, b = slices[(li, "weight")], slices[(li, "bias")]
            k = w.shape[0]
            n, h, wd, _ = out.shape
            res = np.zeros((n, h - k + 1, wd - k + 1, w.shape[3]))
            for i in range(res.shape[1]):
                for j in range(res.shape[2]):
                    res[:, i, j] = np.einsum("nabc,abco->no", out[:, i:i + k, j:j + k], w) + b
            out = res
        elif kind == "relu":
            out = np.maximum(out, 0)
        elif kind == "pool":
            s = layer["window"]
            n, h, wd, c = out.shape
            out = out[:, :h // s * s, :wd // s * s].reshape(n, h // s, s, wd // s, s, c).max(axis=(2, 4))
        elif kind == "flatten":
            out = out.reshape(len(out), -1)
        else:
            out = out @ slices[(li, "weight")] + slices[(li, "bias")]
    return out


def test_default_architecture_parameter_count():
    # 3*3*1*16+16 + 3*3*16*32+32 + 5*5*32*10+10
    assert Classifier(DEFAULT_ARCHITECTURE).num_params == 160 + 4640 + 8010


def test_forward_matches_manual_reference(model, batch):
    x, _ = batch
    np.testing.assert_allclose(model.logits(x), _manual_forward(model, x), rtol=1e-12, atol=1e-12)


def test_same_seed_same_init_and_biases_zero():
    a, b = tiny_model(4), tiny_model(4)
    np.testing.assert_array_equal(a.params, b.params)
    for _, name, _, off, size in a.param_slices():
        if name == "bias":
            assert not a.params[off:off + size].any()


def test_bad_architecture_rejected():
    with pytest.raises(ValueError):
        Classifier(({"type": "softmax"},), (8, 8, 1))
    with pytest.raises(ValueError):
        Classifier(({"type": "conv", "filters": 2, "kernel": 9},), (8, 8, 1))
    with pytest.raises(ValueError):
        Classifier(TINY_ARCH, (8, 8, 1), params=np.zeros(3))


def test_loss_and_grad_matches_finite_difference(model, batch):
    x, y = batch
    _, grad = model.loss_and_grad(x, y)
    f = lambda theta: tc.softmax_cross_entropy(model.forward(x, params=theta), y)
    err = tc.finite_diff_check(f, model.params)
    assert err <= 1e-6
    theta = tc.Tensor(model.params.copy(), requires_grad=True)
    tc.backward(f(theta))
    np.testing.assert_allclose(grad, theta.grad)


def test_input_gradient_matches_finite_difference(model, batch):
    x, y = batch
    assert tc.finite_diff_check(lambda t: model.input_loss(t, y[:2]), x[:2]) <= 1e-6


def test_per_example_loss_mean_equals_loss(model, batch):
    x, y = batch
    loss, _ = model.loss_and_grad(x, y)
    assert model.per_example_loss(x, y).mean() == pytest.approx(loss, rel=1e-12)


def test_sgd_step_and_shape_check(model):
    before = model.params.copy()
    sgd_step(model, np.ones_like(before), 0.5)
    np.testing.assert_allclose(model.params, before - 0.5)
    with pytest.raises(tc.ShapeError):
        sgd_step(model, np.ones(3), 0.1)


def test_snapshot_is_immutable_copy(model):
    snap = model.snapshot(3)
    model.params += 1.0
    assert snap.step == 3
    assert not np.allclose(snap.params, model.params)
    with pytest.raises(ValueError):
        snap.params[0] = 1.0


def test_average_params_is_coordinatewise_mean(model):
    snaps = [ParamSnapshot(model.params + k) for k in range(3)]
    np.testing.assert_allclose(average_params(snaps, model).params, model.params + 1.0)
    with pytest.raises(ValueError):
        average_params([], model)


def test_ensemble_averages_probabilities():
    a, b = tiny_model(0), tiny_model(1)
    x, y = tiny_batch(5)
    probs = ensemble_predict([a.snapshot(), b.snapshot()], x, a)
    np.testing.assert_allclose(probs, 0.5 * (a.predict_proba(x) + b.predict_proba(x)))
    ens = Ensemble([a.snapshot(), b.snapshot()], a)
    assert ens.input_loss(x, y).item() == pytest.approx(ens.per_example_loss(x, y).mean())
    err = tc.finite_diff_check(lambda t: ens.input_loss(t, y[:1]), x[:1])
    assert err <= 1e-6


def test_single_member_ensemble_equals_model(model, batch):
    x, _ = batch
    np.testing.assert_allclose(Ensemble([model.snapshot()], model).predict_proba(x),
                               model.predict_proba(x), rtol=1e-12)


def test_checkpoint_round_trip(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    loaded = load_checkpoint(path)
    np.testing.assert_array_equal(loaded.params, model.params)
    assert loaded.architecture == model.architecture
    assert loaded.input_shape == model.input_shape


def test_checkpoint_corruption_detected(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    blob = path.read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(blob[:-8])
    (tmp_path / "magic.ckpt").write_bytes(b"X" + blob[1:])
    with pytest.raises(ValueError, match="expected"):
        load_checkpoint(tmp_path / "trunc.ckpt")
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(tmp_path / "magic.ckpt")
