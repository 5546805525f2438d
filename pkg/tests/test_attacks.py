import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import tiny_batch, tiny_model
from multirep import attacks, repspace, tensor as tc
from multirep.attacks import AttackSpec, Norm


def _l1_projection_bisection(v, eps):
    """Reference l1 projection: bisect the soft threshold until the l1 norm hits eps."""
    if np.abs(v).sum() <= eps:
        return v.copy()
    lo, hi = 0.0, np.abs(v).max()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.maximum(np.abs(v) - mid, 0).sum() > eps:
            lo = mid
        else:
            hi = mid
    return np.sign(v) * np.maximum(np.abs(v) - hi, 0)


def test_l1_projection_example():
    out = attacks.project_l1(np.array([2.0, 2.0]), np.zeros(2), 2.0)
    np.testing.assert_allclose(out, [1.0, 1.0])


def test_linf_and_l2_projection_examples():
    np.testing.assert_allclose(attacks.project_linf(np.array([0.5, -2.0]), np.zeros(2), 1.0),
                               [0.5, -1.0])
    np.testing.assert_allclose(attacks.project_l2(np.array([3.0, 4.0]), np.zeros(2), 1.0),
                               [0.6, 0.8])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 7, elements=st.floats(-5, 5)), st.floats(0.01, 10))
def test_l1_projection_matches_bisection(v, eps):
    np.testing.assert_allclose(attacks.project_l1(v, np.zeros_like(v), eps),
                               _l1_projection_bisection(v, eps), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (2, 5), elements=st.floats(-5, 5)),
       arrays(np.float64, (2, 5), elements=st.floats(-1, 1)),
       # below ~1e-6 the rounding of center + d exceeds the relative ball slack
       st.just(0.0) | st.floats(1e-6, 3.0), st.sampled_from(list(Norm)))
def test_projection_is_feasible_and_idempotent(z, center, eps, norm):
    p = attacks.project(z, center, eps, norm)
    assert attacks.PerturbationBall(center, norm, eps).contains(p) or eps == 0
    np.testing.assert_allclose(attacks.project(p, center, eps, norm), p, atol=1e-12)


def test_projection_rejects_bad_input():
    with pytest.raises(tc.ShapeError):
        attacks.project_l2(np.zeros(3), np.zeros(4), 1.0)
    with pytest.raises(ValueError):
        attacks.project_l1(np.zeros(3), np.zeros(3), -1.0)


def test_spec_defaults_and_validation():
    spec = AttackSpec("linf", 0.4, steps=10)
    assert spec.norm is Norm.LINF
    assert spec.step_size == pytest.approx(0.1)
    assert spec.with_(steps=40).step_size == pytest.approx(0.025)
    with pytest.raises(ValueError):
        AttackSpec("L3", 0.1)
    with pytest.raises(ValueError):
        AttackSpec("L2", -0.1)
    with pytest.raises(ValueError):
        AttackSpec("L2", 0.1, restarts=0)


def test_pgd_rejects_l1_and_slide_requires_l1(model, batch):
    x, y = batch
    space = repspace.identity_space()
    with pytest.raises(ValueError):
        attacks.pgd_attack(model, space, x, y, AttackSpec("L1", 1.0))
    with pytest.raises(ValueError):
        attacks.slide_attack(model, space, x, y, AttackSpec("L2", 1.0))


@pytest.mark.parametrize("space_name", ["pixel", "dct"])
@pytest.mark.parametrize("norm,eps", [("Linf", 0.2), ("L2", 1.0), ("L1", 3.0)])
def test_attack_stays_in_ball_and_pixel_range(space_name, norm, eps):
    model = tiny_model(1)
    x, y = tiny_batch(2)
    space = repspace.make_space(space_name, (8, 8, 1))
    spec = AttackSpec(norm, eps, steps=5, restarts=2, seed=3)
    res = attacks.attack(model, space, x, y, spec, return_result=True)
    dist = attacks.norm_of(res.z_adv - res.center, norm)
    assert np.all(dist <= eps * (1 + 1e-9))
    assert res.x_adv.min() >= 0.0 and res.x_adv.max() <= 1.0
    np.testing.assert_allclose(res.z_adv, space.forward(res.x_adv), atol=1e-12)


@pytest.mark.parametrize("norm,eps", [("Linf", 0.5), ("L1", 20.0)])
def test_clipped_dct_attack_is_pulled_back_into_ball(norm, eps):
    # Saturated inputs force heavy clipping, which alone would leave the DCT ball.
    model = tiny_model(0)
    x, y = tiny_batch(4)
    x = np.where(x > 0.5, 1.0, 0.0)
    space = repspace.make_space("dct", (8, 8, 1))
    res = attacks.attack(model, space, x, y, AttackSpec(norm, eps, steps=8, seed=1),
                         return_result=True)
    dist = attacks.norm_of(space.forward(res.x_adv) - space.forward(x), norm)
    assert np.all(dist <= eps * (1 + 1e-9))
    assert res.x_adv.min() >= 0.0 and res.x_adv.max() <= 1.0


def test_attack_never_lowers_loss(model, batch):
    x, y = batch
    res = attacks.attack(model, repspace.identity_space(), x, y, AttackSpec("Linf", 0.1, steps=5),
                         return_result=True)
    assert np.all(res.loss >= model.per_example_loss(x, y))
    np.testing.assert_allclose(res.loss, model.per_example_loss(res.x_adv, y))


def test_more_restarts_never_weaken(model, batch):
    x, y = batch
    space = repspace.dct2d_space(8, 8, 1)
    base = AttackSpec("L2", 1.0, steps=3, seed=5)
    one = attacks.attack(model, space, x, y, base, return_result=True).loss
    three = attacks.attack(model, space, x, y, base.with_(restarts=3), return_result=True).loss
    assert np.all(three >= one)


@pytest.mark.parametrize("spec", [AttackSpec("Linf", 0.3, steps=0), AttackSpec("L2", 0.0, steps=5)])
def test_degenerate_attack_returns_clean_input(model, batch, spec):
    x, y = batch
    np.testing.assert_array_equal(attacks.attack(model, repspace.identity_space(), x, y, spec), x)


def test_identity_space_equals_direct_pixel_attack_bitwise(model, batch):
    x, y = batch
    spec = AttackSpec("L2", 0.8, steps=4, restarts=3, seed=9)
    via_space = attacks.run_attack(model, repspace.identity_space(), x, y, spec, "pgd")
    direct = attacks.run_attack(model, None, x, y, spec, "pgd")
    np.testing.assert_array_equal(via_space.x_adv, direct.x_adv)


def test_single_example_is_accepted(model, batch):
    x, y = batch
    out = attacks.attack(model, repspace.identity_space(), x[0], y[:1], AttackSpec("Linf", 0.1, 2))
    assert out.shape == x[0].shape


def test_slide_step_touches_only_top_coordinates():
    g = np.arange(1.0, 21.0).reshape(1, 20) * np.array([1, -1] * 10)
    spec = AttackSpec("L1", 5.0, steps=1, step_size=1.0, sparsity_fraction=0.1)
    step = attacks._ascent_step(np.zeros_like(g), g, spec, "slide")
    assert np.count_nonzero(step) == 2
    np.testing.assert_array_equal(step[0, -2:], np.sign(g[0, -2:]))


def test_l2_step_skips_zero_gradient():
    spec = AttackSpec("L2", 1.0, steps=1)
    z = np.ones((2, 3))
    g = np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 4.0]])
    out = attacks._ascent_step(z, g, spec, "pgd")
    np.testing.assert_array_equal(out[0], z[0])
    np.testing.assert_allclose(np.linalg.norm(out[1] - z[1]), spec.step_size)


def test_random_start_is_inside_ball():
    rng = np.random.default_rng(0)
    for norm in Norm:
        d = attacks._random_in_ball(rng, (50, 4, 4, 1), 0.7, norm)
        assert np.all(attacks.norm_of(d, norm) <= 0.7 * (1 + 1e-12))


def test_robust_loss_is_mean_of_adversarial_losses(model, batch):
    from multirep.trainers import LossArm
    x, y = batch
    arm = LossArm("pix", repspace.identity_space(), AttackSpec("Linf", 0.1, steps=3))
    res = attacks.attack(model, arm.space, x, y, arm.attack, return_result=True)
    assert attacks.robust_loss(model, arm, x, y) == pytest.approx(res.loss.mean())
