"""First-order inner maximization: PGD (l_inf, l_2) and SLIDE (l_1).

Attacks run inside a representation space: the clean batch is mapped to
coefficients ``z0 = R(x)``, ascent steps are taken on
``L(f(R^-1(z)), y)`` and ``z`` is projected back onto the norm ball around
``z0``.  Pixels are clipped to ``[0, 1]`` once, after the final inverse map.

In a non-identity space the pixel box is not aligned with the coefficient
axes, so each iterate is projected onto the intersection of the ball and
the box with a few rounds of Dykstra's alternating projections.  Any
residual overshoot left after the final clip is removed by pulling the
candidate toward the clean input along the segment joining them, which
stays inside the box.

Every attack treats the clean input as a candidate and returns, per
example, whichever candidate (clean point or restart end point) has the
highest loss.  Restart ``r`` draws its noise from ``default_rng([seed, r])``
so adding restarts never changes earlier ones.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from multirep import tensor as tc

BALL_RTOL = 1e-9
DYKSTRA_ROUNDS = 10


class Norm(str, enum.Enum):
    L1 = "L1"
    L2 = "L2"
    LINF = "Linf"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {"l1": cls.L1, "l2": cls.L2, "linf": cls.LINF, "inf": cls.LINF}
        if key not in aliases:
            raise ValueError(f"unknown norm {value!r} (expected L1, L2 or Linf)")
        return aliases[key]


@dataclass(frozen=True)
class AttackSpec:
    """Attack configuration.  ``step_size`` defaults to ``2.5 * epsilon / steps``."""

    norm: Norm
    epsilon: float
    steps: int = 10
    step_size: float = None
    restarts: int = 1
    sparsity_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "norm", Norm.parse(self.norm))
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if not 0 < self.sparsity_fraction <= 1:
            raise ValueError(f"sparsity_fraction must lie in (0, 1], got {self.sparsity_fraction}")
        if self.step_size is None:
            size = 2.5 * self.epsilon / self.steps if self.steps > 0 else 0.0
            object.__setattr__(self, "step_size", size)
        if self.steps > 0 and self.epsilon > 0 and not self.step_size > 0:
            raise ValueError(f"step_size must be > 0 when steps > 0, got {self.step_size}")

    def with_(self, **changes):
        fields = dict(norm=self.norm, epsilon=self.epsilon, steps=self.steps,
                      step_size=self.step_size, restarts=self.restarts,
                      sparsity_fraction=self.sparsity_fraction, seed=self.seed)
        if "steps" in changes or "epsilon" in changes:
            fields["step_size"] = None
        fields.update(changes)
        return AttackSpec(**fields)


def norm_of(delta, norm):
    """Per-example norm of a batch (first axis is the batch)."""
    flat = np.asarray(delta, dtype=np.float64).reshape(len(delta), -1)
    norm = Norm.parse(norm)
    if norm is Norm.LINF:
        return np.abs(flat).max(axis=1) if flat.shape[1] else np.zeros(len(flat))
    if norm is Norm.L2:
        return np.sqrt((flat * flat).sum(axis=1))
    return np.abs(flat).sum(axis=1)


@dataclass(frozen=True)
class PerturbationBall:
    center: np.ndarray
    norm: Norm
    epsilon: float

    def contains(self, z):
        d = np.asarray(z, dtype=np.float64) - self.center
        dist = norm_of(d.reshape(1, -1), self.norm)[0]
        return bool(dist <= self.epsilon * (1 + BALL_RTOL))

    def project(self, z):
        return project(z, self.center, self.epsilon, self.norm)


# ---------------------------------------------------------------------------
# Projections
# ---------------------------------------------------------------------------

def _check_projection(z, center, eps):
    z = np.asarray(z, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    if z.shape != center.shape:
        raise tc.ShapeError(f"projection: shape mismatch {list(z.shape)} vs {list(center.shape)}")
    if eps < 0:
        raise ValueError(f"projection radius must be >= 0, got {eps}")
    return z, center


def project_linf(z, center, eps):
    z, center = _check_projection(z, center, eps)
    return np.clip(z, center - eps, center + eps)


def _l2_rows(d, eps):
    norms = np.sqrt((d * d).sum(axis=1))
    scale = np.ones_like(norms)
    outside = norms > eps
    scale[outside] = eps / norms[outside]
    return d * scale[:, None]


def project_l2(z, center, eps):
    z, center = _check_projection(z, center, eps)
    d = (z - center).reshape(1, -1)
    return center + _l2_rows(d, eps).reshape(z.shape)


def _l1_rows(v, eps):
    """Euclidean projection of each row of ``v`` onto the l1 ball of radius ``eps``.

    Sort-and-threshold (Duchi et al. 2008) on the absolute values.
    """
    u = np.abs(v)
    out = v.copy()
    inside = u.sum(axis=1) <= eps
    rows = np.flatnonzero(~inside)
    if rows.size == 0:
        return out
    if eps == 0:
        out[rows] = 0.0
        return out
    ur = u[rows]
    s = -np.sort(-ur, axis=1)
    css = np.cumsum(s, axis=1)
    j = np.arange(1, ur.shape[1] + 1)
    cond = s * j > (css - eps)
    rho = ur.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = (css[np.arange(len(rows)), rho] - eps) / (rho + 1.0)
    proj = np.sign(v[rows]) * np.maximum(ur - theta[:, None], 0.0)
    # u - theta cancels badly when eps << |v|; rescale any overshoot
    l1 = np.abs(proj).sum(axis=1)
    proj *= np.where(l1 > eps, eps / np.maximum(l1, np.finfo(np.float64).tiny), 1.0)[:, None]
    out[rows] = proj
    return out


def project_l1(z, center, eps):
    z, center = _check_projection(z, center, eps)
    d = (z - center).reshape(1, -1)
    return center + _l1_rows(d, eps).reshape(z.shape)


def project(z, center, eps, norm):
    norm = Norm.parse(norm)
    return {Norm.LINF: project_linf, Norm.L2: project_l2, Norm.L1: project_l1}[norm](z, center, eps)


def _project_batch(z, center, eps, norm):
    n = len(z)
    d = (z - center).reshape(n, -1)
    if norm is Norm.LINF:
        return np.clip(z, center - eps, center + eps)
    if norm is Norm.L2:
        return center + _l2_rows(d, eps).reshape(z.shape)
    return center + _l1_rows(d, eps).reshape(z.shape)


def _random_in_ball(rng, shape, eps, norm):
    n = shape[0]
    d = int(np.prod(shape[1:]))
    if norm is Norm.LINF:
        return rng.uniform(-eps, eps, size=shape)
    if norm is Norm.L2:
        g = rng.standard_normal((n, d))
        g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
        r = eps * rng.uniform(size=(n, 1)) ** (1.0 / d)
        return (g * r).reshape(shape)
    # uniform in the l1 ball: normalized exponentials with one slack coordinate
    e = rng.exponential(size=(n, d + 1))
    e /= e.sum(axis=1, keepdims=True)
    signs = rng.choice([-1.0, 1.0], size=(n, d))
    return (eps * e[:, :d] * signs).reshape(shape)


# ---------------------------------------------------------------------------
# Attacks
# ---------------------------------------------------------------------------

@dataclass
class AttackResult:
    x_adv: np.ndarray     # clipped pixels, N x H x W x C
    z_adv: np.ndarray     # coefficients R(x_adv) of the emitted example
    center: np.ndarray    # R(x)
    loss: np.ndarray      # per-example loss at x_adv


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    return x, x.ndim == 3


def _input_grad(model, space, z, y):
    """Gradient of the batch loss w.r.t. coefficients ``z`` (or raw pixels when space is None)."""
    leaf = tc.Tensor(z, requires_grad=True)
    pixels = leaf if space is None else space.inverse(leaf)
    loss = model.input_loss(pixels, y)
    tc.backward(loss)
    return leaf.grad if leaf.grad is not None else np.zeros_like(z)


def _ascent_step(z, g, spec, kind):
    n = len(z)
    if kind == "slide":
        flat_g = g.reshape(n, -1)
        k = max(1, math.ceil(spec.sparsity_fraction * flat_g.shape[1]))
        step = np.zeros_like(flat_g)
        if k >= flat_g.shape[1]:
            step = np.sign(flat_g)
        else:
            top = np.argpartition(-np.abs(flat_g), k - 1, axis=1)[:, :k]
            rows = np.arange(n)[:, None]
            step[rows, top] = np.sign(flat_g[rows, top])
        return z + spec.step_size * step.reshape(z.shape)
    if spec.norm is Norm.LINF:
        return z + spec.step_size * np.sign(g)
    norms = np.sqrt((g.reshape(n, -1) ** 2).sum(axis=1))
    safe = np.where(norms > 0, norms, 1.0)
    scale = np.where(norms > 0, spec.step_size / safe, 0.0)
    return z + g * scale.reshape((n,) + (1,) * (g.ndim - 1))


def _project_ball_and_box(space, z, z0, spec):
    """Dykstra's algorithm for the ball around ``z0`` intersected with ``R([0, 1]^n)``.

    The map is orthonormal, so the box projection in coefficients is
    ``R(clip(R^-1(z)))``.  The result always lies in the box.
    """
    p = np.zeros_like(z)
    q = np.zeros_like(z)
    for _ in range(DYKSTRA_ROUNDS):
        a = _project_batch(z + p, z0, spec.epsilon, spec.norm)
        p = z + p - a
        b = np.asarray(space.forward(np.clip(np.asarray(space.inverse(a + q)), 0.0, 1.0)))
        q = a + q - b
        z = b
    return z


def _pull_into_ball(space, x, cand, z0, spec):
    """Shrink ``cand - x`` just enough that ``R(cand)`` lies in the ball around ``R(x)``."""
    dist = norm_of(np.asarray(space.forward(cand)) - z0, spec.norm)
    over = dist > spec.epsilon
    if not over.any():
        return cand
    scale = np.ones_like(dist)
    scale[over] = spec.epsilon / dist[over]
    scale = scale.reshape((-1,) + (1,) * (cand.ndim - 1))
    return x + scale * (cand - x)


def run_attack(model, space, x, y, spec, kind):
    """Shared driver for PGD and SLIDE; returns an :class:`AttackResult`.

    ``space=None`` attacks raw pixels directly, bypassing the representation map.
    """
    x, single = _as_batch(x)
    if single:
        x = x[None]
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if len(y) != len(x):
        raise tc.ShapeError(f"attack: shape mismatch {list(x.shape)} vs labels {list(y.shape)}")
    z0 = x.copy() if space is None else np.asarray(space.forward(x))
    best_x = x.copy()
    best_loss = model.per_example_loss(x, y)

    boxed = space is not None and not space.is_identity
    if spec.steps > 0 and spec.epsilon > 0:
        for r in range(spec.restarts):
            z = z0.copy()
            if r > 0:
                rng = np.random.default_rng([spec.seed, r])
                z = _project_batch(z0 + _random_in_ball(rng, z0.shape, spec.epsilon, spec.norm),
                                   z0, spec.epsilon, spec.norm)
            for _ in range(spec.steps):
                g = _input_grad(model, space, z, y)
                z = _project_batch(_ascent_step(z, g, spec, kind), z0, spec.epsilon, spec.norm)
                if boxed:
                    z = _project_ball_and_box(space, z, z0, spec)
            pixels = z if space is None else np.asarray(space.inverse(z))
            cand = np.clip(pixels, 0.0, 1.0)
            if boxed:
                cand = _pull_into_ball(space, x, cand, z0, spec)
            loss = model.per_example_loss(cand, y)
            better = loss > best_loss
            best_x[better] = cand[better]
            best_loss = np.where(better, loss, best_loss)

    best_z = best_x.copy() if space is None else np.asarray(space.forward(best_x))
    if single:
        return AttackResult(best_x[0], best_z[0], z0[0], best_loss)
    return AttackResult(best_x, best_z, z0, best_loss)


def pgd_attack(model, space, x, y, spec, return_result=False):
    """Projected gradient ascent for l_inf / l_2 balls in ``space``."""
    if spec.norm is Norm.L1:
        raise ValueError("pgd_attack does not handle L1 balls; use slide_attack")
    res = run_attack(model, space, x, y, spec, "pgd")
    return res if return_result else res.x_adv


def slide_attack(model, space, x, y, spec, return_result=False):
    """Sparse sign ascent on the top-|gradient| coordinates, projected onto the l1 ball."""
    if spec.norm is not Norm.L1:
        raise ValueError("slide_attack requires an L1 AttackSpec")
    res = run_attack(model, space, x, y, spec, "slide")
    return res if return_result else res.x_adv


def attack(model, space, x, y, spec, return_result=False):
    """Dispatch on the norm: SLIDE for l_1, PGD otherwise."""
    fn = slide_attack if spec.norm is Norm.L1 else pgd_attack
    return fn(model, space, x, y, spec, return_result=return_result)


def robust_loss(model, arm, x, y, spec=None):
    """Mean cross-entropy on the arm's adversarial version of the batch."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("robust_loss: empty batch")
    res = attack(model, arm.space, x, y, spec or arm.attack, return_result=True)
    return float(np.mean(res.loss))
