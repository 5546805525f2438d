"""Finite matrix games for checking the multiplicative-weights guarantee exactly.

Rows are candidate parameter settings, columns are loss functions, and an
entry ``M[row, i]`` is ``L_i(theta_row)`` in ``[0, R]``.  Because the row set
is finite, the cost-sensitive oracle and the pure minimax value can be
computed by enumeration, so every inequality in the regret argument can be
evaluated numerically.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from multirep import tensor as tc
from multirep.trainers import train_mwu_exact

SLACK = 1e-9


@dataclass(frozen=True)
class MatrixGame:
    losses: np.ndarray
    R: float = 1.0

    def __post_init__(self):
        m = np.array(self.losses, dtype=np.float64, copy=True)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise ValueError(f"game matrix must be 2-D and nonempty, got shape {m.shape}")
        if self.R <= 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if np.any(m < 0) or np.any(m > self.R):
            raise ValueError(f"game entries must lie in [0, {self.R}]")
        m.setflags(write=False)
        object.__setattr__(self, "losses", m)

    @property
    def m(self):
        return self.losses.shape[0]

    @property
    def k(self):
        return self.losses.shape[1]

    @classmethod
    def random(cls, rng, max_rows=30, max_cols=6, R=1.0):
        m = int(rng.integers(1, max_rows + 1))
        k = int(rng.integers(1, max_cols + 1))
        return cls(rng.uniform(0.0, R, size=(m, k)), R)


@dataclass(frozen=True)
class OracleSlack:
    """Additive oracle error.  ``adversarial=True`` returns the worst row within ``delta``."""

    delta: float = 0.0
    adversarial: bool = False

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")


@dataclass
class MixedSolution:
    rows: list                       # chosen row per step (multiplicity kept)
    distribution: np.ndarray         # probability of each game row
    expected_losses: np.ndarray      # E_{theta~P} L_i(theta) per column


@dataclass
class GameTrace:
    p: np.ndarray          # T x k
    rows: list             # chosen row per step
    losses: np.ndarray     # T x k column losses of the chosen rows
    delta: float = 0.0


def _check_distribution(p, k):
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (k,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"invalid column distribution {p} for k={k}")
    return p


def exact_cost_sensitive_oracle(game, p, slack=None):
    """Row minimizing ``sum_i p_i M[row, i]``; lowest index on ties.

    With an adversarial ``slack`` the returned row is the worst one whose
    weighted loss is still within ``delta`` of the minimum.
    """
    p = _check_distribution(p, game.k)
    scores = game.losses @ p
    if slack is not None and slack.adversarial and slack.delta > 0:
        ok = np.flatnonzero(scores <= scores.min() + slack.delta)
        return int(ok[np.argmax(scores[ok])])
    return int(np.argmin(scores))


def pure_minimax(game):
    """``min_row max_i M[row, i]`` and the minimizing row."""
    worst = game.losses.max(axis=1)
    row = int(np.argmin(worst))
    return float(worst[row]), row


def run_mwu_on_game(game, eta, T, slack=None):
    if eta <= 0 or T < 1:
        raise ValueError("eta must be > 0 and T >= 1")
    slack = slack or OracleSlack()
    exact = train_mwu_exact(
        oracle=lambda p: exact_cost_sensitive_oracle(game, p, slack),
        loss_fn=lambda row: game.losses[row],
        k=game.k, eta=eta, T=T, cap=game.R,
    )
    rows = list(exact.solutions)
    dist = np.bincount(rows, minlength=game.m) / len(rows)
    sol = MixedSolution(rows, dist, exact.losses.mean(axis=0))
    return sol, GameTrace(exact.p, rows, exact.losses, slack.delta)


def theorem_schedule(eps, R, k):
    """``eta = eps / (2R)`` and ``T = ceil(16 R^2 ln(max(k, 2)) / eps^2)``."""
    T = int(math.ceil(16.0 * R * R * math.log(max(k, 2)) / (eps * eps)))
    return eps / (2.0 * R), T


@dataclass
class TheoremReport:
    minimax: float
    achieved: float
    eps: float
    delta: float
    margin: float
    T: int
    eta: float
    passed: bool
    trace: GameTrace = field(default=None, repr=False)

    def as_dict(self):
        return {"minimax": self.minimax, "achieved": self.achieved, "eps": self.eps,
                "delta": self.delta, "margin": self.margin, "T": self.T, "eta": self.eta,
                "pass": self.passed}


def verify_theorem1(game, eps, slack=None):
    """Run the schedule and check ``max_i E_P L_i <= minimax + eps + delta``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    slack = slack or OracleSlack()
    eta, T = theorem_schedule(eps, game.R, game.k)
    sol, trace = run_mwu_on_game(game, eta, T, slack)
    value, _ = pure_minimax(game)
    achieved = float(sol.expected_losses.max())
    margin = value + eps + slack.delta - achieved
    return TheoremReport(value, achieved, eps, slack.delta, margin, T, eta, margin >= 0, trace)


@dataclass
class RegretReport:
    regret_margin: float     # tightest slack of the per-column regret inequality
    oracle_margin: float     # tightest slack of the per-step oracle inequality
    passed: bool


def verify_regret_chain(trace, game, eta):
    """Check the averaged regret bound for every column and the oracle bound at every step.

    Regret: ``(1/T) sum_t p_t . L(theta_t) >= (1-eta)(1/T) sum_t L_i(theta_t) - 2R ln k / (eta T)``.
    Oracle: ``p_t . L(theta_t) <= min_row p_t . M[row] + delta``.
    """
    T, k = trace.losses.shape
    played = np.einsum("tj,tj->t", trace.p, trace.losses)
    lhs = played.mean()
    rhs = (1.0 - eta) * trace.losses.mean(axis=0) - 2.0 * game.R * math.log(k) / (eta * T)
    regret_margin = float((lhs - rhs).min())
    best = (trace.p @ game.losses.T).min(axis=1)
    oracle_margin = float((best + trace.delta - played).min())
    ok = regret_margin >= -SLACK and oracle_margin >= -SLACK
    return RegretReport(regret_margin, oracle_margin, ok)


def mixed_worst_column(game, row_mix):
    """Worst-column expected loss of a mixed row strategy."""
    row_mix = np.asarray(row_mix, dtype=np.float64)
    return float((row_mix @ game.losses).max())


# ---------------------------------------------------------------------------
# Convex parameterization: linear softmax rows, enumerated perturbation grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearTask:
    """Tiny dataset, candidate linear softmax models and ``k`` finite perturbation sets."""

    x: np.ndarray            # n x d
    y: np.ndarray            # n
    thetas: np.ndarray       # m x (d + 1) x c  (last input row is the bias)
    grids: tuple             # k arrays, each g x d of additive perturbations

    def logits(self, theta, x):
        return x @ theta[:-1] + theta[-1]

    def probs(self, theta, x):
        return tc.softmax_np(self.logits(theta, x))

    def robust_loss(self, theta, i):
        """Mean over examples of the max cross-entropy over grid ``i``."""
        return self._robust(lambda xp: self.probs(theta, xp), i)

    def ensemble_robust_loss(self, thetas, i):
        return self._robust(lambda xp: np.mean([self.probs(t, xp) for t in thetas], axis=0), i)

    def _robust(self, prob_fn, i):
        grid = self.grids[i]
        n = len(self.x)
        xp = (self.x[:, None, :] + grid[None, :, :]).reshape(-1, self.x.shape[1])
        p = prob_fn(xp).reshape(n, len(grid), -1)
        picked = p[np.arange(n), :, self.y]
        return float((-np.log(np.maximum(picked, np.finfo(np.float64).tiny))).max(axis=1).mean())

    def game(self):
        k = len(self.grids)
        M = np.array([[self.robust_loss(th, i) for i in range(k)] for th in self.thetas])
        R = max(float(M.max()), 1e-12)
        return MatrixGame(M, R)


def linear_grid(eps, norm="Linf", d=2, points=3):
    """Perturbation grid inside an ``eps`` ball: a ``points^d`` lattice (``Linf``)
    or its lattice points that fall in the ``L1``/``L2`` ball."""
    axis = np.linspace(-eps, eps, points)
    mesh = np.stack(np.meshgrid(*[axis] * d, indexing="ij"), axis=-1).reshape(-1, d)
    if norm == "L2":
        mesh = mesh[np.linalg.norm(mesh, axis=1) <= eps * (1 + 1e-12)]
    elif norm == "L1":
        mesh = mesh[np.abs(mesh).sum(axis=1) <= eps * (1 + 1e-12)]
    return mesh


def _axis_grid(a, b):
    """3x3 lattice on ``[-a, a] x [-b, b]``."""
    ax, bx = np.linspace(-a, a, 3), np.linspace(-b, b, 3)
    return np.stack(np.meshgrid(ax, bx, indexing="ij"), -1).reshape(-1, 2)


def random_linear_task(rng, n=12, m=8, wide=1.5, narrow=0.05):
    """Two-feature, two-class task whose columns reward different rows.

    Each row leans on one feature (angle drawn from ``[0, pi/2]``) and the
    two 9-point grids stretch along opposite axes, so MWU traces tend to
    visit more than one row.
    """
    x = rng.normal(size=(n, 2))
    y = (x.sum(axis=1) > 0).astype(int)
    phi = rng.uniform(0, np.pi / 2, size=m)
    radius = rng.uniform(1, 4, size=m)
    thetas = np.zeros((m, 3, 2))
    thetas[:, 0, 1] = radius * np.cos(phi)
    thetas[:, 1, 1] = radius * np.sin(phi)
    thetas[:, 2, 1] = rng.normal(scale=0.2, size=m)
    grids = (_axis_grid(wide, narrow), _axis_grid(narrow, wide))
    return LinearTask(x, y, thetas, grids)


@dataclass
class ConvexEnsembleReport:
    ensemble_losses: np.ndarray
    expected_losses: np.ndarray
    margin: float
    passed: bool
    distinct_members: int = 1


def verify_convex_ensemble(trace, task):
    """``L_i(f_ensemble) <= E_{theta~P} L_i(theta)`` for every column ``i``."""
    thetas = [task.thetas[r] for r in trace.rows]
    k = len(task.grids)
    ens = np.array([task.ensemble_robust_loss(thetas, i) for i in range(k)])
    expected = np.array([np.mean([task.robust_loss(th, i) for th in thetas]) for i in range(k)])
    margin = float((expected - ens).min())
    return ConvexEnsembleReport(ens, expected, margin, margin >= -SLACK, len(set(trace.rows)))


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def random_game_suite(n_games=100, seed=0, max_rows=30, max_cols=6, R=1.0):
    rng = np.random.default_rng(seed)
    return [MatrixGame.random(rng, max_rows, max_cols, R) for _ in range(n_games)]


def run_game_suite(n_games=100, eps=0.1, deltas=(0.0, 0.05), seed=0):
    """Theorem and regret-chain checks over a seeded random suite.

    Returns a list of per-game dicts; nonzero ``delta`` runs use the
    adversarial oracle that spends the whole slack.
    """
    out = []
    for gi, game in enumerate(random_game_suite(n_games, seed)):
        for delta in deltas:
            slack = OracleSlack(delta, adversarial=delta > 0)
            rep = verify_theorem1(game, eps, slack)
            chain = verify_regret_chain(rep.trace, game, rep.eta)
            row = rep.as_dict()
            row.update(game=gi, rows=game.m, cols=game.k, regret_margin=chain.regret_margin,
                       oracle_margin=chain.oracle_margin)
            row["pass"] = bool(rep.passed and chain.passed)
            out.append(row)
    return out


def run_convex_suite(n_traces=20, seed=0, members=5):
    """Convex-ensemble checks on seeded linear tasks; each trace has ``members`` steps."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_traces):
        task = random_linear_task(rng)
        game = task.game()
        _, trace = run_mwu_on_game(game, eta=2.0 / game.R, T=members)
        out.append(verify_convex_ensemble(trace, task))
    return out
