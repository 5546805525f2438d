"""Training procedures over a set of loss arms.

* :func:`train_mwu_scalable` - sampled-arm adversarial training with
  multiplicative weights driven by validation losses, returning the average
  of the last ``h`` parameter snapshots.
* :func:`train_round_robin` - arms applied to mini-batches in a fixed cycle.
* :func:`train_greedy` - each time step trains on the arm with the largest
  validation loss.
* :func:`train_single` - plain adversarial training on one arm.
* :func:`natural_pretrain` - clean epochs used as an optional warm start.
* :func:`train_mwu_exact` - the full-information loop driven by a
  cost-sensitive oracle, used by :mod:`multirep.game_lab`.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from multirep import attacks
from multirep.model import average_params, sgd_step

LOSS_CAP = 10.0


@dataclass
class LossArm:
    """One (representation space, attack) pair and its multiplicative weight."""

    name: str
    space: object
    attack: attacks.AttackSpec
    eval_attack: attacks.AttackSpec = None
    weight: float = 1.0
    index: int = 0

    def __post_init__(self):
        if self.eval_attack is None:
            self.eval_attack = self.attack


@dataclass
class MwuConfig:
    eta: float = 1.0 / LOSS_CAP
    T: int = 20
    r: int = 3
    h: int = 1
    batch_size: int = 128
    learning_rate: float = 0.05
    seed: int = 0
    loss_cap: float = LOSS_CAP
    val_strength: str = "train"  # which AttackSpec computes validation losses
    log_val_losses: bool = True  # round robin only needs them for the log

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.T < 1 or self.r < 1 or self.batch_size < 1:
            raise ValueError("T, r and batch_size must be >= 1")
        if not 1 <= self.h <= self.T:
            raise ValueError(f"window h must lie in [1, T={self.T}], got {self.h}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.val_strength not in ("train", "eval"):
            raise ValueError(f"val_strength must be 'train' or 'eval', got {self.val_strength!r}")


@dataclass
class StepRecord:
    step: int
    p: list
    val_losses: list
    chosen_counts: list
    snapshot_id: str


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, record):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def to_jsonl(self):
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.records)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def read(cls, path):
        log = cls()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    log.append(StepRecord(**json.loads(line)))
        return log


@dataclass
class TrainResult:
    model: object
    log: TrainLog
    snapshots: list


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

def normalize_weights(arms_or_weights):
    """``p_i = w_i / sum_j w_j`` for a list of arms or a raw weight vector."""
    w = _weights(arms_or_weights)
    if w.size == 0 or not np.all(w > 0) or not np.all(np.isfinite(w)):
        raise ValueError(f"weights must be finite and strictly positive, got {w}")
    return w / w.sum()


def _weights(arms_or_weights):
    seq = list(arms_or_weights) if not isinstance(arms_or_weights, np.ndarray) else arms_or_weights
    if len(seq) and isinstance(seq[0], LossArm):
        return np.array([a.weight for a in seq], dtype=np.float64)
    return np.asarray(seq, dtype=np.float64)


def update_weights(weights, losses, eta, cap=None):
    """Multiply weights by ``exp(eta * loss)``, then rescale so they sum to ``k``.

    Losses are clamped to ``[0, cap]`` when ``cap`` is given.
    """
    w = np.asarray(weights, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    if losses.shape != w.shape:
        raise ValueError(f"expected {w.size} losses, got {losses.size}")
    if np.any(np.isnan(losses)):
        raise ValueError("NaN loss passed to the weight update")
    if cap is not None:
        losses = np.clip(losses, 0.0, cap)
    elif np.any(losses < 0) or not np.all(np.isfinite(losses)):
        raise ValueError(f"losses must be finite and >= 0, got {losses}")
    # shift by the max exponent so the products never overflow
    expo = eta * losses
    new = w * np.exp(expo - expo.max())
    return new * (w.size / new.sum())


def mwu_weight_update(arms, losses, eta, cap=LOSS_CAP):
    new = update_weights([a.weight for a in arms], losses, eta, cap)
    for arm, w in zip(arms, new):
        arm.weight = float(w)


def sample_arm(p, rng):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"invalid probability vector {p}")
    return int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), p.size - 1))


# ---------------------------------------------------------------------------
# Shared training machinery
# ---------------------------------------------------------------------------

def _rngs(seed):
    return np.random.default_rng([seed, 0]), np.random.default_rng([seed, 1])


def _minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _adversarial_step(model, arm, xb, yb, lr):
    x_adv = attacks.attack(model, arm.space, xb, yb, arm.attack)
    _, grad = model.loss_and_grad(x_adv, yb)
    sgd_step(model, grad, lr)


def _check_inputs(arms, data):
    if not arms:
        raise ValueError("at least one loss arm is required")
    if len(data.train_x) == 0:
        raise ValueError("empty training stream")
    for i, arm in enumerate(arms):
        arm.index = i


def validation_losses(model, arms, data, config, chunk=500):
    """Robust loss of every arm on the validation split."""
    if len(data.val_x) == 0:
        raise ValueError("validation split is empty")
    out = []
    for arm in arms:
        spec = arm.attack if config.val_strength == "train" else arm.eval_attack
        total = 0.0
        for start in range(0, len(data.val_x), chunk):
            xb = data.val_x[start:start + chunk]
            yb = data.val_y[start:start + chunk]
            res = attacks.attack(model, arm.space, xb, yb, spec, return_result=True)
            total += float(res.loss.sum())
        out.append(total / len(data.val_x))
    return out


def _record(log, t, p, val, counts):
    log.append(StepRecord(step=t, p=[float(v) for v in p], val_losses=[float(v) for v in val],
                          chosen_counts=[int(c) for c in counts], snapshot_id=f"t{t}"))


# ---------------------------------------------------------------------------
# Trainers
# ---------------------------------------------------------------------------

def train_mwu_scalable(model, arms, data, config):
    """Sampled-arm training with validation-driven multiplicative weights.

    ``model`` is updated in place; the returned model is the average of the
    last ``config.h`` snapshots.
    """
    _check_inputs(arms, data)
    for arm in arms:
        arm.weight = 1.0
    shuffle_rng, arm_rng = _rngs(config.seed)
    log, snapshots = TrainLog(), []
    n = len(data.train_x)
    for t in range(1, config.T + 1):
        p = normalize_weights(arms)
        counts = np.zeros(len(arms), dtype=np.int64)
        for _ in range(config.r):
            for idx in _minibatches(n, config.batch_size, shuffle_rng):
                i = sample_arm(p, arm_rng)
                counts[i] += 1
                _adversarial_step(model, arms[i], data.train_x[idx], data.train_y[idx],
                                  config.learning_rate)
        snapshots.append(model.snapshot(t))
        val = validation_losses(model, arms, data, config)
        _record(log, t, p, val, counts)
        mwu_weight_update(arms, val, config.eta, config.loss_cap)
    final = average_params(snapshots[-config.h:], model)
    return TrainResult(final, log, snapshots)


def natural_pretrain(model, data, epochs, batch_size=128, learning_rate=0.05, seed=0):
    """Clean (unattacked) SGD epochs, used as a warm start before adversarial training.

    Uses its own shuffle stream so the subsequent trainer's randomness is unchanged.
    """
    rng = np.random.default_rng([seed, 2])
    for _ in range(int(epochs)):
        for idx in _minibatches(len(data.train_x), batch_size, rng):
            _, grad = model.loss_and_grad(data.train_x[idx], data.train_y[idx])
            sgd_step(model, grad, learning_rate)
    return model


def train_single(model, arm, data, config):
    """Adversarial training on one arm with the same schedule and log as the MWU trainer."""
    arms = [arm]
    _check_inputs(arms, data)
    shuffle_rng, _ = _rngs(config.seed)
    log, snapshots = TrainLog(), []
    n = len(data.train_x)
    for t in range(1, config.T + 1):
        count = 0
        for _ in range(config.r):
            for idx in _minibatches(n, config.batch_size, shuffle_rng):
                count += 1
                _adversarial_step(model, arm, data.train_x[idx], data.train_y[idx],
                                  config.learning_rate)
        snapshots.append(model.snapshot(t))
        val = validation_losses(model, arms, data, config)
        _record(log, t, [1.0], val, [count])
    final = average_params(snapshots[-config.h:], model)
    return TrainResult(final, log, snapshots)


def train_round_robin(model, arms, data, config):
    """Arms cycle ``0, 1, ..., k-1, 0, ...`` across consecutive mini-batches."""
    _check_inputs(arms, data)
    shuffle_rng, _ = _rngs(config.seed)
    log, snapshots = TrainLog(), []
    n, k = len(data.train_x), len(arms)
    index = 0
    uniform = np.full(k, 1.0 / k)
    for t in range(1, config.T + 1):
        counts = np.zeros(k, dtype=np.int64)
        for _ in range(config.r):
            for idx in _minibatches(n, config.batch_size, shuffle_rng):
                counts[index] += 1
                _adversarial_step(model, arms[index], data.train_x[idx], data.train_y[idx],
                                  config.learning_rate)
                index = (index + 1) % k
        snapshots.append(model.snapshot(t))
        val = validation_losses(model, arms, data, config) if config.log_val_losses else []
        _record(log, t, uniform, val, counts)
    return TrainResult(model.copy(), log, snapshots)


def round_robin_counts(k, n_batches):
    """Arm usage counts after ``n_batches`` cycled mini-batches."""
    counts = np.zeros(k, dtype=np.int64)
    for b in range(n_batches):
        counts[b % k] += 1
    return counts


def train_greedy(model, arms, data, config):
    """Each step trains ``r`` epochs on ``argmax_j L_j^val`` (lowest index on ties)."""
    _check_inputs(arms, data)
    shuffle_rng, _ = _rngs(config.seed)
    log, snapshots = TrainLog(), []
    n, k = len(data.train_x), len(arms)
    for t in range(1, config.T + 1):
        val = validation_losses(model, arms, data, config)
        i = int(np.argmax(val))
        counts = np.zeros(k, dtype=np.int64)
        for _ in range(config.r):
            for idx in _minibatches(n, config.batch_size, shuffle_rng):
                counts[i] += 1
                _adversarial_step(model, arms[i], data.train_x[idx], data.train_y[idx],
                                  config.learning_rate)
        snapshots.append(model.snapshot(t))
        p = np.zeros(k)
        p[i] = 1.0
        _record(log, t, p, val, counts)
    return TrainResult(model.copy(), log, snapshots)


@dataclass
class ExactTrace:
    """Per-step record of the full-information loop."""

    p: np.ndarray            # T x k normalized weights used at each step
    solutions: list          # theta_t returned by the oracle
    losses: np.ndarray       # T x k, L_i(theta_t)


def train_mwu_exact(oracle, loss_fn, k, eta, T, cap=None):
    """Multiplicative weights against a cost-sensitive oracle.

    ``oracle(p)`` returns a solution for the weighted objective and
    ``loss_fn(theta)`` its ``k`` losses.  The output distribution is uniform
    over the returned solutions (with multiplicity).
    """
    if T < 1 or k < 1:
        raise ValueError("T and k must be >= 1")
    w = np.ones(k)
    ps, sols, losses = [], [], []
    for _ in range(T):
        p = normalize_weights(w)
        theta = oracle(p)
        lt = np.asarray(loss_fn(theta), dtype=np.float64)
        ps.append(p)
        sols.append(theta)
        losses.append(lt)
        w = update_weights(w, lt, eta, cap)
    return ExactTrace(np.array(ps), sols, np.array(losses))
