"""Robustness metrics: natural, per-arm adversarial, minimum and union accuracy."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from multirep import attacks

METRIC_MIN = "min_accuracy"
METRIC_UNION = "union_accuracy"
METRIC_NATURAL = "natural_accuracy"


def _chunks(n, size):
    for start in range(0, n, size):
        yield slice(start, start + size)


def correct_mask(model, x, y, chunk=500):
    y = np.asarray(y)
    out = np.empty(len(y), dtype=bool)
    for s in _chunks(len(y), chunk):
        out[s] = model.predict(x[s]) == y[s]
    return out


def natural_accuracy(model, x, y):
    if len(x) == 0:
        raise ValueError("natural_accuracy: empty dataset")
    return 100.0 * correct_mask(model, x, y).mean()


def adversarial_correct(model, arm, x, y, spec=None, chunk=500):
    """Per-example flag: correct on the clean input and after the arm's attack.

    The clean input is itself a feasible perturbation, so a misclassified
    clean example counts as a successful attack.
    """
    spec = spec or arm.eval_attack
    y = np.asarray(y)
    out = np.empty(len(y), dtype=bool)
    for s in _chunks(len(y), chunk):
        x_adv = attacks.attack(model, arm.space, x[s], y[s], spec)
        out[s] = (model.predict(x_adv) == y[s]) & (model.predict(x[s]) == y[s])
    return out


def adversarial_accuracy(model, arm, x, y, spec=None):
    if len(x) == 0:
        raise ValueError("adversarial_accuracy: empty dataset")
    return 100.0 * adversarial_correct(model, arm, x, y, spec).mean()


def union_attack_accuracy(model, arms, x, y, specs=None):
    """An example counts only if no arm's attack flips it (already-wrong examples count as flipped)."""
    if not arms:
        raise ValueError("union_attack_accuracy: at least one arm required")
    specs = specs or [None] * len(arms)
    ok = np.ones(len(y), dtype=bool)
    for arm, spec in zip(arms, specs):
        ok &= adversarial_correct(model, arm, x, y, spec)
    return 100.0 * ok.mean()


def evaluate_once(model, arms, x, y, seed=0, restarts=None):
    """All metrics for one evaluation seed; the seed feeds the attacks' restart noise."""
    per_arm_ok = {}
    for arm in arms:
        spec = arm.eval_attack.with_(seed=seed)
        if restarts is not None:
            spec = spec.with_(restarts=restarts)
        per_arm_ok[arm.name] = adversarial_correct(model, arm, x, y, spec)
    natural = correct_mask(model, x, y)
    row = {name: 100.0 * ok.mean() for name, ok in per_arm_ok.items()}
    row[METRIC_MIN] = min(row[name] for name in per_arm_ok)
    union = np.logical_and.reduce(list(per_arm_ok.values()))
    row[METRIC_UNION] = 100.0 * union.mean()
    row[METRIC_NATURAL] = 100.0 * natural.mean()
    return row


@dataclass
class RobustnessReport:
    arm_names: list
    seeds: list
    per_seed: list = field(default_factory=list)   # one metric dict per seed

    def metrics(self):
        return list(self.arm_names) + [METRIC_MIN, METRIC_UNION, METRIC_NATURAL]

    def values(self, metric):
        return np.array([row[metric] for row in self.per_seed], dtype=np.float64)

    def mean(self, metric):
        return float(self.values(metric).mean())

    def std(self, metric):
        v = self.values(metric)
        return float(v.std(ddof=1)) if len(v) > 1 else 0.0

    @property
    def per_arm(self):
        return {name: self.mean(name) for name in self.arm_names}

    @property
    def min_accuracy(self):
        return self.mean(METRIC_MIN)

    @property
    def union_accuracy(self):
        return self.mean(METRIC_UNION)

    @property
    def natural_accuracy(self):
        return self.mean(METRIC_NATURAL)

    def ordering_holds(self):
        """``union <= min <= every arm <= 100`` and all values in [0, 100], per seed."""
        for row in self.per_seed:
            arm_vals = [row[a] for a in self.arm_names]
            if not row[METRIC_UNION] <= row[METRIC_MIN] <= min(arm_vals):
                return False
            if any(not 0.0 <= row[m] <= 100.0 for m in self.metrics()):
                return False
        return True

    def as_dict(self):
        return {m: {"mean": self.mean(m), "std": self.std(m),
                    "per_seed": [float(v) for v in self.values(m)]}
                for m in self.metrics()}

    def to_json(self, path=None):
        payload = {"seeds": list(self.seeds), "arms": list(self.arm_names),
                   "metrics": self.as_dict()}
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "mean", "std"])
            for m in self.metrics():
                w.writerow([m, f"{self.mean(m):.6f}", f"{self.std(m):.6f}"])

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        metrics = payload["metrics"]
        n = len(payload["seeds"])
        rows = [{m: metrics[m]["per_seed"][i] for m in metrics} for i in range(n)]
        return cls(payload["arms"], payload["seeds"], rows)


def evaluate_all(model, arms, x, y, seeds=(0,), restarts=None):
    seeds = list(seeds)
    if not seeds:
        raise ValueError("evaluate_all: at least one seed required")
    report = RobustnessReport([a.name for a in arms], seeds)
    for seed in seeds:
        report.per_seed.append(evaluate_once(model, arms, x, y, seed, restarts))
    return report


def merge_reports(reports):
    """Concatenate per-seed rows of reports over the same arms (e.g. one per training seed)."""
    reports = list(reports)
    if not reports:
        raise ValueError("merge_reports: nothing to merge")
    names = reports[0].arm_names
    if any(r.arm_names != names for r in reports):
        raise ValueError("merge_reports: reports cover different arms")
    merged = RobustnessReport(list(names), [s for r in reports for s in r.seeds])
    for r in reports:
        merged.per_seed.extend(r.per_seed)
    return merged


def comparison_table(reports):
    """Rows ``metric -> {label: 'mean ± std'}`` for side-by-side reports."""
    first = next(iter(reports.values()))
    table = {}
    for m in first.metrics():
        table[m] = {label: f"{r.mean(m):.2f} ± {r.std(m):.2f}" for label, r in reports.items()}
    return table
