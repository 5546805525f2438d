"""Walkthrough: MWU training over pixel and DCT l_inf arms on a small subset.

A shortened version of the acceptance schedule (fewer examples and steps) so
it finishes in a few minutes on one core.  Prints the arm weights chosen at
each step and the final robustness report of the averaged model and of the
ensemble of its last snapshots.
"""

import pathlib

from multirep import evaluation, repspace
from multirep.attacks import AttackSpec
from multirep.data import load_split
from multirep.model import Classifier, Ensemble
from multirep.trainers import LossArm, MwuConfig, natural_pretrain, train_mwu_scalable

root = pathlib.Path(__file__).resolve().parents[1] / "data"
split = load_split(root / "mnist5k-train-images-idx3-ubyte.gz", root / "mnist5k-train-labels-idx1-ubyte.gz",
                   root / "mnist5k-test-images-idx3-ubyte.gz", root / "mnist5k-test-labels-idx1-ubyte.gz",
                   subset=1000, test_subset=200)
split.val_x, split.val_y = split.val_x[:200], split.val_y[:200]

shape = (28, 28, 1)
arms = [
    LossArm("pixel-linf", repspace.identity_space(shape), AttackSpec("Linf", 0.3, 5),
            AttackSpec("Linf", 0.3, 20)),
    LossArm("dct-linf", repspace.dct2d_space(*shape), AttackSpec("Linf", 0.3, 5),
            AttackSpec("Linf", 0.3, 20)),
]
config = MwuConfig(eta=0.5, T=4, r=1, h=3, batch_size=32, learning_rate=0.05, seed=0)

model = natural_pretrain(Classifier(seed=0), split, epochs=3, batch_size=32)
result = train_mwu_scalable(model, arms, split, config)
for rec in result.log:
    print(f"t={rec.step} p={[round(v, 3) for v in rec.p]} val={[round(v, 3) for v in rec.val_losses]} "
          f"batches={rec.chosen_counts}")

for label, m in [("averaged", result.model),
                 ("ensemble", Ensemble(result.snapshots[-config.h:], result.model))]:
    rep = evaluation.evaluate_all(m, arms, split.test_x, split.test_y)
    print(label, {k: round(v, 1) for k, v in zip(rep.metrics(), map(rep.mean, rep.metrics()))})
