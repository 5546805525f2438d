"""Walkthrough: PGD and SLIDE in pixel and DCT coordinates.

A randomly initialized desk CNN is attacked with each of the six default
MNIST arms.  The script prints the loss increase, the distance of the emitted
example in the arm's own coordinates, and its pixel-space l_inf distance,
which shows how far a DCT-bounded perturbation can move raw pixels.
"""

import pathlib

import numpy as np

from multirep import attacks
from multirep.config import default_arms_mnist
from multirep.data import load_idx
from multirep.model import Classifier

root = pathlib.Path(__file__).resolve().parents[1] / "data"
x, y = load_idx(root / "mnist5k-test-images-idx3-ubyte.gz", root / "mnist5k-test-labels-idx1-ubyte.gz")
x, y = x[:16], y[:16]
model = Classifier(seed=0)
clean_loss = model.per_example_loss(x, y).mean()

print(f"{'arm':<11} {'eps':>5} {'loss':>7} {'own-dist':>9} {'pixel-linf':>10}")
for arm in default_arms_mnist():
    res = attacks.attack(model, arm.space, x, y, arm.attack, return_result=True)
    own = attacks.norm_of(res.z_adv - res.center, arm.attack.norm).max()
    pix = np.abs(res.x_adv - x).reshape(len(x), -1).max(axis=1).max()
    print(f"{arm.name:<11} {arm.attack.epsilon:5.1f} {res.loss.mean():7.3f} {own:9.3f} {pix:10.3f}")
print(f"clean loss {clean_loss:.3f}")
