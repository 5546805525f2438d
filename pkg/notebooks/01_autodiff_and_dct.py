"""Walkthrough: the autodiff tape and the DCT representation space.

Run with ``python3 notebooks/01_autodiff_and_dct.py``; takes a few seconds.
"""

import numpy as np

from multirep import repspace, tensor as tc
from multirep.model import Classifier

# A tiny graph: gradients of a softmax cross-entropy loss.
logits = tc.Tensor(np.array([[1.0, 2.0, 3.0]]), requires_grad=True)
loss = tc.softmax_cross_entropy(logits, np.array([2]))
tc.backward(loss)
print(f"loss = {loss.item():.6f}")
print("d loss / d logits =", np.round(logits.grad, 6))

# The desk CNN exposes gradients with respect to parameters and inputs.
model = Classifier(seed=0)
rng = np.random.default_rng(0)
x = rng.uniform(size=(4, 28, 28, 1))
y = rng.integers(0, 10, size=4)
value, grad = model.loss_and_grad(x, y)
print(f"desk CNN: {model.num_params} parameters, loss {value:.4f}, |grad| {np.linalg.norm(grad):.4f}")

# The 2-D DCT is orthonormal: it preserves norms and its inverse is the transpose.
space = repspace.dct2d_space(28, 28, 1)
z = space.forward(x)
print("round-trip error:", np.abs(space.inverse(z) - x).max())
print("norm before / after:", np.linalg.norm(x[0]), np.linalg.norm(z[0]))

# Most of a natural image's energy sits in low frequencies; a flat image is pure DC.
flat = np.full((28, 28, 1), 0.5)
print("DC coefficient of a flat 0.5 image:", space.forward(flat)[0, 0, 0], "(= 0.5 * 28)")
