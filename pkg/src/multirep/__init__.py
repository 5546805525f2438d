"""Adversarial training against several perturbation models in several representation spaces.

A numpy-only stack: a small reverse-mode autodiff engine, invertible
representation spaces (pixel, 2-D DCT), PGD and SLIDE attacks, a desk-scale
CNN, multiplicative-weights training over loss arms, exact matrix-game checks
of the underlying guarantee, and robustness evaluation.
"""

__version__ = "0.1.0"
