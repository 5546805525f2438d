"""Representation spaces: invertible maps from pixel images to coefficients.

A space exposes ``forward`` (pixels -> coefficients) and ``inverse``
(coefficients -> pixels).  Both accept numpy arrays or Tensors; Tensor
inputs stay on the autodiff graph so attacks can differentiate through the
inverse map.
"""

from dataclasses import dataclass

import numpy as np

from multirep import tensor as tc


def dct_matrix(n):
    """Orthonormal DCT-II matrix ``C`` with ``C[u, m] = a(u) cos(pi (2m+1) u / 2n)``."""
    if n < 1:
        raise ValueError(f"DCT size must be >= 1, got {n}")
    m = np.arange(n)
    u = m[:, None]
    c = np.cos(np.pi * (2 * m[None, :] + 1) * u / (2 * n))
    c *= np.sqrt(2.0 / n)
    c[0] = np.sqrt(1.0 / n)
    return c


@dataclass(frozen=True, eq=False)
class RepresentationSpace:
    """Invertible linear map applied per channel to ``H x W x C`` images.

    ``row_mat``/``col_mat`` are ``None`` for the identity space.
    """

    name: str
    shape: tuple = None
    row_mat: np.ndarray = None
    col_mat: np.ndarray = None
    is_linear: bool = True

    @property
    def is_identity(self):
        return self.row_mat is None

    def _check(self, x):
        if self.shape is None:
            return
        got = tuple(x.shape[-3:]) if len(x.shape) >= 3 else tuple(x.shape)
        if got != self.shape:
            raise tc.ShapeError(f"{self.name}: shape mismatch {list(x.shape)} vs {list(self.shape)}")

    def forward(self, x):
        return self._apply(x, self.row_mat, self.col_mat)

    def inverse(self, z):
        if self.is_identity:
            return self._apply(z, None, None)
        return self._apply(z, self.row_mat.T, self.col_mat.T)

    def _apply(self, x, row_mat, col_mat):
        self._check(x)
        if row_mat is None:
            return x
        if isinstance(x, tc.Tensor):
            if x.data.ndim == 3:
                out = tc.separable_transform(tc.reshape(x, (1,) + x.shape), row_mat, col_mat)
                return tc.reshape(out, x.shape)
            return tc.separable_transform(x, row_mat, col_mat)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            return np.einsum("um,mkc,vk->uvc", row_mat, x, col_mat, optimize=True)
        return np.einsum("um,nmkc,vk->nuvc", row_mat, x, col_mat, optimize=True)


def identity_space(shape=None):
    return RepresentationSpace(name="pixel", shape=None if shape is None else tuple(shape))


def dct2d_space(height, width, channels=1):
    """Per-channel orthonormal 2-D DCT-II; the inverse is its transpose."""
    if height < 1 or width < 1 or channels < 1:
        raise ValueError(f"dct2d_space: dimensions must be >= 1, got {(height, width, channels)}")
    return RepresentationSpace(
        name="dct",
        shape=(int(height), int(width), int(channels)),
        row_mat=dct_matrix(height),
        col_mat=dct_matrix(width),
    )


def forward(space, x):
    return space.forward(x)


def inverse(space, z):
    return space.inverse(z)


def make_space(name, shape):
    """Look up a space by name (``"pixel"`` or ``"dct"``) for images of ``shape``."""
    if name == "pixel":
        return identity_space(shape)
    if name == "dct":
        return dct2d_space(*shape)
    raise ValueError(f"unknown representation space {name!r}")
