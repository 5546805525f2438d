"""Small reverse-mode autodiff engine over float64 numpy arrays.

Every operation returns a new :class:`Tensor` that remembers its operands
and a closure pushing the output gradient back into them.  The graph is
rebuilt on every forward pass (tape style) and walked in reverse
topological order by :func:`backward`.

Only scalar broadcasting is supported; bias addition has its own op so the
backward rules stay explicit.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), op=""):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = None
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, s):
        return mul_scalar(self, s)

    __rmul__ = __mul__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __sub__(self, other):
        return add(self, mul_scalar(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t, g, fresh=False):
    # fresh=True hands over ownership of a newly allocated array
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if fresh else np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _result(data, parents, backward_fn, op):
    parents = tuple(parents)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), op=op)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    return out


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {list(a.shape)} vs {list(b.shape)}")


# ---------------------------------------------------------------------------
# Elementwise and linear algebra
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "add")

    def _bw(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.data + b.data, (a, b), _bw, "add")


def mul(a, b):
    """Elementwise product of equal-shaped tensors."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "mul")

    def _bw(g):
        _accumulate(a, g * b.data, fresh=True)
        _accumulate(b, g * a.data, fresh=True)

    return _result(a.data * b.data, (a, b), _bw, "mul")


def mul_scalar(a, s):
    a = as_tensor(a)
    s = float(s)

    def _bw(g):
        _accumulate(a, g * s, fresh=True)

    return _result(a.data * s, (a,), _bw, "mul_scalar")


def sum(a):  # noqa: A001 - mirrors the numpy name on purpose
    a = as_tensor(a)

    def _bw(g):
        _accumulate(a, np.full(a.shape, float(g)))

    return _result(np.sum(a.data), (a,), _bw, "sum")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {list(a.shape)} vs {list(b.shape)}")

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T, fresh=True)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g, fresh=True)

    return _result(a.data @ b.data, (a, b), _bw, "matmul")


def add_bias(a, bias):
    """Add a vector along the last axis of ``a``."""
    a, bias = as_tensor(a), as_tensor(bias)
    if bias.data.ndim != 1 or a.shape[-1] != bias.shape[0]:
        raise ShapeError(f"add_bias: shape mismatch {list(a.shape)} vs {list(bias.shape)}")

    def _bw(g):
        _accumulate(a, g)
        if bias.requires_grad:
            _accumulate(bias, g.reshape(-1, bias.shape[0]).sum(axis=0))

    return _result(a.data + bias.data, (a, bias), _bw, "add_bias")


def relu(a):
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def _bw(g):
        _accumulate(a, np.where(a.data > 0, g, 0.0), fresh=True)

    return _result(out, (a,), _bw, "relu")


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {list(a.shape)} as {list(shape)}") from None

    def _bw(g):
        _accumulate(a, g.reshape(a.shape))

    return _result(out, (a,), _bw, "reshape")


def flatten(a):
    """Collapse every axis but the leading (batch) one."""
    a = as_tensor(a)
    if a.data.ndim < 1:
        raise ShapeError(f"flatten: needs a batch axis, got shape {list(a.shape)}")
    return reshape(a, (a.shape[0], -1))


def separable_transform(x, row_mat, col_mat):
    """Apply ``row_mat @ X_c @ col_mat.T`` to every (batch, channel) slice of an NHWC tensor.

    The matrices are constants; the gradient flows to ``x`` only.
    """
    x = as_tensor(x)
    row_mat = np.asarray(row_mat, dtype=np.float64)
    col_mat = np.asarray(col_mat, dtype=np.float64)
    if x.data.ndim != 4 or row_mat.shape[1] != x.shape[1] or col_mat.shape[1] != x.shape[2]:
        raise ShapeError(
            f"separable_transform: shape mismatch {list(x.shape)} vs "
            f"{list(row_mat.shape)}, {list(col_mat.shape)}"
        )

    def _bw(g):
        _accumulate(x, np.einsum("um,nuvc,vk->nmkc", row_mat, g, col_mat, optimize=True), fresh=True)

    out = np.einsum("um,nmkc,vk->nuvc", row_mat, x.data, col_mat, optimize=True)
    return _result(out, (x,), _bw, "separable_transform")


# ---------------------------------------------------------------------------
# Convolution and pooling (NHWC layout, kernels as kh x kw x C_in x C_out)
# ---------------------------------------------------------------------------

def _im2col(x, kh, kw, stride):
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # N, Ho, Wo, C, kh, kw
    win = win[:, ::stride, ::stride]
    n, ho, wo, c = win.shape[:4]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c)
    return cols, ho, wo


def conv2d(x, kernel, stride=1):
    """Valid (unpadded) 2-D cross-correlation."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    stride = int(stride)
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if x.data.ndim != 4 or kernel.data.ndim != 4 or x.shape[3] != kernel.shape[2]:
        raise ShapeError(f"conv2d: shape mismatch {list(x.shape)} vs {list(kernel.shape)}")
    kh, kw, cin, cout = kernel.shape
    n, h, w, _ = x.shape
    if h < kh or w < kw:
        raise ShapeError(f"conv2d: shape mismatch {list(x.shape)} vs {list(kernel.shape)}")

    cols, ho, wo = _im2col(x.data, kh, kw, stride)
    kmat = kernel.data.reshape(kh * kw * cin, cout)
    out = (cols @ kmat).reshape(n, ho, wo, cout)

    def _bw(g):
        g2 = g.reshape(n * ho * wo, cout)
        if kernel.requires_grad:
            _accumulate(kernel, (cols.T @ g2).reshape(kernel.shape), fresh=True)
        if x.requires_grad:
            gcols = (g2 @ kmat.T).reshape(n, ho, wo, kh, kw, cin)
            gx = np.zeros(x.shape)
            hs = (ho - 1) * stride + 1
            ws = (wo - 1) * stride + 1
            for i in range(kh):
                for j in range(kw):
                    gx[:, i:i + hs:stride, j:j + ws:stride, :] += gcols[:, :, :, i, j, :]
            _accumulate(x, gx, fresh=True)

    return _result(out, (x, kernel), _bw, "conv2d")


def max_pool2d(x, window=2):
    """Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped.

    The gradient goes to the first maximal entry of each window (row-major order).
    """
    x = as_tensor(x)
    window = int(window)
    if window < 1:
        raise ValueError(f"max_pool2d: window must be >= 1, got {window}")
    if x.data.ndim != 4 or x.shape[1] < window or x.shape[2] < window:
        raise ShapeError(f"max_pool2d: shape mismatch {list(x.shape)} vs window {window}")
    n, h, w, c = x.shape
    ho, wo = h // window, w // window
    offsets = [(i, j) for i in range(window) for j in range(window)]

    def view(arr, i, j):
        return arr[:, i:i + ho * window:window, j:j + wo * window:window, :]

    out = view(x.data, 0, 0).copy()
    winner = np.zeros(out.shape, dtype=np.int8 if window * window < 128 else np.int32)
    for k, (i, j) in enumerate(offsets[1:], start=1):
        cand = view(x.data, i, j)
        better = cand > out
        np.copyto(out, cand, where=better)
        winner[better] = k

    def _bw(g):
        gx = np.zeros(x.shape)
        for k, (i, j) in enumerate(offsets):
            view(gx, i, j)[...] = np.where(winner == k, g, 0.0)
        _accumulate(x, gx, fresh=True)

    return _result(out, (x,), _bw, "max_pool2d")


# ---------------------------------------------------------------------------
# Probabilities and losses
# ---------------------------------------------------------------------------

def log_softmax_np(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_np(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_labels(logits, labels, op):
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.data.ndim != 2:
        raise ShapeError(f"{op}: expected batch x classes, got {list(logits.shape)}")
    if logits.shape[0] == 0:
        raise ValueError(f"{op}: empty batch")
    if labels.shape[0] != logits.shape[0]:
        raise ShapeError(f"{op}: shape mismatch {list(logits.shape)} vs labels {list(labels.shape)}")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError(f"{op}: labels must lie in [0, {logits.shape[1]})")
    return labels


def softmax(logits):
    logits = as_tensor(logits)
    p = softmax_np(logits.data)

    def _bw(g):
        _accumulate(logits, p * (g - (g * p).sum(axis=-1, keepdims=True)))

    return _result(p, (logits,), _bw, "softmax")


def softmax_cross_entropy(logits, labels):
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    logits = as_tensor(logits)
    labels = _check_labels(logits, labels, "softmax_cross_entropy")
    n = logits.shape[0]
    logp = log_softmax_np(logits.data)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def _bw(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        _accumulate(logits, d * (float(g) / n))

    return _result(loss, (logits,), _bw, "softmax_cross_entropy")


def nll_of_probs(probs, labels):
    """Mean ``-log p[label]`` for a batch of probability rows."""
    probs = as_tensor(probs)
    labels = _check_labels(probs, labels, "nll_of_probs")
    n = probs.shape[0]
    rows = np.arange(n)
    picked = np.maximum(probs.data[rows, labels], np.finfo(np.float64).tiny)

    def _bw(g):
        d = np.zeros(probs.shape)
        d[rows, labels] = -1.0 / picked
        _accumulate(probs, d * (float(g) / n))

    return _result(-np.log(picked).mean(), (probs,), _bw, "nll_of_probs")


# ---------------------------------------------------------------------------
# Backward pass and gradient checking
# ---------------------------------------------------------------------------

def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root):
    """Populate ``.grad`` of every requires-grad leaf reachable from a scalar root.

    Gradients accumulate into existing ``.grad`` slots of leaves, so callers
    reusing parameter tensors across passes must zero them first.
    """
    if root.data.size != 1 or root.data.ndim > 1:
        raise ShapeError(f"backward: root must be scalar, got shape {list(root.shape)}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    root.grad = np.ones(root.shape)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def finite_diff_check(f, x, h=1e-5):
    """Max over coordinates of ``|analytic - central| / max(1, |analytic|)``.

    ``f`` maps a Tensor to a scalar Tensor; ``x`` is a numpy array or Tensor.
    """
    if h <= 0:
        raise ValueError("finite_diff_check: h must be positive")
    x0 = np.array(as_tensor(x).data, dtype=np.float64, copy=True)
    leaf = Tensor(x0.copy(), requires_grad=True)
    out = f(leaf)
    backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x0)

    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(x0)).item()
        flat[i] = orig - h
        fm = f(Tensor(x0)).item()
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2.0 * h)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
