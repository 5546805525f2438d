"""Compact convolutional classifier with a flat parameter vector.

Parameters live in one contiguous float64 vector so that snapshots,
averaging and SGD are plain array arithmetic.  Each forward pass wraps the
per-layer slices in fresh :class:`~multirep.tensor.Tensor` leaves.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from multirep import tensor as tc

DEFAULT_ARCHITECTURE = (
    {"type": "conv", "filters": 16, "kernel": 3, "stride": 1},
    {"type": "relu"},
    {"type": "pool", "window": 2},
    {"type": "conv", "filters": 32, "kernel": 3, "stride": 1},
    {"type": "relu"},
    {"type": "pool", "window": 2},
    {"type": "flatten"},
    {"type": "dense", "units": 10},
)

CHECKPOINT_MAGIC = b"MREPCKPT"
CHECKPOINT_VERSION = 1

_LAYER_KEYS = {
    "conv": {"filters", "kernel", "stride"},
    "relu": set(),
    "pool": {"window"},
    "flatten": set(),
    "dense": {"units"},
}


def _layer_plan(architecture, input_shape):
    """Resolve output shapes and parameter slots for each layer."""
    shape = tuple(input_shape)
    plan = []
    offset = 0
    for layer in architecture:
        kind = layer.get("type")
        if kind not in _LAYER_KEYS:
            raise ValueError(f"unknown layer type {kind!r}")
        extra = set(layer) - _LAYER_KEYS[kind] - {"type"}
        if extra:
            raise ValueError(f"layer {kind!r}: unknown keys {sorted(extra)}")
        slots = []
        if kind == "conv":
            if len(shape) != 3:
                raise ValueError(f"conv layer needs an HxWxC input, got {shape}")
            k, f, s = int(layer["kernel"]), int(layer["filters"]), int(layer.get("stride", 1))
            h, w, c = shape
            slots = [("weight", (k, k, c, f), k * k * c), ("bias", (f,), None)]
            shape = ((h - k) // s + 1, (w - k) // s + 1, f)
        elif kind == "pool":
            win = int(layer["window"])
            h, w, c = shape
            shape = (h // win, w // win, c)
        elif kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif kind == "dense":
            if len(shape) != 1:
                raise ValueError(f"dense layer needs a flat input, got {shape}")
            u = int(layer["units"])
            slots = [("weight", (shape[0], u), shape[0]), ("bias", (u,), None)]
            shape = (u,)
        if any(d < 1 for d in shape):
            raise ValueError(f"layer {kind!r} produces an empty output {shape}")
        entries = []
        for name, pshape, fan_in in slots:
            size = int(np.prod(pshape))
            entries.append((name, pshape, offset, size, fan_in))
            offset += size
        plan.append((dict(layer), entries))
    return plan, shape, offset


class Classifier:
    """Feed-forward network ``f_theta`` over NHWC inputs.

    ``params`` is a flat float64 vector; layer weights are views into it.
    """

    def __init__(self, architecture=DEFAULT_ARCHITECTURE, input_shape=(28, 28, 1), params=None,
                 seed=0):
        self.architecture = tuple(dict(layer) for layer in architecture)
        self.input_shape = tuple(int(d) for d in input_shape)
        self._plan, out_shape, n_params = _layer_plan(self.architecture, self.input_shape)
        if len(out_shape) != 1:
            raise ValueError(f"network must end in a flat output, got {out_shape}")
        self.num_classes = out_shape[0]
        if params is None:
            params = self._init_params(n_params, seed)
        params = np.array(params, dtype=np.float64, copy=True).reshape(-1)
        if params.size != n_params:
            raise ValueError(f"expected {n_params} parameters, got {params.size}")
        self.params = params

    def _init_params(self, n_params, seed):
        # He-scaled normal weights, zero biases
        rng = np.random.default_rng(seed)
        theta = np.zeros(n_params)
        for _, entries in self._plan:
            for name, pshape, off, size, fan_in in entries:
                if name == "weight":
                    theta[off:off + size] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size)
        return theta

    @property
    def num_params(self):
        return self.params.size

    def copy(self):
        return Classifier(self.architecture, self.input_shape, self.params)

    def with_params(self, params):
        return Classifier(self.architecture, self.input_shape, params)

    def param_slices(self):
        """Yield ``(layer_index, name, shape, offset, size)`` for every parameter block."""
        for li, (_, entries) in enumerate(self._plan):
            for name, pshape, off, size, _ in entries:
                yield li, name, pshape, off, size

    def forward(self, x, params=None):
        """Logits for an ``N x H x W x C`` batch (a single example is promoted to N=1).

        ``params`` may be a flat Tensor leaf; when omitted the stored parameters
        are used as constants.
        """
        x = tc.as_tensor(x)
        if x.data.ndim == len(self.input_shape):
            x = tc.reshape(x, (1,) + x.shape)
        if tuple(x.shape[1:]) != self.input_shape:
            raise tc.ShapeError(
                f"forward: shape mismatch {list(x.shape[1:])} vs {list(self.input_shape)}"
            )
        blocks = self._param_tensors(params)
        h = x
        for li, (layer, entries) in enumerate(self._plan):
            kind = layer["type"]
            if kind == "conv":
                h = tc.conv2d(h, blocks[li]["weight"], int(layer.get("stride", 1)))
                h = tc.add_bias(h, blocks[li]["bias"])
            elif kind == "relu":
                h = tc.relu(h)
            elif kind == "pool":
                h = tc.max_pool2d(h, int(layer["window"]))
            elif kind == "flatten":
                h = tc.flatten(h)
            elif kind == "dense":
                h = tc.add_bias(tc.matmul(h, blocks[li]["weight"]), blocks[li]["bias"])
        return h

    def _param_tensors(self, params):
        blocks = [dict() for _ in self._plan]
        if params is None:
            for li, name, pshape, off, size in self.param_slices():
                blocks[li][name] = tc.Tensor(self.params[off:off + size].reshape(pshape))
            return blocks
        flat = tc.as_tensor(params)
        if flat.size != self.num_params:
            raise tc.ShapeError(
                f"forward: shape mismatch {list(flat.shape)} vs [{self.num_params}]"
            )
        for li, name, pshape, off, size in self.param_slices():
            blocks[li][name] = _slice_view(flat, off, size, pshape)
        return blocks

    def logits(self, x):
        return self.forward(x).data

    def predict_proba(self, x):
        return tc.softmax_np(self.logits(x))

    def predict(self, x):
        return self.logits(x).argmax(axis=-1)

    def per_example_loss(self, x, y):
        logp = tc.log_softmax_np(self.logits(x))
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        return -logp[np.arange(len(y)), y]

    def input_loss(self, x, y):
        """Mean cross-entropy as a graph node, for gradients w.r.t. the input."""
        return tc.softmax_cross_entropy(self.forward(x), y)

    def loss_and_grad(self, x, y):
        """Mean cross-entropy and its gradient w.r.t. the flat parameter vector."""
        theta = tc.Tensor(self.params.copy(), requires_grad=True)
        loss = tc.softmax_cross_entropy(self.forward(x, params=theta), y)
        tc.backward(loss)
        grad = theta.grad if theta.grad is not None else np.zeros_like(self.params)
        return loss.item(), grad

    def snapshot(self, step=0):
        return ParamSnapshot(self.params, int(step))


def _slice_view(flat, off, size, pshape):
    """Differentiable slice of a flat parameter Tensor."""
    data = flat.data[off:off + size].reshape(pshape)

    def _bw(g):
        if flat.requires_grad:
            if flat.grad is None:
                flat.grad = np.zeros(flat.shape)
            flat.grad[off:off + size] += g.reshape(-1)

    return tc._result(data, (flat,), _bw, "param_slice")


@dataclass(frozen=True)
class ParamSnapshot:
    """Immutable copy of the parameter vector at a training step."""

    params: np.ndarray
    step: int = 0

    def __post_init__(self):
        frozen = np.array(self.params, dtype=np.float64, copy=True)
        frozen.setflags(write=False)
        object.__setattr__(self, "params", frozen)


def sgd_step(model, grads, learning_rate):
    if learning_rate < 0:
        raise ValueError("learning_rate must be non-negative")
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != model.params.shape:
        raise tc.ShapeError(
            f"sgd_step: shape mismatch {list(grads.shape)} vs {list(model.params.shape)}"
        )
    model.params -= learning_rate * grads


def average_params(snapshots, template):
    """Classifier whose parameters are the coordinatewise mean of ``snapshots``.

    ``template`` supplies the architecture (any Classifier of the same shape).
    """
    snapshots = list(snapshots)
    if not snapshots:
        raise ValueError("average_params: empty snapshot list")
    sizes = {s.params.size for s in snapshots}
    if sizes != {template.num_params}:
        raise ValueError("average_params: snapshots do not share the template architecture")
    mean = np.mean(np.stack([s.params for s in snapshots]), axis=0)
    return template.with_params(mean)


class Ensemble:
    """Uniform mixture of member networks, averaged after the softmax."""

    def __init__(self, snapshots, template):
        snapshots = list(snapshots)
        if not snapshots:
            raise ValueError("Ensemble: empty snapshot list")
        self.members = [template.with_params(s.params) for s in snapshots]
        self.input_shape = template.input_shape
        self.num_classes = template.num_classes

    def forward_probs(self, x):
        probs = [tc.softmax(m.forward(x)) for m in self.members]
        total = probs[0]
        for p in probs[1:]:
            total = tc.add(total, p)
        return tc.mul_scalar(total, 1.0 / len(probs))

    def predict_proba(self, x):
        return np.mean([m.predict_proba(x) for m in self.members], axis=0)

    def predict(self, x):
        return self.predict_proba(x).argmax(axis=-1)

    def per_example_loss(self, x, y):
        p = self.predict_proba(x)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        return -np.log(np.maximum(p[np.arange(len(y)), y], np.finfo(np.float64).tiny))

    def input_loss(self, x, y):
        return tc.nll_of_probs(self.forward_probs(x), y)


def ensemble_predict(snapshots, x, template):
    """Mean of member softmax outputs."""
    return Ensemble(snapshots, template).predict_proba(x)


# ---------------------------------------------------------------------------
# Checkpoint files
# ---------------------------------------------------------------------------

def save_checkpoint(path, model):
    """Write magic, version, JSON header (architecture, shapes), then little-endian f8 params."""
    header = json.dumps({
        "architecture": list(model.architecture),
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "num_params": model.num_params,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(model.params.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    if len(blob) < pos + 8:
        raise ValueError(f"{path}: truncated checkpoint header")
    version, hlen = struct.unpack_from("<II", blob, pos)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos += 8
    header = json.loads(blob[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    n = header["num_params"]
    if len(blob) - pos != 8 * n:
        raise ValueError(f"{path}: expected {n} parameters, found {(len(blob) - pos) / 8:g}")
    params = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).astype(np.float64)
    return Classifier(header["architecture"], header["input_shape"], params)
