"""Dense numerical core.

A small two-head multilayer perceptron (shared trunk, a softmax class head
and a linear log-variance head) with hand-written reverse-mode gradients,
plus a central finite-difference oracle used to check them. Everything is
float64 and purely functional: forward/backward never mutate their inputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidStateError, ShapeError

CHECKPOINT_MAGIC = b"UCLS0001"

ACTIVATIONS = ("tanh", "relu")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stabilized softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 1:
        raise ShapeError("softmax needs at least one logit")
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax received non-finite logits")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x):
    """Stable logistic function, elementwise; saturates instead of overflowing."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("sigmoid received non-finite input")
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # derivative expressed from pre-activation z and activation a
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class Prediction:
    """One model output: class-probability vector h and log-variance scalar s."""

    h: np.ndarray
    s: float


@dataclass
class TwoHeadMlp:
    """MLP trunk feeding a softmax class head and a 1-unit log-variance head.

    trunk_weights[i] has shape (dims[i+1], dims[i]); biases are 1-D. The
    class head maps the trunk output to n_classes logits, the var head to a
    single unconstrained real interpreted as log of the predicted variance.
    """

    trunk_weights: list[np.ndarray]
    trunk_biases: list[np.ndarray]
    class_w: np.ndarray
    class_b: np.ndarray
    var_w: np.ndarray
    var_b: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.trunk_weights) != len(self.trunk_biases):
            raise ShapeError("trunk weight/bias count mismatch")
        dims = self.layer_dims
        for i, (w, b) in enumerate(zip(self.trunk_weights, self.trunk_biases)):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise ShapeError(f"trunk layer {i} has inconsistent shape {w.shape}")
        t = dims[-1]
        if self.class_w.shape[1] != t or self.class_b.shape != (self.class_w.shape[0],):
            raise ShapeError("class head shape does not match trunk width")
        if self.var_w.shape != (1, t) or self.var_b.shape != (1,):
            raise ShapeError("var head must map trunk width to a single scalar")
        for a in self.arrays():
            if not np.all(np.isfinite(a)):
                raise ValueError("model contains non-finite weights")

    @property
    def layer_dims(self) -> list[int]:
        if not self.trunk_weights:
            return [self.class_w.shape[1]]
        return [self.trunk_weights[0].shape[1]] + [w.shape[0] for w in self.trunk_weights]

    @property
    def n_inputs(self) -> int:
        return self.layer_dims[0]

    @property
    def n_classes(self) -> int:
        return self.class_w.shape[0]

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed, stable order."""
        out = []
        for w, b in zip(self.trunk_weights, self.trunk_biases):
            out.extend([w, b])
        out.extend([self.class_w, self.class_b, self.var_w, self.var_b])
        return out

    def replace_arrays(self, arrays: list[np.ndarray]) -> "TwoHeadMlp":
        """New model with the same topology and the given parameter arrays."""
        n = len(self.trunk_weights)
        return TwoHeadMlp(
            trunk_weights=[arrays[2 * i] for i in range(n)],
            trunk_biases=[arrays[2 * i + 1] for i in range(n)],
            class_w=arrays[2 * n],
            class_b=arrays[2 * n + 1],
            var_w=arrays[2 * n + 2],
            var_b=arrays[2 * n + 3],
            activation=self.activation,
        )

    def copy(self) -> "TwoHeadMlp":
        return self.replace_arrays([a.copy() for a in self.arrays()])


@dataclass
class GradientSet:
    """Per-parameter gradients mirroring a TwoHeadMlp's arrays."""

    trunk_weights: list[np.ndarray]
    trunk_biases: list[np.ndarray]
    class_w: np.ndarray
    class_b: np.ndarray
    var_w: np.ndarray
    var_b: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.trunk_weights, self.trunk_biases):
            out.extend([w, b])
        out.extend([self.class_w, self.class_b, self.var_w, self.var_b])
        return out

    @classmethod
    def from_arrays(cls, model: TwoHeadMlp, arrays: list[np.ndarray]) -> "GradientSet":
        n = len(model.trunk_weights)
        return cls(
            trunk_weights=[arrays[2 * i] for i in range(n)],
            trunk_biases=[arrays[2 * i + 1] for i in range(n)],
            class_w=arrays[2 * n],
            class_b=arrays[2 * n + 1],
            var_w=arrays[2 * n + 2],
            var_b=arrays[2 * n + 3],
        )

    @classmethod
    def zeros(cls, model: TwoHeadMlp) -> "GradientSet":
        return cls.from_arrays(model, [np.zeros_like(a) for a in model.arrays()])


def init_model(
    layer_dims: list[int],
    n_classes: int,
    activation: str = "tanh",
    seed=0,
) -> TwoHeadMlp:
    """Random model: weights uniform in +-sqrt(6/(fan_in+fan_out)), zero biases."""
    if len(layer_dims) < 1 or any(d < 1 for d in layer_dims):
        raise ShapeError("layer_dims must list positive widths, input first")
    if n_classes < 2:
        raise ShapeError("need at least two classes")
    rng = np.random.default_rng(seed)

    def xavier(out_d, in_d):
        lim = np.sqrt(6.0 / (in_d + out_d))
        return rng.uniform(-lim, lim, size=(out_d, in_d))

    tw = [xavier(layer_dims[i + 1], layer_dims[i]) for i in range(len(layer_dims) - 1)]
    tb = [np.zeros(layer_dims[i + 1]) for i in range(len(layer_dims) - 1)]
    trunk = layer_dims[-1]
    return TwoHeadMlp(
        trunk_weights=tw,
        trunk_biases=tb,
        class_w=xavier(n_classes, trunk),
        class_b=np.zeros(n_classes),
        var_w=xavier(1, trunk),
        var_b=np.zeros(1),
        activation=activation,
    )


@dataclass
class ForwardCache:
    """Intermediates from forward_batch, consumed by model_backward."""

    model: TwoHeadMlp
    acts: list[np.ndarray] = field(repr=False)  # acts[0] is the input batch
    pre_acts: list[np.ndarray] = field(repr=False)
    h: np.ndarray = field(repr=False)
    s: np.ndarray = field(repr=False)


def forward_batch(model: TwoHeadMlp, x: np.ndarray):
    """Run the model on a batch.

    x: (m, n_inputs). Returns (h, s, cache) with h (m, N) row-simplexes and
    s (m,) unconstrained log-variances.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise ShapeError(f"expected input shape (m, {model.n_inputs}), got {x.shape}")
    a = x
    acts = [a]
    pre_acts = []
    for w, b in zip(model.trunk_weights, model.trunk_biases):
        z = a @ w.T + b
        a = _act(model.activation, z)
        pre_acts.append(z)
        acts.append(a)
    logits = a @ model.class_w.T + model.class_b
    h = softmax(logits)
    s = a @ model.var_w.T + model.var_b  # (m, 1)
    s = s[:, 0]
    return h, s, ForwardCache(model=model, acts=acts, pre_acts=pre_acts, h=h, s=s)


def model_forward(model: TwoHeadMlp, x: np.ndarray):
    """Single-sample forward pass; returns (Prediction, cache)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("model_forward expects a 1-D input vector")
    h, s, cache = forward_batch(model, x[None, :])
    return Prediction(h=h[0], s=float(s[0])), cache


def model_backward(
    model: TwoHeadMlp, cache: ForwardCache, d_h: np.ndarray, d_s
) -> GradientSet:
    """Exact reverse-mode gradients through both heads and the trunk.

    d_h, d_s are cotangents of the loss w.r.t. the softmax output h and the
    log-variance s; batched shapes (m, N) and (m,). The returned gradients
    are summed over the batch.
    """
    if cache.model is not model:
        raise InvalidStateError("cache does not belong to this model")
    d_h = np.atleast_2d(np.asarray(d_h, dtype=np.float64))
    d_s = np.atleast_1d(np.asarray(d_s, dtype=np.float64))
    m = cache.h.shape[0]
    if d_h.shape != cache.h.shape or d_s.shape != (m,):
        raise ShapeError("cotangent shapes do not match the cached forward pass")

    h = cache.h
    trunk_out = cache.acts[-1]

    # softmax Jacobian: d_logits_j = h_j * (d_h_j - sum_k d_h_k h_k)
    d_logits = h * (d_h - np.sum(d_h * h, axis=1, keepdims=True))

    g_class_w = d_logits.T @ trunk_out
    g_class_b = d_logits.sum(axis=0)
    g_var_w = (d_s[:, None] * trunk_out).sum(axis=0, keepdims=True)
    g_var_b = np.array([d_s.sum()])

    d_a = d_logits @ model.class_w + d_s[:, None] * model.var_w

    g_tw = [None] * len(model.trunk_weights)
    g_tb = [None] * len(model.trunk_biases)
    for i in range(len(model.trunk_weights) - 1, -1, -1):
        d_z = d_a * _act_grad(model.activation, cache.pre_acts[i], cache.acts[i + 1])
        g_tw[i] = d_z.T @ cache.acts[i]
        g_tb[i] = d_z.sum(axis=0)
        d_a = d_z @ model.trunk_weights[i]

    return GradientSet(
        trunk_weights=g_tw,
        trunk_biases=g_tb,
        class_w=g_class_w,
        class_b=g_class_b,
        var_w=g_var_w,
        var_b=g_var_b,
    )


def finite_difference_grad(loss_fn, model: TwoHeadMlp, eps: float = 1e-5) -> GradientSet:
    """Central-difference gradient of a black-box scalar loss of the model.

    loss_fn takes a TwoHeadMlp and returns a float. O(2 * n_params) loss
    evaluations; intended as a test oracle, not for training.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    probe = model.copy()
    grads = []
    for a in probe.arrays():
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = loss_fn(probe)
            flat[i] = orig - eps
            f_minus = loss_fn(probe)
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
        grads.append(g)
    return GradientSet.from_arrays(model, grads)


def save_model(model: TwoHeadMlp, path) -> None:
    """Write a checkpoint: magic, matrix count, then (rows, cols, float64 data)
    per matrix, little-endian throughout; class head then var head last.
    Biases are stored as single-column matrices."""
    mats = []
    for w, b in zip(model.trunk_weights, model.trunk_biases):
        mats.extend([w, b[:, None]])
    mats.extend(
        [model.class_w, model.class_b[:, None], model.var_w, model.var_b[:, None]]
    )
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(mats)))
        for mat in mats:
            rows, cols = mat.shape
            f.write(struct.pack("<II", rows, cols))
            f.write(np.ascontiguousarray(mat, dtype="<f8").tobytes())


def load_model(path, activation: str = "tanh") -> TwoHeadMlp:
    """Read a checkpoint written by save_model. The activation tag is not part
    of the binary format; pass it (trainer sidecars record it)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic")
    off = 8
    if len(data) < off + 4:
        raise FormatError("truncated checkpoint header")
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    mats = []
    for _ in range(count):
        if len(data) < off + 8:
            raise FormatError("truncated matrix header")
        rows, cols = struct.unpack_from("<II", data, off)
        off += 8
        nbytes = rows * cols * 8
        if len(data) < off + nbytes:
            raise FormatError("truncated matrix data")
        mat = np.frombuffer(data[off : off + nbytes], dtype="<f8").reshape(rows, cols)
        mats.append(mat.astype(np.float64))
        off += nbytes
    if off != len(data):
        raise FormatError("trailing bytes after checkpoint payload")
    if count < 4 or count % 2 != 0:
        raise FormatError("checkpoint must hold trunk pairs plus two head pairs")
    n_trunk = (count - 4) // 2
    tw = [mats[2 * i] for i in range(n_trunk)]
    tb = [mats[2 * i + 1][:, 0] for i in range(n_trunk)]
    class_w, class_b = mats[2 * n_trunk], mats[2 * n_trunk + 1][:, 0]
    var_w, var_b = mats[2 * n_trunk + 2], mats[2 * n_trunk + 3][:, 0]
    return TwoHeadMlp(
        trunk_weights=tw,
        trunk_biases=tb,
        class_w=class_w,
        class_b=class_b,
        var_w=var_w,
        var_b=var_b,
        activation=activation,
    )
