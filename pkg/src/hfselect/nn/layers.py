"""Layers, losses and regularizers built on :mod:`hfselect.nn.tensor`."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (ShapeMismatch, Tensor, _make, _sigmoid, as_tensor, concat,
                     log, matmul, mul, relu, stable_softmax, tsum)
from .tensor import softmax as _softmax_op

EPS_LOG = 1e-12


class NonFiniteInput(ValueError):
    pass


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Holds named parameter tensors, in registration order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def num_parameters(self) -> int:
        return sum(p.size for p in self._params.values())


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, activation: str | None = None):
        super().__init__()
        self.W = self.param("W", uniform_init(rng, n_in, (n_in, n_out)))
        self.b = self.param("b", np.zeros(n_out))
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.W) + self.b
        return relu(y) if self.activation == "relu" else y


class Conv1xF(Module):
    """Kernels spanning all F features of one time row: ``(B, T, F) -> (B, T, K)``, ReLU."""

    def __init__(self, n_features: int, n_kernels: int, rng: np.random.Generator):
        super().__init__()
        self.feature_width = n_features
        self.kernels = self.param("kernels", uniform_init(rng, n_features, (n_features, n_kernels)))
        self.b = self.param("b", np.zeros(n_kernels))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.feature_width:
            raise ShapeMismatch(f"expected {self.feature_width} features, got {x.shape[-1]}")
        return relu(matmul(x, self.kernels) + self.b)


class TemporalConv(Module):
    """Valid convolution over ``width`` consecutive rows, mixing all channels, ReLU."""

    def __init__(self, n_channels: int, n_kernels: int, rng: np.random.Generator, width: int = 3):
        super().__init__()
        self.width = width
        fan_in = n_channels * width
        self.W = self.param("W", uniform_init(rng, fan_in, (fan_in, n_kernels)))
        self.b = self.param("b", np.zeros(n_kernels))

    def __call__(self, x: Tensor) -> Tensor:
        T = x.shape[1]
        if T < self.width:
            raise ShapeMismatch(f"sequence of {T} rows shorter than kernel width {self.width}")
        shifted = concat([x[:, d:T - self.width + 1 + d, :] for d in range(self.width)], axis=-1)
        return relu(matmul(shifted, self.W) + self.b)


# LSTM ---------------------------------------------------------------------------

GATES = ("i", "f", "o", "g")


@dataclass
class LstmCellParams:
    """Weights of one LSTM cell; ``W_x*`` are input x hidden, ``W_h*`` hidden x hidden."""

    W_xi: np.ndarray
    W_hi: np.ndarray
    W_xf: np.ndarray
    W_hf: np.ndarray
    W_xo: np.ndarray
    W_ho: np.ndarray
    W_xg: np.ndarray
    W_hg: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.b_i.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_xi.shape[0]

    def validate(self) -> None:
        d, h = self.input_size, self.hidden_size
        for gate in GATES:
            if getattr(self, f"W_x{gate}").shape != (d, h):
                raise ShapeMismatch(f"W_x{gate} must be {(d, h)}")
            if getattr(self, f"W_h{gate}").shape != (h, h):
                raise ShapeMismatch(f"W_h{gate} must be {(h, h)}")
            if getattr(self, f"b_{gate}").shape != (h,):
                raise ShapeMismatch(f"b_{gate} must have length {h}")

    def fused(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        Wx = np.concatenate([getattr(self, f"W_x{g}") for g in GATES], axis=1)
        Wh = np.concatenate([getattr(self, f"W_h{g}") for g in GATES], axis=1)
        b = np.concatenate([getattr(self, f"b_{g}") for g in GATES])
        return Wx, Wh, b


PARAM_ORDER = tuple(f.name for f in LstmCellParams.__dataclass_fields__.values())


def lstm_cell_forward(x_t, h_prev, c_prev, p: LstmCellParams):
    """One LSTM step.  Works on vectors or on batches of row vectors."""
    p.validate()
    x_t, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (x_t, h_prev, c_prev))
    if x_t.shape[-1] != p.input_size or h_prev.shape[-1] != p.hidden_size \
            or c_prev.shape != h_prev.shape:
        raise ShapeMismatch("state or input size does not match the cell")
    i = _sigmoid(x_t @ p.W_xi + h_prev @ p.W_hi + p.b_i)
    f = _sigmoid(x_t @ p.W_xf + h_prev @ p.W_hf + p.b_f)
    o = _sigmoid(x_t @ p.W_xo + h_prev @ p.W_ho + p.b_o)
    g = np.tanh(x_t @ p.W_xg + h_prev @ p.W_hg + p.b_g)
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


def lstm_layer_forward(seq, p: LstmCellParams, return_sequence: bool = False):
    """Run the cell over ``seq`` (steps x in, or batch x steps x in) from a zero state."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim < 2 or seq.shape[-2] < 1:
        raise ShapeMismatch("need at least one step")
    lead = seq.shape[:-2]
    h = np.zeros(lead + (p.hidden_size,))
    c = np.zeros_like(h)
    hs = []
    for t in range(seq.shape[-2]):
        h, c = lstm_cell_forward(seq[..., t, :], h, c, p)
        hs.append(h)
    return np.stack(hs, axis=-2) if return_sequence else h


def lstm_sequence(x: Tensor, params: list[Tensor]) -> Tensor:
    """Fused LSTM over a (B, T, D) tensor; returns all hidden states (B, T, H).

    ``params`` follow :data:`PARAM_ORDER`.  The backward pass is explicit
    backpropagation through time.
    """
    x = as_tensor(x)
    p = LstmCellParams(*(t.data for t in params))
    p.validate()
    if x.ndim != 3 or x.shape[2] != p.input_size:
        raise ShapeMismatch(f"expected (B, T, {p.input_size}), got {x.shape}")
    B, T, D = x.shape
    H = p.hidden_size
    Wx, Wh, b = p.fused()
    xz = (x.data.reshape(-1, D) @ Wx).reshape(B, T, 4 * H) + b
    gates = np.empty((B, T, 4 * H))
    cs = np.empty((B, T + 1, H))
    hs = np.empty((B, T + 1, H))
    cs[:, 0] = 0.0
    hs[:, 0] = 0.0
    for t in range(T):
        z = xz[:, t] + hs[:, t] @ Wh
        a = gates[:, t]
        a[:, :3 * H] = _sigmoid(z[:, :3 * H])
        a[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        cs[:, t + 1] = f * cs[:, t] + i * g
        hs[:, t + 1] = o * np.tanh(cs[:, t + 1])

    def fn(gH):
        dz = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in reversed(range(T)):
            a = gates[:, t]
            i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            tc = np.tanh(cs[:, t + 1])
            dh = gH[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            d = dz[:, t]
            d[:, :H] = dc * g * i * (1.0 - i)
            d[:, H:2 * H] = dc * cs[:, t] * f * (1.0 - f)
            d[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
            d[:, 3 * H:] = dc * i * (1.0 - g * g)
            dh_next = d @ Wh.T
            dc_next = dc * f
        flat = dz.reshape(-1, 4 * H)
        dWx = x.data.reshape(-1, D).T @ flat
        dWh = hs[:, :T].reshape(-1, H).T @ flat
        db = flat.sum(axis=0)
        dx = (flat @ Wx.T).reshape(B, T, D)
        out = []
        for k in range(4):
            sl = slice(k * H, (k + 1) * H)
            out += [dWx[:, sl], dWh[:, sl]]
        out += [db[k * H:(k + 1) * H] for k in range(4)]
        return (dx, *out)

    return _make(hs[:, 1:].copy(), (x, *params), fn)


class LSTM(Module):
    """LSTM layer with uniform fan-in initialization and forget bias 1."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.hidden_size = hidden
        for gate in GATES:
            self.param(f"W_x{gate}", uniform_init(rng, n_in, (n_in, hidden)))
            self.param(f"W_h{gate}", uniform_init(rng, hidden, (hidden, hidden)))
        for gate in GATES:
            self.param(f"b_{gate}", np.full(hidden, 1.0 if gate == "f" else 0.0))

    def ordered(self) -> list[Tensor]:
        return [self._params[n] for n in PARAM_ORDER]

    def cell_params(self) -> LstmCellParams:
        return LstmCellParams(*(t.data for t in self.ordered()))

    def __call__(self, x: Tensor, return_sequence: bool = False) -> Tensor:
        hs = lstm_sequence(x, self.ordered())
        return hs if return_sequence else hs[:, -1, :]


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: dict[str, Tensor]):
    """The cell equations composed from primitive ops (reference for the fused op)."""
    from .tensor import sigmoid, tanh
    pre = {g: matmul(x, params[f"W_x{g}"]) + matmul(h, params[f"W_h{g}"]) + params[f"b_{g}"]
           for g in GATES}
    i, f, o = sigmoid(pre["i"]), sigmoid(pre["f"]), sigmoid(pre["o"])
    g = tanh(pre["g"])
    c_t = f * c + i * g
    return o * tanh(c_t), c_t


# output head, loss, regularization ----------------------------------------------

def softmax(scores):
    """Softmax over the last axis; accepts a Tensor or an array."""
    if isinstance(scores, Tensor):
        if not np.all(np.isfinite(scores.data)):
            raise NonFiniteInput("scores must be finite")
        return _softmax_op(scores)
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise NonFiniteInput("scores must be finite")
    return stable_softmax(s)


def cross_entropy_loss(pred, onehot):
    """Mean over the batch of ``-sum_i y_i log(p_i)``, with log floored at 1e-12."""
    if isinstance(pred, Tensor):
        y = np.asarray(onehot.data if isinstance(onehot, Tensor) else onehot, dtype=np.float64)
        if y.shape != pred.shape:
            raise ShapeMismatch(f"labels {y.shape} vs predictions {pred.shape}")
        m = pred.shape[0]
        return mul(tsum(mul(log(pred, EPS_LOG), y)), -1.0 / m)
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(onehot, dtype=np.float64)
    return float(-(y * np.log(np.maximum(p, EPS_LOG))).sum() / p.shape[0])


def one_hot(labels, n_classes: int = 4) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def l2_penalty(params, lam: float, n: int | None = None):
    """``lam / (2 n) * sum(w^2)`` over all parameters; ``n`` defaults to their count."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    params = list(params)
    if n is None:
        n = sum(np.size(p.data if isinstance(p, Tensor) else p) for p in params)
    if all(isinstance(p, Tensor) for p in params):
        total = None
        for p in params:
            sq = tsum(mul(p, p))
            total = sq if total is None else total + sq
        return mul(total, lam / (2.0 * n))
    return lam / (2.0 * n) * float(sum(np.sum(np.square(p)) for p in params))


# dropout ------------------------------------------------------------------------

@dataclass(frozen=True)
class DropoutSpec:
    kind: str = "elementwise"        # "elementwise" | "spatial"
    keep_probability: float = 0.8
    columns_dropped: int = 0

    def __post_init__(self):
        if self.kind not in ("elementwise", "spatial"):
            raise ValueError(f"unknown dropout kind {self.kind!r}")
        if not 0 < self.keep_probability <= 1:
            raise ValueError("keep_probability must lie in (0, 1]")
        if self.columns_dropped < 0:
            raise ValueError("columns_dropped must be non-negative")


def dropout_mask(shape, spec: DropoutSpec, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier for an input of ``shape``.

    Spatial masks zero the same ``columns_dropped`` columns of the last axis
    across the whole input and rescale the rest by ``F / (F - k)``.
    """
    if spec.kind == "elementwise":
        keep = spec.keep_probability
        return (rng.random(shape) < keep) / keep
    F = shape[-1]
    k = spec.columns_dropped
    if k >= F:
        raise ValueError(f"cannot drop {k} of {F} columns")
    mask = np.full(F, F / (F - k))
    mask[rng.choice(F, size=k, replace=False)] = 0.0
    return mask


def dropout_forward(x, spec: DropoutSpec, training: bool, rng: np.random.Generator | None = None):
    """Dropout on a Tensor or array; the exact identity when not training."""
    if not training or (spec.kind == "elementwise" and spec.keep_probability == 1.0) \
            or (spec.kind == "spatial" and spec.columns_dropped == 0):
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    mask = dropout_mask(np.shape(x.data if isinstance(x, Tensor) else x), spec, rng)
    if isinstance(x, Tensor):
        return mul(x, mask)
    return np.asarray(x) * mask
