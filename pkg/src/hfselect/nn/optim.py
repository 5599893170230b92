"""Adam, RMSProp and Adadelta with their usual published defaults."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import ShapeMismatch, Tensor

DEFAULTS = {
    "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    "rmsprop": {"rho": 0.9, "eps": 1e-8},
    "adadelta": {"rho": 0.95, "eps": 1e-6},
}


@dataclass
class OptimizerState:
    kind: str
    lr: float = 0.001
    hyper: dict = field(default_factory=dict)
    step: int = 0
    buffers: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in DEFAULTS:
            raise ValueError(f"unknown optimizer {self.kind!r}")
        self.hyper = {**DEFAULTS[self.kind], **self.hyper}


def _buffers(state: OptimizerState, names: Sequence[str], params: Sequence[np.ndarray]):
    for n in names:
        if n not in state.buffers:
            state.buffers[n] = [np.zeros_like(p) for p in params]
    return [state.buffers[n] for n in names]


def optimizer_step(state: OptimizerState, params: Sequence[np.ndarray],
                   grads: Sequence[np.ndarray]) -> None:
    """Update ``params`` in place and advance ``state`` by one step."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ShapeMismatch("parameters and gradients disagree")
    h, lr = state.hyper, state.lr
    state.step += 1
    if state.kind == "adam":
        m, v = _buffers(state, ("m", "v"), params)
        b1, b2, eps = h["beta1"], h["beta2"], h["eps"]
        c1 = 1.0 - b1 ** state.step
        c2 = 1.0 - b2 ** state.step
        for p, g, mi, vi in zip(params, grads, m, v):
            mi *= b1
            mi += (1.0 - b1) * g
            vi *= b2
            vi += (1.0 - b2) * g * g
            p -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
    elif state.kind == "rmsprop":
        (v,) = _buffers(state, ("v",), params)
        rho, eps = h["rho"], h["eps"]
        for p, g, vi in zip(params, grads, v):
            vi *= rho
            vi += (1.0 - rho) * g * g
            p -= lr * g / (np.sqrt(vi) + eps)
    else:
        eg, ed = _buffers(state, ("sq_grad", "sq_delta"), params)
        rho, eps = h["rho"], h["eps"]
        for p, g, egi, edi in zip(params, grads, eg, ed):
            egi *= rho
            egi += (1.0 - rho) * g * g
            delta = np.sqrt(edi + eps) / np.sqrt(egi + eps) * g
            edi *= rho
            edi += (1.0 - rho) * delta * delta
            p -= lr * delta


class Optimizer:
    """Binds an :class:`OptimizerState` to a list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], kind: str = "adam", lr: float = 0.001, **hyper):
        self.params = list(params)
        self.state = OptimizerState(kind, lr, hyper)

    def step(self, grads: Sequence[np.ndarray]) -> None:
        optimizer_step(self.state, [p.data for p in self.params], grads)
