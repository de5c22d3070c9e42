"""SGD and Adam over name-keyed parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParameterError
from .tensor import Tensor


@dataclass
class OptimizerState:
    """Hyperparameters plus per-parameter moment buffers.

    algo: "adam" or "sgd". Buffers are allocated lazily on the first step and
    keep the exact shape of their parameter. `t` counts completed steps and
    drives Adam's bias correction.
    """

    algo: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.algo not in ("adam", "sgd"):
            raise ParameterError(f"unknown optimizer {self.algo!r}")
        if not (self.lr > 0.0 and np.isfinite(self.lr)):
            raise ParameterError(f"lr must be finite and > 0, got {self.lr}")


def optimizer_step(
    state: OptimizerState,
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
) -> None:
    """Apply one update in place. Missing grads are treated as zero (the
    parameter is left alone); shape mismatches are contract errors."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ContractError(
                f"grad shape {g.shape} != param shape {p.data.shape} for {name!r}"
            )
        if state.algo == "sgd":
            p.data -= np.float32(state.lr) * g
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(np.float32)
