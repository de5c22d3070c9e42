"""Reverse-mode autodiff on float32 numpy arrays.

Execution is define-by-run: while a Tape is active, every op that produces a
grad-requiring output appends one Node to it. Creation order is a valid
topological order, so `backward` is a single reverse sweep that visits each
node exactly once and accumulates gradients for shared inputs.

A Tape is meant to live for one training step; tape-free forwards (eval,
frozen inference) record nothing and keep no activations alive.
"""

from __future__ import annotations

import os
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError

_tls = threading.local()

CHECK_FINITE = os.environ.get("KDKIT_CHECK_FINITE", "") == "1"


def active_tape() -> "Tape | None":
    return getattr(_tls, "tape", None)


def work_dtype() -> np.dtype:
    """Dtype new Tensors coerce to. float32 everywhere except inside
    grad_check's numeric probe, which re-runs the forward in float64 so the
    difference quotient is not drowned in single-precision roundoff."""
    return getattr(_tls, "work_dtype", np.float32)


class _probe_dtype:
    """Scoped override of work_dtype; only grad_check should use this."""

    __slots__ = ("dtype", "_prev")

    def __init__(self, dtype) -> None:
        self.dtype = np.dtype(dtype)

    def __enter__(self) -> None:
        self._prev = work_dtype()
        _tls.work_dtype = self.dtype

    def __exit__(self, *exc) -> None:
        _tls.work_dtype = self._prev


class Tape:
    """Ordered record of the ops of one forward pass."""

    __slots__ = ("nodes", "_prev")

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._prev: Tape | None = None

    def __enter__(self) -> "Tape":
        self._prev = active_tape()
        _tls.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _tls.tape = self._prev
        self._prev = None

    def __len__(self) -> int:
        return len(self.nodes)


class Node:
    __slots__ = ("kind", "inputs", "output", "backward_fn")

    def __init__(
        self,
        kind: str,
        inputs: tuple["Tensor", ...],
        output: "Tensor",
        backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    ) -> None:
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tensor:
    """A float32 array plus autodiff bookkeeping.

    `node` is the producing Node (None for leaves). Hashing is by identity,
    so Tensors can key gradient dicts directly.
    """

    __slots__ = ("data", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False) -> None:
        arr = np.asarray(data, dtype=work_dtype())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{grad})"

    # Operator sugar; the real work lives in kdkit.ops.
    def __add__(self, other):
        from . import ops

        return ops.add(self, _as_tensor(other))

    def __radd__(self, other):
        from . import ops

        return ops.add(_as_tensor(other), self)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, _as_tensor(other))

    def __mul__(self, other):
        from . import ops

        if isinstance(other, (int, float)):
            return ops.scalar_mul(self, float(other))
        return ops.mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, rng: np.random.Generator | None = None) -> Tensor:
    """A grad-requiring leaf tensor."""
    del rng
    return Tensor(data, requires_grad=True)


def record(
    kind: str,
    inputs: Sequence[Tensor],
    out_data: np.ndarray,
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap an op result; append a Node when a tape is active and grads flow.

    With a tape active (or KDKIT_CHECK_FINITE=1) the output is scanned for
    NaN/Inf: finite inputs must give finite outputs, anything else is a
    numeric error, not a value to propagate.
    """
    tape = active_tape()
    if (tape is not None or CHECK_FINITE) and not np.isfinite(out_data).all():
        raise NumericError(f"non-finite output from op {kind!r}")
    out = Tensor(out_data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    if tape is not None and out.requires_grad:
        node = Node(kind, tuple(inputs), out, backward_fn)
        out.node = node
        tape.nodes.append(node)
    return out


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse sweep. Returns gradients for every grad-requiring leaf seen on
    the tape (zeros for leaves off the loss path)."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericError("non-finite loss")
    grads: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g_out = grads.pop(node.output, None)
        if g_out is None:
            continue
        g_ins = node.backward_fn(g_out)
        for t, g in zip(node.inputs, g_ins):
            if g is None or not t.requires_grad:
                continue
            if g.shape != t.data.shape:
                raise ContractError(
                    f"grad shape {g.shape} != input shape {t.data.shape} in op {node.kind!r}"
                )
            acc = grads.get(t)
            # Never accumulate in place: backward_fns may alias their output
            # gradient (add returns the same array for both inputs).
            grads[t] = g if acc is None else acc + g
    out: dict[Tensor, np.ndarray] = {}
    for node in tape.nodes:
        for t in node.inputs:
            if t.requires_grad and t.node is None and t not in out:
                out[t] = grads.get(t, np.zeros_like(t.data))
    if loss.node is None and loss.requires_grad:
        out.setdefault(loss, np.ones_like(loss.data))
    return out


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-3,
) -> float:
    """Central-difference check of df/dx against the analytic gradient.

    Returns the max over coordinates of |a - n| / max(1e-8, |a| + |n|).
    `f` must be deterministic (any randomness fixed per call) and return a
    scalar Tensor.
    """
    x = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(x)
        if out.data.size != 1:
            raise ContractError("grad_check target must return a scalar")
        analytic = backward(tape, out).get(x)
    if analytic is None:
        analytic = np.zeros_like(x.data)
    # Numeric probe runs the same forward in float64. The float32 leaves f
    # captures are exact double values, so this differentiates the identical
    # function; it only stops single-precision roundoff in f from swamping
    # the difference quotient (which it otherwise does for any coordinate
    # whose gradient is small relative to |f|).
    base = x.data.astype(np.float64)
    flat = base.reshape(-1)
    numeric = np.zeros(flat.shape, dtype=np.float64)
    with _probe_dtype(np.float64):
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus = float(f(Tensor(base)).data.reshape(()))
            flat[idx] = orig - eps
            f_minus = float(f(Tensor(base)).data.reshape(()))
            flat[idx] = orig
            numeric[idx] = (f_plus - f_minus) / (2.0 * eps)
    a = analytic.reshape(-1).astype(np.float64)
    denom = np.maximum(1e-8, np.abs(a) + np.abs(numeric))
    return float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
