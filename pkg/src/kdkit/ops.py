"""Differentiable ops over float32 Tensors.

Each function computes its result eagerly in numpy, then registers a backward
closure via `tensor.record`. Ops that have numba-accelerated inner loops
(embedding scatter-add, depthwise conv, the LSTM recurrence) route through
`kdkit.kernels`, which picks the backend at import time.

Dimension conventions: B batch, L sequence, H/C channel width. All masks are
float32 arrays of 0/1 with 1 marking a real (non-pad) position.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, ParameterError
from .tensor import Tensor, record

_f32 = np.float32


def _data(x: Tensor) -> np.ndarray:
    if not isinstance(x, Tensor):
        raise ContractError(f"expected Tensor, got {type(x).__name__}")
    return x.data


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape of a broadcast operand."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, s) in enumerate(zip(g.shape, shape)):
        if s == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return np.ascontiguousarray(g.reshape(shape), dtype=_f32)


def _check_mask(mask: np.ndarray, what: str = "mask") -> np.ndarray:
    mask = np.asarray(mask, dtype=_f32)
    bad = (mask != 0.0) & (mask != 1.0)
    if bad.any():
        raise ParameterError(f"{what} must contain only 0 and 1")
    return mask


def add(a: Tensor, b: Tensor) -> Tensor:
    da, db = _data(a), _data(b)
    try:
        out = da + db
    except ValueError as e:
        raise DimensionError(f"add: {da.shape} vs {db.shape}") from e

    def bwd(g):
        return _unbroadcast(g, da.shape), _unbroadcast(g, db.shape)

    return record("add", (a, b), out, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    da, db = _data(a), _data(b)
    try:
        out = da - db
    except ValueError as e:
        raise DimensionError(f"sub: {da.shape} vs {db.shape}") from e

    def bwd(g):
        return _unbroadcast(g, da.shape), _unbroadcast(-g, db.shape)

    return record("sub", (a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    da, db = _data(a), _data(b)
    try:
        out = da * db
    except ValueError as e:
        raise DimensionError(f"mul: {da.shape} vs {db.shape}") from e

    def bwd(g):
        return _unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape)

    return record("mul", (a, b), out, bwd)


def scalar_mul(a: Tensor, s: float) -> Tensor:
    s = float(s)
    da = _data(a)
    out = da * _f32(s)

    def bwd(g):
        return (g * _f32(s),)

    return record("scalar_mul", (a,), out, bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    da, db = _data(a), _data(b)
    if da.ndim < 2 or db.ndim < 2:
        raise DimensionError("matmul operands must have ndim >= 2")
    if da.shape[-1] != db.shape[-2]:
        raise DimensionError(f"matmul: {da.shape} @ {db.shape}")
    out = np.matmul(da, db)

    def bwd(g):
        ga = _unbroadcast(np.matmul(g, db.swapaxes(-1, -2)), da.shape)
        gb = _unbroadcast(np.matmul(da.swapaxes(-1, -2), g), db.shape)
        return ga, gb

    return record("matmul", (a, b), out, bwd)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    dx = _data(x)
    out = dx.reshape(shape)

    def bwd(g):
        return (g.reshape(dx.shape),)

    return record("reshape", (x,), out, bwd)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    dx = _data(x)
    if sorted(axes) != list(range(dx.ndim)):
        raise DimensionError(f"transpose axes {axes} invalid for ndim {dx.ndim}")
    out = np.ascontiguousarray(dx.transpose(axes))
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return record("transpose", (x,), out, bwd)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ContractError("concat of zero tensors")
    datas = [_data(t) for t in tensors]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: {[d.shape for d in datas]}") from e
    ax = axis % out.ndim
    sizes = [d.shape[ax] for d in datas]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=ax))

    return record("concat", tuple(tensors), out, bwd)


def slice_(x: Tensor, key) -> Tensor:
    """Basic indexing only (ints and slices); gradients scatter back into place."""
    dx = _data(x)
    out = np.ascontiguousarray(dx[key])

    def bwd(g):
        z = np.zeros_like(dx)
        z[key] = g
        return (z,)

    return record("slice", (x,), out, bwd)


Tensor.__getitem__ = slice_


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    dt = _data(table)
    if dt.ndim != 2:
        raise DimensionError(f"embedding table must be 2-D, got {dt.shape}")
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ContractError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= dt.shape[0]):
        raise ContractError(
            f"embedding id out of range [0, {dt.shape[0]}): min={ids.min()}, max={ids.max()}"
        )
    out = np.ascontiguousarray(dt[ids])

    def bwd(g):
        dtab = np.zeros_like(dt)
        kernels.scatter_add_rows(dtab, ids, np.ascontiguousarray(g))
        return (dtab,)

    return record("embedding_lookup", (table,), out, bwd)


def conv1d_depthwise(x: Tensor, w: Tensor) -> Tensor:
    """Per-channel conv over the middle axis, same padding, odd kernel, no bias."""
    dx, dw = _data(x), _data(w)
    if dx.ndim != 3 or dw.ndim != 2:
        raise DimensionError(f"conv1d_depthwise: x {dx.shape}, w {dw.shape}")
    if dw.shape[0] % 2 != 1:
        raise ParameterError(f"kernel size must be odd, got {dw.shape[0]}")
    if dx.shape[2] != dw.shape[1]:
        raise DimensionError(f"channel mismatch: x {dx.shape} vs w {dw.shape}")
    xc = np.ascontiguousarray(dx)
    wc = np.ascontiguousarray(dw)
    out = kernels.dwconv_forward(xc, wc)

    def bwd(g):
        gx, gw = kernels.dwconv_backward(np.ascontiguousarray(g), xc, wc)
        return gx, gw

    return record("conv1d_depthwise", (x, w), out, bwd)


def conv1d_pointwise(x: Tensor, w: Tensor) -> Tensor:
    """1x1 conv across channels: (B, L, Cin) @ (Cin, Cout), no bias."""
    dx, dw = _data(x), _data(w)
    if dx.ndim != 3 or dw.ndim != 2 or dx.shape[2] != dw.shape[0]:
        raise DimensionError(f"conv1d_pointwise: x {dx.shape}, w {dw.shape}")
    out = np.matmul(dx, dw)

    def bwd(g):
        gx = np.matmul(g, dw.T)
        gw = np.tensordot(dx, g, axes=([0, 1], [0, 1])).astype(_f32)
        return gx, gw

    return record("conv1d_pointwise", (x, w), out, bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    dx, dg, db = _data(x), _data(gamma), _data(beta)
    d = dx.shape[-1]
    if dg.shape != (d,) or db.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma {dg.shape} / beta {db.shape} vs last dim {d}"
        )
    mu = dx.mean(axis=-1, keepdims=True)
    xc = dx - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _f32(eps))
    xhat = xc * inv
    out = xhat * dg + db

    def bwd(g):
        reduce_axes = tuple(range(g.ndim - 1))
        gbeta = g.sum(axis=reduce_axes).astype(_f32)
        ggamma = (g * xhat).sum(axis=reduce_axes).astype(_f32)
        dxhat = g * dg
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        gx = (inv * (dxhat - m1 - xhat * m2)).astype(_f32)
        return gx, ggamma, gbeta

    return record("layer_norm", (x, gamma, beta), out, bwd)


def relu(x: Tensor) -> Tensor:
    dx = _data(x)
    out = np.maximum(dx, 0.0)

    def bwd(g):
        return ((g * (dx > 0.0)).astype(_f32),)

    return record("relu", (x,), out, bwd)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(_data(x))

    def bwd(g):
        return ((g * (1.0 - out * out)).astype(_f32),)

    return record("tanh", (x,), out, bwd)


def sigmoid(x: Tensor) -> Tensor:
    dx = _data(x)
    out = np.empty_like(dx)
    pos = dx >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-dx[pos]))
    ex = np.exp(dx[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return ((g * out * (1.0 - out)).astype(_f32),)

    return record("sigmoid", (x,), out, bwd)


def _softmax_core(x: Tensor, temperature: float, axis: int, kind: str) -> Tensor:
    dx = _data(x)
    z = dx / _f32(temperature)
    m = z.max(axis=axis, keepdims=True)
    e = np.exp(z - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        gz = out * (g - inner)
        return ((gz / _f32(temperature)).astype(_f32),)

    return record(kind, (x,), out, bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return _softmax_core(x, 1.0, axis, "softmax")


def softmax_with_temperature(logits: Tensor, temperature: float, axis: int = -1) -> Tensor:
    """softmax(logits / T). T = 1 reduces to plain softmax bit for bit
    (division by 1.0 is exact); T <= 0 or non-finite is a parameter error."""
    t = float(temperature)
    if not np.isfinite(t) or t <= 0.0:
        raise ParameterError(f"temperature must be finite and > 0, got {temperature}")
    return _softmax_core(logits, t, axis, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    dx = _data(x)
    m = dx.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(dx - m).sum(axis=axis, keepdims=True))
    out = dx - lse

    def bwd(g):
        return ((g - np.exp(out) * g.sum(axis=axis, keepdims=True)).astype(_f32),)

    return record("log_softmax", (x,), out, bwd)


def mean_pool(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Average (B, L, C) over L. With a (B, L) mask, averages non-pad positions
    only; a row with no non-pad positions is a contract error."""
    dx = _data(x)
    if dx.ndim != 3:
        raise DimensionError(f"mean_pool expects (B, L, C), got {dx.shape}")
    b, l, c = dx.shape
    if mask is None:
        out = dx.mean(axis=1)

        def bwd(g):
            return (np.broadcast_to(g[:, None, :] / _f32(l), dx.shape).astype(_f32),)

        return record("mean_pool", (x,), out, bwd)

    m = _check_mask(mask)
    if m.shape != (b, l):
        raise DimensionError(f"mean_pool mask {m.shape} vs x {dx.shape}")
    cnt = m.sum(axis=1)
    if (cnt == 0).any():
        raise ContractError("mean_pool: a sequence has zero non-pad positions")
    out = (dx * m[:, :, None]).sum(axis=1) / cnt[:, None]

    def bwd(g):
        return ((g[:, None, :] * m[:, :, None] / cnt[:, None, None]).astype(_f32),)

    return record("mean_pool", (x,), out, bwd)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout. rate 0 is the identity (returns x itself). Train-path
    only; eval code simply never calls it."""
    rate = float(rate)
    if not (0.0 <= rate < 1.0):
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout with rate > 0 needs an rng")
    dx = _data(x)
    keep = (rng.random(dx.shape) >= rate).astype(_f32)
    scale = _f32(1.0 / (1.0 - rate))
    out = dx * keep * scale

    def bwd(g):
        return ((g * keep * scale).astype(_f32),)

    return record("dropout", (x,), out, bwd)


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Keep x where mask is 1, write `value` where mask is 0. The mask must
    broadcast against x without enlarging it."""
    dx = _data(x)
    m = _check_mask(mask)
    try:
        keep = np.broadcast_to(m, dx.shape)
    except ValueError as e:
        raise DimensionError(f"masked_fill: mask {m.shape} vs x {dx.shape}") from e
    out = np.where(keep == 1.0, dx, _f32(value))

    def bwd(g):
        return ((g * keep).astype(_f32),)

    return record("masked_fill", (x,), out, bwd)


def lstm(x_pre: Tensor, wh: Tensor, mask: np.ndarray) -> Tensor:
    """One LSTM direction over (B, L, 4H) pre-projected inputs with carried
    state at masked steps. Initial state is zero. Returns hidden states
    (B, L, H). Input projections (x @ Wx + b) are the caller's tape ops, so
    their gradients flow through matmul/add, not through this kernel."""
    dxp, dwh = _data(x_pre), _data(wh)
    if dxp.ndim != 3 or dxp.shape[2] % 4 != 0:
        raise DimensionError(f"lstm: x_pre must be (B, L, 4H), got {dxp.shape}")
    h = dxp.shape[2] // 4
    if dwh.shape != (h, 4 * h):
        raise DimensionError(f"lstm: wh {dwh.shape}, expected {(h, 4 * h)}")
    m = _check_mask(mask)
    if m.shape != dxp.shape[:2]:
        raise DimensionError(f"lstm: mask {m.shape} vs x_pre {dxp.shape}")
    b = dxp.shape[0]
    dt = np.result_type(dxp, dwh)
    h0 = np.zeros((b, h), dt)
    c0 = np.zeros((b, h), dt)
    xc = np.ascontiguousarray(dxp)
    wc = np.ascontiguousarray(dwh)
    h_all, i_a, f_a, g_a, o_a, c_a = kernels.lstm_forward(xc, wc, h0, c0, m)

    def bwd(g):
        gx, gwh = kernels.lstm_backward(
            np.ascontiguousarray(g), wc, h0, c0, m, h_all, i_a, f_a, g_a, o_a, c_a
        )
        return gx, gwh

    return record("lstm", (x_pre, wh), h_all, bwd)


def sum_(x: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    dx = _data(x)
    out = dx.sum(axis=axis)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, dx.shape).astype(_f32),)
        g_exp = np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, dx.shape).astype(_f32),)

    return record("sum", (x,), np.asarray(out, dtype=dx.dtype), bwd)


def mean_(x: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    dx = _data(x)
    if axis is None:
        n = dx.size
    elif isinstance(axis, tuple):
        n = int(np.prod([dx.shape[a] for a in axis]))
    else:
        n = dx.shape[axis]
    return scalar_mul(sum_(x, axis=axis), 1.0 / float(n))
