"""Pure-numpy reference implementations of the hot kernels.

Every function here has a jitted twin in `kdkit.kernels.jitted` with the same
signature and semantics. The reference path is the ground truth; the jitted
path must agree to float tolerance (see tests/test_kernels.py).

Shapes use B=batch, L=sequence length, H=hidden width, K=kernel taps,
C=channels, V=vocab rows. Float arrays are float32 in production; the forward
kernels follow the input dtype so the float64 numeric probe in
`tensor.grad_check` stays float64 end to end. `mask` is float32 {0,1},
1 = real token. Masked steps carry state through unchanged, so padded
positions never advance the recurrence.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign to avoid exp overflow warnings at float32 extremes.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_forward(x_pre, wh, h0, c0, mask):
    """Run one LSTM direction over time.

    x_pre: (B, L, 4H) input projections, x @ Wx + b, gate order [i, f, g, o].
    wh: (H, 4H) recurrent weights. h0, c0: (B, H) initial state.
    mask: (B, L).

    Returns (h_all, i_all, f_all, g_all, o_all, c_all); h_all and c_all hold
    the post-mask states, gate arrays hold pre-mask activations.
    """
    B, L, H4 = x_pre.shape
    H = H4 // 4
    dt = np.result_type(x_pre, wh, h0, c0)
    h = h0.astype(dt)
    c = c0.astype(dt)
    h_all = np.empty((B, L, H), dt)
    c_all = np.empty((B, L, H), dt)
    i_all = np.empty((B, L, H), dt)
    f_all = np.empty((B, L, H), dt)
    g_all = np.empty((B, L, H), dt)
    o_all = np.empty((B, L, H), dt)
    for t in range(L):
        z = x_pre[:, t, :] + h @ wh
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        m = mask[:, t : t + 1]
        c = m * c_new + (1.0 - m) * c
        h = m * h_new + (1.0 - m) * h
        i_all[:, t] = i
        f_all[:, t] = f
        g_all[:, t] = g
        o_all[:, t] = o
        c_all[:, t] = c
        h_all[:, t] = h
    return h_all, i_all, f_all, g_all, o_all, c_all


def lstm_backward(dh_all, wh, h0, c0, mask, h_all, i_all, f_all, g_all, o_all, c_all):
    """Reverse pass matching lstm_forward. Returns (dx_pre, dwh).

    dh_all is the gradient w.r.t. the stored h_all. Gate gradients at masked
    steps vanish because every term carries the step's mask factor, so the
    cached post-mask cell states are safe to reuse where masked.
    """
    B, L, H = dh_all.shape
    dx_pre = np.zeros((B, L, 4 * H), np.float32)
    dwh = np.zeros_like(wh)
    dh = np.zeros((B, H), np.float32)
    dc = np.zeros((B, H), np.float32)
    for t in range(L - 1, -1, -1):
        m = mask[:, t : t + 1]
        dh = dh + dh_all[:, t]
        i = i_all[:, t]
        f = f_all[:, t]
        g = g_all[:, t]
        o = o_all[:, t]
        c_prev = c_all[:, t - 1] if t > 0 else c0
        h_prev = h_all[:, t - 1] if t > 0 else h0
        # c_all stores the post-mask state; where m=1 it equals c_new, and
        # where m=0 the dh_new/dc_new factors below are zero anyway.
        tc = np.tanh(c_all[:, t])
        dh_new = m * dh
        dc_new = m * dc
        do = dh_new * tc
        dc_new = dc_new + dh_new * o * (1.0 - tc * tc)
        df = dc_new * c_prev
        di = dc_new * g
        dg = dc_new * i
        dc = dc_new * f + (1.0 - m) * dc
        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        dx_pre[:, t] = dz
        dwh += h_prev.T @ dz
        dh = dz @ wh.T + (1.0 - m) * dh
    return dx_pre, dwh


def dwconv_forward(x, w):
    """Depthwise conv1d, same padding. x: (B, L, C), w: (K, C), K odd."""
    B, L, C = x.shape
    K = w.shape[0]
    p = K // 2
    dt = np.result_type(x, w)
    xp = np.zeros((B, L + K - 1, C), dt)
    xp[:, p : p + L] = x
    y = np.zeros((B, L, C), dt)
    for j in range(K):
        y += w[j] * xp[:, j : j + L]
    return y


def dwconv_backward(dy, x, w):
    """Gradients of dwconv_forward. Returns (dx, dw)."""
    B, L, C = x.shape
    K = w.shape[0]
    p = K // 2
    dyp = np.zeros((B, L + K - 1, C), np.float32)
    dyp[:, p : p + L] = dy
    dx = np.zeros((B, L, C), np.float32)
    for j in range(K):
        dx += w[K - 1 - j] * dyp[:, j : j + L]
    xp = np.zeros((B, L + K - 1, C), np.float32)
    xp[:, p : p + L] = x
    dw = np.zeros_like(w)
    for j in range(K):
        dw[j] = np.sum(dy * xp[:, j : j + L], axis=(0, 1))
    return dx, dw


def scatter_add_rows(table_grad, ids, grad):
    """table_grad[ids[n]] += grad[n] for every flattened position n (in place)."""
    np.add.at(table_grad, ids.reshape(-1), grad.reshape(-1, grad.shape[-1]))
    return table_grad
