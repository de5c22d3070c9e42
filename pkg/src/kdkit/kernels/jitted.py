"""numba @njit twins of the reference kernels.

Same signatures and semantics as `kdkit.kernels.reference`; see that module
for the shape conventions. np.dot calls hit BLAS in nopython mode, so the
recurrent matmuls stay fast; everything elementwise is explicit loops.
Importing this module without numba installed raises ImportError, which the
package-level dispatch treats as "fall back to numpy".
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def lstm_forward(x_pre, wh, h0, c0, mask):
    B, L, H4 = x_pre.shape
    H = H4 // 4
    h = h0.copy()
    c = c0.copy()
    h_all = np.empty((B, L, H), np.float32)
    c_all = np.empty((B, L, H), np.float32)
    i_all = np.empty((B, L, H), np.float32)
    f_all = np.empty((B, L, H), np.float32)
    g_all = np.empty((B, L, H), np.float32)
    o_all = np.empty((B, L, H), np.float32)
    for t in range(L):
        z = np.dot(h, wh)
        for b in range(B):
            m = mask[b, t]
            for j in range(H):
                zi = x_pre[b, t, j] + z[b, j]
                zf = x_pre[b, t, H + j] + z[b, H + j]
                zg = x_pre[b, t, 2 * H + j] + z[b, 2 * H + j]
                zo = x_pre[b, t, 3 * H + j] + z[b, 3 * H + j]
                i = 1.0 / (1.0 + np.exp(-zi))
                f = 1.0 / (1.0 + np.exp(-zf))
                g = np.tanh(zg)
                o = 1.0 / (1.0 + np.exp(-zo))
                c_new = f * c[b, j] + i * g
                h_new = o * np.tanh(c_new)
                c[b, j] = m * c_new + (1.0 - m) * c[b, j]
                h[b, j] = m * h_new + (1.0 - m) * h[b, j]
                i_all[b, t, j] = i
                f_all[b, t, j] = f
                g_all[b, t, j] = g
                o_all[b, t, j] = o
                c_all[b, t, j] = c[b, j]
                h_all[b, t, j] = h[b, j]
    return h_all, i_all, f_all, g_all, o_all, c_all


@njit(cache=True)
def lstm_backward(dh_all, wh, h0, c0, mask, h_all, i_all, f_all, g_all, o_all, c_all):
    B, L, H = dh_all.shape
    dx_pre = np.zeros((B, L, 4 * H), np.float32)
    dwh = np.zeros_like(wh)
    dh = np.zeros((B, H), np.float32)
    dc = np.zeros((B, H), np.float32)
    dz = np.empty((B, 4 * H), np.float32)
    h_prev = np.empty((B, H), np.float32)
    for t in range(L - 1, -1, -1):
        for b in range(B):
            m = mask[b, t]
            for j in range(H):
                if t > 0:
                    c_prev = c_all[b, t - 1, j]
                    h_prev[b, j] = h_all[b, t - 1, j]
                else:
                    c_prev = c0[b, j]
                    h_prev[b, j] = h0[b, j]
                i = i_all[b, t, j]
                f = f_all[b, t, j]
                g = g_all[b, t, j]
                o = o_all[b, t, j]
                tc = np.tanh(c_all[b, t, j])
                dhj = dh[b, j] + dh_all[b, t, j]
                dh_new = m * dhj
                dc_new = m * dc[b, j] + dh_new * o * (1.0 - tc * tc)
                do = dh_new * tc
                df = dc_new * c_prev
                di = dc_new * g
                dg = dc_new * i
                dc[b, j] = dc_new * f + (1.0 - m) * dc[b, j]
                dz[b, j] = di * i * (1.0 - i)
                dz[b, H + j] = df * f * (1.0 - f)
                dz[b, 2 * H + j] = dg * (1.0 - g * g)
                dz[b, 3 * H + j] = do * o * (1.0 - o)
                # stash m*dh for the recurrent term; completed after the dot
                dh[b, j] = (1.0 - m) * dhj
        dx_pre[:, t, :] = dz
        dwh += np.dot(np.ascontiguousarray(h_prev.T), dz)
        dh += np.dot(dz, np.ascontiguousarray(wh.T))
    return dx_pre, dwh


@njit(cache=True)
def dwconv_forward(x, w):
    B, L, C = x.shape
    K = w.shape[0]
    p = K // 2
    y = np.zeros((B, L, C), np.float32)
    for b in range(B):
        for t in range(L):
            for j in range(K):
                s = t + j - p
                if 0 <= s < L:
                    for c in range(C):
                        y[b, t, c] += w[j, c] * x[b, s, c]
    return y


@njit(cache=True)
def dwconv_backward(dy, x, w):
    B, L, C = x.shape
    K = w.shape[0]
    p = K // 2
    dx = np.zeros((B, L, C), np.float32)
    dw = np.zeros_like(w)
    for b in range(B):
        for t in range(L):
            for j in range(K):
                s = t + j - p
                if 0 <= s < L:
                    for c in range(C):
                        dx[b, s, c] += w[j, c] * dy[b, t, c]
                        dw[j, c] += dy[b, t, c] * x[b, s, c]
    return dx, dw


@njit(cache=True)
def scatter_add_rows(table_grad, ids, grad):
    flat_ids = ids.reshape(-1)
    H = grad.shape[-1]
    flat = grad.reshape(-1, H)
    for n in range(flat_ids.shape[0]):
        r = flat_ids[n]
        for j in range(H):
            table_grad[r, j] += flat[n, j]
    return table_grad
