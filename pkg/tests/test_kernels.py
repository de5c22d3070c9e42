"""Reference-vs-jitted kernel parity and kernel-level semantics.

The reference kernels are checked against outside oracles (np.correlate,
a hand-evaluated LSTM cell); the jitted kernels are then held to the
reference within float32 tolerance on identical inputs. Parity tests import
both modules directly so they run regardless of the dispatch decision.
"""

import numpy as np
import pytest

from kdkit.kernels import BACKEND
from kdkit.kernels import reference as ref

jit = pytest.importorskip("kdkit.kernels.jitted", reason="numba not installed")

_f32 = np.float32


def _lstm_inputs(seed=0, B=3, L=7, H=5, mask_kind="tail"):
    rng = np.random.default_rng(seed)
    x_pre = rng.normal(0, 1, (B, L, 4 * H)).astype(_f32)
    wh = (rng.normal(0, 0.4, (H, 4 * H)) / np.sqrt(H)).astype(_f32)
    h0 = np.zeros((B, H), _f32)
    c0 = np.zeros((B, H), _f32)
    mask = np.ones((B, L), _f32)
    if mask_kind == "tail":
        mask[0, L - 2 :] = 0.0
        mask[1, L - 1 :] = 0.0
    elif mask_kind == "interior":
        mask[0, 2] = 0.0
        mask[1, 3:5] = 0.0
    return x_pre, wh, h0, c0, mask


def test_backend_reports_selection():
    assert BACKEND in ("numba", "numpy")


# ------------------------------------------------------------- lstm oracle

def test_reference_lstm_matches_hand_cell():
    H = 2
    rng = np.random.default_rng(1)
    x_pre = rng.normal(0, 1, (1, 1, 4 * H)).astype(_f32)
    wh = rng.normal(0, 0.3, (H, 4 * H)).astype(_f32)
    h0 = rng.normal(0, 0.5, (1, H)).astype(_f32)
    c0 = rng.normal(0, 0.5, (1, H)).astype(_f32)
    mask = np.ones((1, 1), _f32)

    z = x_pre[0, 0] + h0[0] @ wh
    sig = lambda v: 1.0 / (1.0 + np.exp(-v.astype(np.float64)))  # noqa: E731
    i = sig(z[:H])
    f = sig(z[H : 2 * H])
    g = np.tanh(z[2 * H : 3 * H].astype(np.float64))
    o = sig(z[3 * H :])
    c = f * c0[0] + i * g
    h = o * np.tanh(c)

    h_all, i_all, f_all, g_all, o_all, c_all = ref.lstm_forward(x_pre, wh, h0, c0, mask)
    np.testing.assert_allclose(h_all[0, 0], h, atol=1e-6)
    np.testing.assert_allclose(c_all[0, 0], c, atol=1e-6)
    np.testing.assert_allclose(i_all[0, 0], i, atol=1e-6)
    np.testing.assert_allclose(f_all[0, 0], f, atol=1e-6)
    np.testing.assert_allclose(g_all[0, 0], g, atol=1e-6)
    np.testing.assert_allclose(o_all[0, 0], o, atol=1e-6)


def test_reference_lstm_gate_order_is_ifgo():
    # i and o saturated open, f closed, g = tanh(atanh(0.5)): c=0.5, h=o*tanh(c)
    H = 3
    x_pre = np.zeros((1, 1, 4 * H), _f32)
    x_pre[0, 0, :H] = 20.0
    x_pre[0, 0, H : 2 * H] = -20.0
    x_pre[0, 0, 2 * H : 3 * H] = np.arctanh(0.5)
    x_pre[0, 0, 3 * H :] = 20.0
    wh = np.zeros((H, 4 * H), _f32)
    h0 = np.zeros((1, H), _f32)
    c0 = np.full((1, H), 7.0, _f32)  # f=0 must erase this
    mask = np.ones((1, 1), _f32)
    h_all, *_, c_all = ref.lstm_forward(x_pre, wh, h0, c0, mask)
    np.testing.assert_allclose(c_all[0, 0], 0.5, atol=1e-6)
    np.testing.assert_allclose(h_all[0, 0], np.tanh(0.5), atol=1e-6)


def test_reference_lstm_mask_freezes_state():
    x_pre, wh, h0, c0, mask = _lstm_inputs(seed=2, mask_kind="interior")
    h_all, *_, c_all = ref.lstm_forward(x_pre, wh, h0, c0, mask)
    # row 0 is masked at t=2: state must equal t=1 exactly
    np.testing.assert_array_equal(h_all[0, 2], h_all[0, 1])
    np.testing.assert_array_equal(c_all[0, 2], c_all[0, 1])
    # row 1 masked at t=3,4
    np.testing.assert_array_equal(h_all[1, 4], h_all[1, 2])
    np.testing.assert_array_equal(c_all[1, 4], c_all[1, 2])


def test_reference_lstm_backward_zero_at_masked_steps():
    x_pre, wh, h0, c0, mask = _lstm_inputs(seed=3, mask_kind="interior")
    outs = ref.lstm_forward(x_pre, wh, h0, c0, mask)
    dh_all = np.random.default_rng(4).normal(0, 1, outs[0].shape).astype(_f32)
    dx_pre, _ = ref.lstm_backward(dh_all, wh, h0, c0, mask, *outs)
    assert not dx_pre[0, 2].any()
    assert not dx_pre[1, 3].any()
    assert not dx_pre[1, 4].any()
    assert dx_pre[2].any()


def test_reference_lstm_backward_matches_finite_differences():
    rng = np.random.default_rng(5)
    B, L, H = 2, 4, 3
    x_pre, wh, h0, c0, mask = _lstm_inputs(seed=5, B=B, L=L, H=H, mask_kind="tail")
    proj = rng.normal(0, 1, (B, L, H)).astype(_f32)

    def value(xp64, wh64):
        h_all, *_ = ref.lstm_forward(xp64, wh64, h0.astype(np.float64),
                                     c0.astype(np.float64), mask)
        return float((h_all * proj).sum())

    outs = ref.lstm_forward(x_pre, wh, h0, c0, mask)
    dh_all = (proj * 1.0).astype(_f32)
    dx_pre, dwh = ref.lstm_backward(dh_all, wh, h0, c0, mask, *outs)

    eps = 1e-6
    x64 = x_pre.astype(np.float64)
    w64 = wh.astype(np.float64)
    for idx in [(0, 0, 0), (0, 2, 5), (1, 3, 4 * H - 1), (1, 1, 7)]:
        bump = np.zeros_like(x64)
        bump[idx] = eps
        num = (value(x64 + bump, w64) - value(x64 - bump, w64)) / (2 * eps)
        np.testing.assert_allclose(dx_pre[idx], num, rtol=1e-3, atol=1e-5)
    for idx in [(0, 0), (2, 7), (H - 1, 4 * H - 1)]:
        bump = np.zeros_like(w64)
        bump[idx] = eps
        num = (value(x64, w64 + bump) - value(x64, w64 - bump)) / (2 * eps)
        np.testing.assert_allclose(dwh[idx], num, rtol=1e-3, atol=1e-5)


# ------------------------------------------------------------- dwconv oracle

def test_reference_dwconv_matches_correlate():
    rng = np.random.default_rng(6)
    B, L, C, K = 2, 9, 4, 5
    x = rng.normal(0, 1, (B, L, C)).astype(_f32)
    w = rng.normal(0, 1, (K, C)).astype(_f32)
    y = ref.dwconv_forward(x, w)
    for b in range(B):
        for c in range(C):
            oracle = np.correlate(
                x[b, :, c].astype(np.float64), w[:, c].astype(np.float64), mode="same"
            )
            np.testing.assert_allclose(y[b, :, c], oracle, atol=1e-5)


def test_reference_dwconv_backward_matches_finite_differences():
    rng = np.random.default_rng(7)
    B, L, C, K = 1, 6, 2, 3
    x = rng.normal(0, 1, (B, L, C)).astype(_f32)
    w = rng.normal(0, 1, (K, C)).astype(_f32)
    proj = rng.normal(0, 1, (B, L, C)).astype(_f32)
    dy = proj.copy()
    dx, dw = ref.dwconv_backward(dy, x, w)

    def value(x64, w64):
        return float((ref.dwconv_forward(x64, w64) * proj).sum())

    eps = 1e-6
    x64, w64 = x.astype(np.float64), w.astype(np.float64)
    for idx in [(0, 0, 0), (0, 3, 1), (0, 5, 0)]:
        bump = np.zeros_like(x64)
        bump[idx] = eps
        num = (value(x64 + bump, w64) - value(x64 - bump, w64)) / (2 * eps)
        np.testing.assert_allclose(dx[idx], num, rtol=1e-3, atol=1e-6)
    for idx in [(0, 0), (1, 1), (2, 0)]:
        bump = np.zeros_like(w64)
        bump[idx] = eps
        num = (value(x64, w64 + bump) - value(x64, w64 - bump)) / (2 * eps)
        np.testing.assert_allclose(dw[idx], num, rtol=1e-3, atol=1e-6)


# ------------------------------------------------------------- scatter oracle

def test_reference_scatter_add_accumulates_duplicates():
    table = np.zeros((6, 3), _f32)
    ids = np.array([[0, 2], [2, 5]])
    grad = np.arange(12, dtype=_f32).reshape(2, 2, 3)
    out = ref.scatter_add_rows(table, ids, grad)
    assert out is table  # in place
    np.testing.assert_array_equal(table[0], [0, 1, 2])
    np.testing.assert_array_equal(table[2], [3 + 6, 4 + 7, 5 + 8])
    np.testing.assert_array_equal(table[5], [9, 10, 11])
    np.testing.assert_array_equal(table[1], [0, 0, 0])


# ------------------------------------------------------------- jitted parity

@pytest.mark.parametrize("mask_kind", ["ones", "tail", "interior"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_lstm_forward_parity(seed, mask_kind):
    args = _lstm_inputs(seed=seed, mask_kind=mask_kind)
    for r, j in zip(ref.lstm_forward(*args), jit.lstm_forward(*args)):
        assert j.dtype == np.float32
        np.testing.assert_allclose(r, j, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("mask_kind", ["ones", "tail", "interior"])
@pytest.mark.parametrize("seed", [0, 1])
def test_lstm_backward_parity(seed, mask_kind):
    x_pre, wh, h0, c0, mask = _lstm_inputs(seed=seed, mask_kind=mask_kind)
    outs = ref.lstm_forward(x_pre, wh, h0, c0, mask)
    dh_all = np.random.default_rng(seed + 10).normal(0, 1, outs[0].shape).astype(_f32)
    r_dx, r_dwh = ref.lstm_backward(dh_all, wh, h0, c0, mask, *outs)
    j_dx, j_dwh = jit.lstm_backward(dh_all, wh, h0, c0, mask, *outs)
    np.testing.assert_allclose(r_dx, j_dx, rtol=1e-4, atol=1e-5)
    np.testing.assert_allclose(r_dwh, j_dwh, rtol=1e-4, atol=1e-4)


@pytest.mark.parametrize("shape", [(1, 5, 3, 3), (2, 9, 4, 5), (3, 4, 2, 7)])
def test_dwconv_parity(shape):
    B, L, C, K = shape
    rng = np.random.default_rng(B + L)
    x = rng.normal(0, 1, (B, L, C)).astype(_f32)
    w = rng.normal(0, 1, (K, C)).astype(_f32)
    np.testing.assert_allclose(
        ref.dwconv_forward(x, w), jit.dwconv_forward(x, w), rtol=1e-5, atol=1e-6
    )
    dy = rng.normal(0, 1, (B, L, C)).astype(_f32)
    r_dx, r_dw = ref.dwconv_backward(dy, x, w)
    j_dx, j_dw = jit.dwconv_backward(dy, x, w)
    np.testing.assert_allclose(r_dx, j_dx, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(r_dw, j_dw, rtol=1e-5, atol=1e-5)


def test_scatter_parity():
    rng = np.random.default_rng(8)
    ids = rng.integers(0, 20, size=(4, 6))
    grad = rng.normal(0, 1, (4, 6, 5)).astype(_f32)
    a = ref.scatter_add_rows(np.zeros((20, 5), _f32), ids, grad)
    b = jit.scatter_add_rows(np.zeros((20, 5), _f32), ids, grad)
    np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-6)


def test_dispatch_gates_float64_to_reference():
    # the package-level wrappers must not hand float64 probes to the jitted path
    from kdkit import kernels

    x_pre, wh, h0, c0, mask = _lstm_inputs(seed=9, mask_kind="tail")
    out64 = kernels.lstm_forward(
        x_pre.astype(np.float64), wh.astype(np.float64),
        h0.astype(np.float64), c0.astype(np.float64), mask,
    )
    assert out64[0].dtype == np.float64
    rng = np.random.default_rng(10)
    x = rng.normal(0, 1, (2, 5, 3))
    w = rng.normal(0, 1, (3, 3))
    assert kernels.dwconv_forward(x, w).dtype == np.float64
