"""Distillation and supervised losses.

Three distillation modes against teacher logits:
  mse   mean squared error on raw logits, mean over non-pad elements
  kld   KL(teacher || student) of temperature-softened distributions,
        mean over non-pad positions
  hard  cross-entropy against the teacher's argmax labels

Logit tensors may be (C,), (B, C), or (B, L, C); the last form takes a
(B, L) pad mask and ignores padded positions entirely.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import ContractError, DimensionError, ParameterError
from .tensor import Tensor

_f32 = np.float32

LOSS_MODES = ("mse", "kld", "hard")


def softmax_np(logits: np.ndarray, temperature: float = 1.0, axis: int = -1) -> np.ndarray:
    """Plain-numpy temperature softmax for non-differentiable paths."""
    if not np.isfinite(temperature) or temperature <= 0:
        raise ParameterError(f"temperature must be finite and > 0, got {temperature}")
    z = np.asarray(logits, dtype=_f32) / _f32(temperature)
    m = z.max(axis=axis, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=axis, keepdims=True)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) = sum p * log(p/q) over the last axis, summed to a scalar.
    Terms with p=0 contribute 0 (the 0*log 0 convention)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"kl_divergence: {p.shape} vs {q.shape}")
    if (q <= 0).any() and ((p > 0) & (q <= 0)).any():
        raise ParameterError("kl_divergence undefined: p > 0 where q = 0")
    terms = np.where(p > 0, p * (np.log(np.where(p > 0, p, 1.0)) - np.log(np.where(q > 0, q, 1.0))), 0.0)
    return float(terms.sum())


def hard_labels_from_logits(logits: np.ndarray) -> np.ndarray:
    """Argmax over the class axis; ties resolve to the lowest index."""
    return np.argmax(np.asarray(logits), axis=-1)


def _mask_and_counts(
    student: Tensor, pad_mask: np.ndarray | None
) -> tuple[np.ndarray | None, int]:
    """Validated (B, L) mask (or None) and the number of scored positions."""
    shape = student.shape
    if len(shape) == 3:
        b, l, _ = shape
        if pad_mask is None:
            return None, b * l
        m = np.asarray(pad_mask, dtype=_f32)
        if m.shape != (b, l):
            raise DimensionError(f"pad_mask {m.shape} vs logits {shape}")
        n = int(m.sum())
        if n == 0:
            raise ContractError("loss over zero non-pad positions")
        return m, n
    if pad_mask is not None:
        raise ContractError("pad_mask only applies to (B, L, C) logits")
    if len(shape) == 2:
        return None, shape[0]
    if len(shape) == 1:
        return None, 1
    raise DimensionError(f"logits must be 1-D, 2-D or 3-D, got {shape}")


def distill_loss(
    student_logits: Tensor,
    teacher_logits: np.ndarray,
    mode: str = "mse",
    temperature: float = 1.0,
    pad_mask: np.ndarray | None = None,
) -> Tensor:
    """Scalar distillation loss of a student against fixed teacher logits."""
    if mode not in LOSS_MODES:
        raise ParameterError(f"unknown loss mode {mode!r}, expected one of {LOSS_MODES}")
    if not np.isfinite(temperature) or temperature <= 0:
        raise ParameterError(f"temperature must be finite and > 0, got {temperature}")
    t = np.asarray(teacher_logits, dtype=_f32)
    if t.shape != student_logits.shape:
        raise DimensionError(
            f"student logits {student_logits.shape} vs teacher logits {t.shape}"
        )
    mask, n_pos = _mask_and_counts(student_logits, pad_mask)
    c = student_logits.shape[-1]

    if mode == "mse":
        d = ops.sub(student_logits, Tensor(t))
        sq = ops.mul(d, d)
        if mask is not None:
            sq = ops.mul(sq, Tensor(mask[:, :, None]))
        return ops.scalar_mul(ops.sum_(sq), 1.0 / float(n_pos * c))

    if mode == "kld":
        p_t = softmax_np(t, temperature)
        log_q = ops.log_softmax(ops.scalar_mul(student_logits, 1.0 / temperature))
        cross = ops.mul(Tensor(p_t), log_q)
        if mask is not None:
            cross = ops.mul(cross, Tensor(mask[:, :, None]))
        neg_cross = ops.scalar_mul(ops.sum_(cross), -1.0 / float(n_pos))
        ent_terms = np.where(p_t > 0, p_t * np.log(np.where(p_t > 0, p_t, 1.0)), 0.0)
        if mask is not None:
            ent_terms = ent_terms * mask[:, :, None]
        entropy = float(ent_terms.sum()) / float(n_pos)
        return ops.add(neg_cross, Tensor(_f32(entropy)))

    labels = hard_labels_from_logits(t)
    return cross_entropy(student_logits, labels, pad_mask=pad_mask)


def cross_entropy(
    logits: Tensor,
    labels: np.ndarray,
    pad_mask: np.ndarray | None = None,
) -> Tensor:
    """Mean negative log-likelihood of integer labels; padded positions are
    excluded when a mask is given."""
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise ContractError("labels must be integers")
    if labels.shape != logits.shape[:-1]:
        raise DimensionError(f"labels {labels.shape} vs logits {logits.shape}")
    c = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ContractError(f"label outside [0, {c})")
    mask, n_pos = _mask_and_counts(logits, pad_mask)
    onehot = np.eye(c, dtype=_f32)[labels]
    picked = ops.mul(ops.log_softmax(logits), Tensor(onehot))
    if mask is not None:
        picked = ops.mul(picked, Tensor(mask[:, :, None]))
    return ops.scalar_mul(ops.sum_(picked), -1.0 / float(n_pos))
