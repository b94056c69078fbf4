"""Stable kernels for categorical distributions kept in natural-log space.

Distributions handed to :func:`kl_divergence` are assumed strictly positive,
which holds for anything produced by :func:`log_softmax` on finite logits, so
no ``0 * log 0`` convention is needed.
"""

from __future__ import annotations

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an operation receives malformed or out-of-range input."""


def _as_finite(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def logsumexp(values, axis: int = -1) -> np.ndarray | float:
    """Max-shifted ``log(sum(exp(values)))`` along ``axis``."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0 or arr.shape[axis] == 0:
        raise InvalidInputError("logsumexp of an empty vector")
    m = np.max(arr, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(arr - m), axis=axis, keepdims=True)) + m
    out = np.squeeze(out, axis=axis)
    return float(out) if out.ndim == 0 else out


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    """Normalized log-probabilities; invariant to adding a constant to ``logits``.

    Works on a single logit vector or on a stack of them (last axis = vocabulary).
    """
    arr = _as_finite(logits, "logits")
    if arr.ndim == 0 or arr.shape[axis] < 2:
        raise InvalidInputError("logit vectors need at least two entries")
    shifted = arr - np.max(arr, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def kl_divergence(p_log, q_log, axis: int = -1) -> np.ndarray | float:
    """``sum p * (log p - log q)`` for log-space distributions ``p_log``, ``q_log``.

    Broadcasts over leading axes, so a (T, V) pair gives T per-position values.
    """
    p = np.asarray(p_log, dtype=np.float64)
    q = np.asarray(q_log, dtype=np.float64)
    if p.shape != q.shape:
        raise InvalidInputError(f"shape mismatch: {p.shape} vs {q.shape}")
    out = np.sum(np.exp(p) * (p - q), axis=axis)
    # Rounding can leave tiny negatives for nearly equal inputs.
    out = np.maximum(out, 0.0)
    return float(out) if np.ndim(out) == 0 else out
