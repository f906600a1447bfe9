"""Dense float64 primitives shared by the solver, similarity, and loss modules."""

from __future__ import annotations

import numpy as np

__all__ = [
    "NumericError",
    "as_matrix",
    "as_vector",
    "softmax_rows",
    "logsumexp_row",
    "logsumexp",
    "clamp_log",
]


class NumericError(RuntimeError):
    """An iterative numeric routine failed to reach its target accuracy."""


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite float64 2-D array, raising ValueError otherwise."""
    out = np.asarray(m, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def as_vector(v, name: str = "vector") -> np.ndarray:
    """Coerce to a finite float64 1-D array, raising ValueError otherwise."""
    out = np.asarray(v, dtype=np.float64)
    if out.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction.

    Each output row is nonnegative and sums to 1; stable for logits of any
    magnitude because the row maximum is shifted out before exponentiation.
    """
    m = as_matrix(m, "softmax input")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def logsumexp_row(v) -> float:
    """log(sum(exp(v))) for a 1-D vector, exact under max shift."""
    v = as_vector(v, "logsumexp input")
    m = v.max()
    return float(m + np.log(np.exp(v - m).sum()))


def logsumexp(m: np.ndarray, axis: int) -> np.ndarray:
    """log(sum(exp(m), axis)) along one axis of a 2-D array, max-shifted."""
    mx = m.max(axis=axis, keepdims=True)
    out = mx.squeeze(axis=axis) + np.log(np.exp(m - mx).sum(axis=axis))
    return out


def clamp_log(m, floor: float) -> np.ndarray:
    """Elementwise log(max(m, floor)); guards logs of vanishing probabilities."""
    if floor <= 0:
        raise ValueError("floor must be positive")
    m = as_matrix(m, "clamp_log input")
    return np.log(np.maximum(m, floor))
