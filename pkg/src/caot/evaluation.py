"""Clustering metrics: Hungarian-matched accuracy and normalized mutual information."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import as_matrix

__all__ = ["hungarian", "accuracy", "nmi"]


def hungarian(cost) -> np.ndarray:
    """Minimum-cost assignment of a square cost matrix.

    Returns perm with perm[i] the column assigned to row i.
    """
    cost = as_matrix(cost, "cost")
    if cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    _, cols = linear_sum_assignment(cost)
    return cols


def _check_labels(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.ndim != 1 or y_pred.ndim != 1:
        raise ValueError("label vectors must be 1-D")
    if y_true.size != y_pred.size:
        raise ValueError(f"label length mismatch: {y_true.size} vs {y_pred.size}")
    if y_true.size == 0:
        raise ValueError("label vectors must be non-empty")
    if y_true.min() < 0 or y_pred.min() < 0:
        raise ValueError("labels must be nonnegative")
    return y_true, y_pred


def _contingency(y_true: np.ndarray, y_pred: np.ndarray) -> np.ndarray:
    k = int(max(y_true.max(), y_pred.max())) + 1
    w = np.zeros((k, k), dtype=np.int64)
    np.add.at(w, (y_true, y_pred), 1)
    return w


def accuracy(y_true, y_pred) -> float:
    """Clustering accuracy: matched fraction under the best cluster-to-class map.

    The map is the Hungarian assignment on the negated contingency matrix, so
    any relabeling permutation of either argument leaves the score unchanged.
    """
    y_true, y_pred = _check_labels(y_true, y_pred)
    w = _contingency(y_true, y_pred)
    perm = hungarian(-w.astype(np.float64))
    matched = w[np.arange(w.shape[0]), perm].sum()
    return float(matched) / y_true.size


def nmi(y_true, y_pred) -> float:
    """Mutual information normalized by the geometric mean of label entropies.

    Natural-log entropies from empirical joint counts, with 0 log 0 = 0. If
    either labeling has zero entropy the ratio is undefined and 0 is returned.
    """
    y_true, y_pred = _check_labels(y_true, y_pred)
    n = y_true.size
    w = _contingency(y_true, y_pred).astype(np.float64) / n
    pt = w.sum(axis=1)
    pp = w.sum(axis=0)

    def entropy(p: np.ndarray) -> float:
        nz = p[p > 0]
        return float(-(nz * np.log(nz)).sum())

    ht = entropy(pt)
    hp = entropy(pp)
    if ht <= 0 or hp <= 0:
        return 0.0
    outer = pt[:, None] * pp[None, :]
    nz = w > 0
    info = float((w[nz] * np.log(w[nz] / outer[nz])).sum())
    return info / np.sqrt(ht * hp)
