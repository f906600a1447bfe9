"""Hard pseudo-labels from couplings or predictions, and same-cluster sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_matrix

__all__ = [
    "PseudoLabels",
    "labels_from_plan",
    "labels_from_prediction",
    "same_cluster_sets",
]


@dataclass
class PseudoLabels:
    """0-based cluster index per sample plus the cluster count."""

    labels: np.ndarray
    k: int

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1:
            raise ValueError("labels must be 1-D")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise ValueError("labels must lie in [0, k)")

    def __len__(self) -> int:
        return self.labels.size


def labels_from_plan(q) -> PseudoLabels:
    """Per-row argmax of the coupling; ties break to the lowest column index."""
    q = as_matrix(q, "q")
    return PseudoLabels(labels=np.argmax(q, axis=1), k=q.shape[1])


def labels_from_prediction(p) -> PseudoLabels:
    """Per-row argmax of raw predictions (each sample labeled independently)."""
    p = as_matrix(p, "p")
    return PseudoLabels(labels=np.argmax(p, axis=1), k=p.shape[1])


def same_cluster_sets(pl: PseudoLabels) -> list[np.ndarray]:
    """For each sample i, the sorted indices of all samples sharing its label.

    i is always a member of its own set, and the sets form equivalence
    classes: j in R_i iff i in R_j.
    """
    members = [np.flatnonzero(pl.labels == c) for c in range(pl.k)]
    return [members[int(lab)] for lab in pl.labels]
