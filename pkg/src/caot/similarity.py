"""Semantic similarity between samples: probability-cosine plus attention.

The combined matrix fed to the transport solver is S = S_cos + S_att, where
S_cos is the cosine similarity of predicted probability rows and S_att is the
average of the row-stochastic attention maps of the two augmented views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import as_matrix, softmax_rows

__all__ = [
    "AttentionParams",
    "AttentionOut",
    "attention_forward",
    "attention_similarity",
    "cosine_matrix",
    "combine_similarity",
]


@dataclass
class AttentionParams:
    """The three square projection matrices of the instance-level attention net."""

    w_k1: np.ndarray
    w_k2: np.ndarray
    w_t: np.ndarray

    def __post_init__(self) -> None:
        self.w_k1 = as_matrix(self.w_k1, "w_k1")
        self.w_k2 = as_matrix(self.w_k2, "w_k2")
        self.w_t = as_matrix(self.w_t, "w_t")
        d = self.w_k1.shape[0]
        for name, w in (("w_k1", self.w_k1), ("w_k2", self.w_k2), ("w_t", self.w_t)):
            if w.shape != (d, d):
                raise ValueError(f"{name} must be square of size {d}, got {w.shape}")

    @property
    def dim(self) -> int:
        return self.w_k1.shape[0]

    @property
    def scale(self) -> float:
        """Logit scale sqrt(D2) used by the attention softmax."""
        return float(np.sqrt(self.dim))

    @classmethod
    def random(cls, d2: int, rng: np.random.Generator) -> "AttentionParams":
        scale = 1.0 / np.sqrt(d2)
        return cls(
            w_k1=rng.normal(0.0, scale, size=(d2, d2)),
            w_k2=rng.normal(0.0, scale, size=(d2, d2)),
            w_t=rng.normal(0.0, scale, size=(d2, d2)),
        )


@dataclass
class AttentionOut:
    """Row-stochastic similarity map and re-aggregated representations."""

    s_view: np.ndarray
    h_view: np.ndarray


def attention_forward(z, params: AttentionParams) -> AttentionOut:
    """Single attention pass over projected representations z (N x D2).

    Computes K1 = z W_K1, K2 = z W_K2, T = z W_T, then the row-softmax
    similarity S = softmax(K1 K2^T / sqrt(D2)) and the aggregated output
    H = S T, so each output row is a convex combination of T rows.
    """
    z = as_matrix(z, "z")
    if z.shape[1] != params.dim:
        raise ValueError(f"z has width {z.shape[1]}, attention params expect {params.dim}")
    k1 = z @ params.w_k1
    k2 = z @ params.w_k2
    t = z @ params.w_t
    s = softmax_rows(k1 @ k2.T / params.scale)
    return AttentionOut(s_view=s, h_view=s @ t)


def attention_similarity(s1, s2) -> np.ndarray:
    """Average the two views' attention maps; stays row-stochastic."""
    s1 = as_matrix(s1, "s1")
    s2 = as_matrix(s2, "s2")
    if s1.shape != s2.shape or s1.shape[0] != s1.shape[1]:
        raise ValueError(f"attention maps must be square and same shape, got {s1.shape} and {s2.shape}")
    return 0.5 * (s1 + s2)


def cosine_matrix(p0) -> np.ndarray:
    """Pairwise cosine similarity of the rows of p0 (symmetric, unit diagonal)."""
    p0 = as_matrix(p0, "p0")
    norms = np.linalg.norm(p0, axis=1)
    if np.any(norms <= 0):
        raise ValueError("cosine_matrix requires nonzero rows")
    u = p0 / norms[:, None]
    return u @ u.T


def combine_similarity(s_cos, s_att) -> np.ndarray:
    """Elementwise sum of the cosine and attention similarity matrices."""
    s_cos = as_matrix(s_cos, "s_cos")
    s_att = as_matrix(s_att, "s_att")
    if s_cos.shape != s_att.shape:
        raise ValueError(f"shape mismatch: {s_cos.shape} vs {s_att.shape}")
    return s_cos + s_att
