"""Attention, cluster-level, and instance-level losses plus gradient utilities.

The attention loss pulls same-cluster aggregated representations together,
weighting each positive by its attention similarity; the cluster loss is
cross-entropy of both augmented views against the hard pseudo-labels; the
instance loss is a contrastive pairing of the two views of each sample whose
denominator, as evaluated here, sums only over other samples' views (the
positive pair itself is excluded).

Finite-difference gradients serve as the universal training fallback and as
the oracle for the analytic parameter gradients used at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NumericError, as_matrix
from .labeling import PseudoLabels
from .similarity import AttentionParams, softmax_rows

__all__ = [
    "Temperatures",
    "LossValue",
    "cos_sim",
    "attention_loss",
    "cluster_loss",
    "instance_loss",
    "combined_loss",
    "fd_gradient",
    "cluster_head_gradient",
    "instance_head_gradient",
    "attention_head_gradients",
]

_PROB_FLOOR = 1e-30


@dataclass(frozen=True)
class Temperatures:
    """Softmax temperatures: tau_a for the attention loss, tau_i for the instance loss."""

    tau_a: float = 1.0
    tau_i: float = 1.0

    def __post_init__(self) -> None:
        if self.tau_a <= 0 or self.tau_i <= 0:
            raise ValueError("temperatures must be > 0")


@dataclass
class LossValue:
    """Batch loss with optional per-anchor terms (value is their mean)."""

    value: float
    per_sample: np.ndarray | None = None


def cos_sim(u, v) -> float:
    """Cosine similarity of two nonzero vectors, in [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu <= 0 or nv <= 0:
        raise ValueError("cos_sim requires nonzero vectors")
    return float(u @ v / (nu * nv))


def _normalize_rows(m: np.ndarray, name: str) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms <= 0):
        raise ValueError(f"{name} contains a zero row")
    return m / norms[:, None]


def _membership_mask(r: list, n: int) -> np.ndarray:
    mask = np.zeros((n, n), dtype=bool)
    for i, idx in enumerate(r):
        mask[i, np.asarray(idx, dtype=np.int64)] = True
    return mask


def attention_loss(h1, h2, s_att, r, temps: Temperatures) -> LossValue:
    """Similarity-weighted contrastive loss over the stacked views [h1; h2].

    For sample i the anchors are rows i and N+i of the 2N-row stack. Each
    anchor's numerator sums s_att[i, j] * (exp(sim to h_j) + exp(sim to
    h_{N+j})) over the same-cluster set j in R_i (including j = i), and each
    denominator sums exp(sim to h_v) over all v != i. The returned value is
    the sum of all 2N anchor terms divided by 2N.
    """
    h1 = as_matrix(h1, "h1")
    h2 = as_matrix(h2, "h2")
    s_att = as_matrix(s_att, "s_att")
    n = h1.shape[0]
    if n < 2:
        raise ValueError("attention_loss requires at least 2 samples")
    if h2.shape != h1.shape:
        raise ValueError(f"h1/h2 shape mismatch: {h1.shape} vs {h2.shape}")
    if s_att.shape != (n, n):
        raise ValueError(f"s_att must be {n}x{n}, got {s_att.shape}")
    if len(r) != n:
        raise ValueError("same-cluster sets must cover every sample")

    u = _normalize_rows(np.vstack([h1, h2]), "stacked h")
    e = np.exp((u @ u.T) / temps.tau_a)
    idx = np.arange(n)
    row_sum = e.sum(axis=1)
    den1 = row_sum[:n] - e[idx, idx]
    den2 = row_sum[n:] - e[n + idx, idx]

    w = np.where(_membership_mask(r, n), s_att, 0.0)
    num1 = (w * (e[:n, :n] + e[:n, n:])).sum(axis=1)
    num2 = (w * (e[n:, :n] + e[n:, n:])).sum(axis=1)
    if np.any(num1 <= 0) or np.any(num2 <= 0):
        raise ValueError("attention_loss needs positive similarity weight on each cluster set")

    terms = np.concatenate([np.log(den1) - np.log(num1), np.log(den2) - np.log(num2)])
    return LossValue(value=float(terms.mean()), per_sample=terms)


def cluster_loss(y_hat: PseudoLabels, p1, p2, prob_floor: float = _PROB_FLOOR) -> LossValue:
    """Cross-entropy of both views' probabilities against the pseudo-labels."""
    p1 = as_matrix(p1, "p1")
    p2 = as_matrix(p2, "p2")
    if p1.shape != p2.shape:
        raise ValueError(f"p1/p2 shape mismatch: {p1.shape} vs {p2.shape}")
    labels = y_hat.labels
    if labels.size != p1.shape[0]:
        raise ValueError("label count does not match probability rows")
    idx = np.arange(labels.size)
    per = -np.log(np.maximum(p1[idx, labels], prob_floor))
    per = per - np.log(np.maximum(p2[idx, labels], prob_floor))
    return LossValue(value=float(per.mean()), per_sample=per)


def instance_loss(z1, z2, temps: Temperatures) -> LossValue:
    """Contrastive loss treating (z1_i, z2_i) as the positive pair.

    With the stack [z1; z2], the anchor z1_i scores exp(sim(z1_i, z2_i)/tau)
    against sum_{k != i} exp(sim(z1_i, z1_k)/tau) + exp(sim(z1_i, z2_k)/tau),
    so the positive pair is absent from the denominator; symmetrically for
    z2_i. Value is the mean of the 2N anchor terms.
    """
    z1 = as_matrix(z1, "z1")
    z2 = as_matrix(z2, "z2")
    n = z1.shape[0]
    if n < 2:
        raise ValueError("instance_loss requires at least 2 samples")
    if z2.shape != z1.shape:
        raise ValueError(f"z1/z2 shape mismatch: {z1.shape} vs {z2.shape}")

    u = _normalize_rows(np.vstack([z1, z2]), "stacked z")
    e = np.exp((u @ u.T) / temps.tau_i)
    idx = np.arange(n)
    row_sum = e.sum(axis=1)
    den1 = row_sum[:n] - e[idx, idx] - e[idx, n + idx]
    den2 = row_sum[n:] - e[n + idx, n + idx] - e[n + idx, idx]
    num1 = e[idx, n + idx]
    num2 = e[n + idx, idx]

    terms = np.concatenate([np.log(den1) - np.log(num1), np.log(den2) - np.log(num2)])
    return LossValue(value=float(terms.mean()), per_sample=terms)


def combined_loss(mode: str, l_a: float, l_p: float, l_i: float, lam: float) -> float:
    """Total loss: warm-up is L_A + lam * L_I; training adds the cluster loss."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if mode == "warmup":
        return l_a + lam * l_i
    if mode == "train":
        return l_a + l_p + lam * l_i
    raise ValueError("mode must be 'warmup' or 'train'")


def fd_gradient(loss_eval, theta, step: float) -> np.ndarray:
    """Central-difference gradient of a scalar loss over a parameter vector."""
    if step <= 0:
        raise ValueError("step must be > 0")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    work = theta.copy()
    for i in range(theta.size):
        work[i] = theta[i] + step
        up = float(loss_eval(work))
        work[i] = theta[i] - step
        down = float(loss_eval(work))
        work[i] = theta[i]
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"loss not finite near coordinate {i}")
        grad[i] = (up - down) / (2.0 * step)
    return grad


def cluster_head_gradient(y_hat: PseudoLabels, v1, v2, g_p) -> tuple[float, np.ndarray]:
    """Value and analytic gradient of the cluster loss w.r.t. the head g_p.

    With P = softmax(V g_p) per view, the gradient is the classic
    softmax-cross-entropy form (1/N) V^T (P - Y) summed over both views.
    """
    v1 = as_matrix(v1, "v1")
    v2 = as_matrix(v2, "v2")
    g_p = as_matrix(g_p, "g_p")
    labels = y_hat.labels
    n = labels.size
    y = np.zeros((n, g_p.shape[1]))
    y[np.arange(n), labels] = 1.0
    p1 = softmax_rows(v1 @ g_p)
    p2 = softmax_rows(v2 @ g_p)
    value = cluster_loss(y_hat, p1, p2).value
    grad = (v1.T @ (p1 - y) + v2.T @ (p2 - y)) / n
    return value, grad


def _cosine_stack_backward(
    g_c: np.ndarray, u: np.ndarray, raw: np.ndarray
) -> np.ndarray:
    """Backprop through C = U U^T with U the row-normalized version of raw."""
    du = (g_c + g_c.T) @ u
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    inner = (du * u).sum(axis=1, keepdims=True)
    return (du - inner * u) / norms


def instance_head_gradient(
    v1, v2, g_z, temps: Temperatures
) -> tuple[float, np.ndarray]:
    """Value and analytic gradient of the instance loss w.r.t. the projection g_z."""
    v1 = as_matrix(v1, "v1")
    v2 = as_matrix(v2, "v2")
    g_z = as_matrix(g_z, "g_z")
    n = v1.shape[0]
    if n < 2:
        raise ValueError("instance loss requires at least 2 samples")
    z1 = v1 @ g_z
    z2 = v2 @ g_z
    raw = np.vstack([z1, z2])
    u = _normalize_rows(raw, "stacked z")
    c = u @ u.T
    tau = temps.tau_i
    e = np.exp(c / tau)
    idx = np.arange(n)
    row_sum = e.sum(axis=1)
    den1 = row_sum[:n] - e[idx, idx] - e[idx, n + idx]
    den2 = row_sum[n:] - e[n + idx, n + idx] - e[n + idx, idx]

    terms = np.concatenate(
        [np.log(den1) - c[idx, n + idx] / tau, np.log(den2) - c[n + idx, idx] / tau]
    )
    value = float(terms.mean())

    scale = 1.0 / (2.0 * n)
    g_e = np.zeros_like(e)
    g_e[:n, :] = scale / den1[:, None]
    g_e[n:, :] = scale / den2[:, None]
    g_e[idx, idx] = 0.0
    g_e[idx, n + idx] = 0.0
    g_e[n + idx, n + idx] = 0.0
    g_e[n + idx, idx] = 0.0
    g_c = g_e * e / tau
    g_c[idx, n + idx] -= scale / tau
    g_c[n + idx, idx] -= scale / tau

    d_raw = _cosine_stack_backward(g_c, u, raw)
    grad = v1.T @ d_raw[:n] + v2.T @ d_raw[n:]
    return value, grad


def attention_head_gradients(
    z1, z2, params: AttentionParams, r, temps: Temperatures
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Value and analytic gradients of the attention loss w.r.t. (W_K1, W_K2, W_T).

    Recomputes the attention forward pass for both views, including the
    dependence of the positive weights s_att on the parameters, and
    backpropagates through the aggregation H = A T, the row softmax, and the
    key/value projections. The projected inputs z1, z2 are treated as
    constants (the loss only trains the attention network).
    """
    z1 = as_matrix(z1, "z1")
    z2 = as_matrix(z2, "z2")
    n = z1.shape[0]
    if n < 2:
        raise ValueError("attention loss requires at least 2 samples")
    tau = temps.tau_a
    scale_attn = params.scale

    views = []
    for z in (z1, z2):
        k1 = z @ params.w_k1
        k2 = z @ params.w_k2
        t = z @ params.w_t
        logits = k1 @ k2.T / scale_attn
        a = softmax_rows(logits)
        views.append({"z": z, "k1": k1, "k2": k2, "t": t, "a": a, "h": a @ t})
    s_att = 0.5 * (views[0]["a"] + views[1]["a"])

    raw = np.vstack([views[0]["h"], views[1]["h"]])
    u = _normalize_rows(raw, "stacked h")
    c = u @ u.T
    e = np.exp(c / tau)
    idx = np.arange(n)
    row_sum = e.sum(axis=1)
    den1 = row_sum[:n] - e[idx, idx]
    den2 = row_sum[n:] - e[n + idx, idx]

    mask = _membership_mask(r, n)
    w = np.where(mask, s_att, 0.0)
    e11, e12 = e[:n, :n], e[:n, n:]
    e21, e22 = e[n:, :n], e[n:, n:]
    num1 = (w * (e11 + e12)).sum(axis=1)
    num2 = (w * (e21 + e22)).sum(axis=1)
    if np.any(num1 <= 0) or np.any(num2 <= 0):
        raise ValueError("attention loss needs positive similarity weight on each cluster set")
    terms = np.concatenate([np.log(den1) - np.log(num1), np.log(den2) - np.log(num2)])
    value = float(terms.mean())

    scale = 1.0 / (2.0 * n)
    g_e = np.zeros_like(e)
    g_e[:n, :] = scale / den1[:, None]
    g_e[n:, :] = scale / den2[:, None]
    g_e[idx, idx] = 0.0
    g_e[n + idx, idx] = 0.0
    g_e[:n, :n] -= scale * w / num1[:, None]
    g_e[:n, n:] -= scale * w / num1[:, None]
    g_e[n:, :n] -= scale * w / num2[:, None]
    g_e[n:, n:] -= scale * w / num2[:, None]
    g_c = g_e * e / tau

    g_s_att = np.where(
        mask,
        -scale * ((e11 + e12) / num1[:, None] + (e21 + e22) / num2[:, None]),
        0.0,
    )

    d_raw = _cosine_stack_backward(g_c, u, raw)
    d_h = (d_raw[:n], d_raw[n:])

    dw_k1 = np.zeros_like(params.w_k1)
    dw_k2 = np.zeros_like(params.w_k2)
    dw_t = np.zeros_like(params.w_t)
    for view, dh in zip(views, d_h):
        a = view["a"]
        da = dh @ view["t"].T + 0.5 * g_s_att
        dt = a.T @ dh
        dlogits = a * (da - (da * a).sum(axis=1, keepdims=True))
        dk1 = dlogits @ view["k2"] / scale_attn
        dk2 = dlogits.T @ view["k1"] / scale_attn
        z = view["z"]
        dw_k1 += z.T @ dk1
        dw_k2 += z.T @ dk2
        dw_t += z.T @ dt
    return value, dw_k1, dw_k2, dw_t
