"""Consistency-aware adaptive optimal transport (CAOT) solver.

Solves

    min_{Q,b}  <Q, -log P> + eps1 <Q, log Q - 1> + eps2 sum_j Psi(b_j)
               - eps3 <S, Q Q^T>
    s.t.       Q 1 = a,  Q^T 1 = b,  Q > 0,  b^T 1 = 1,

with Psi(b) = -log(b) - log(1 - b). The quadratic similarity term makes the
objective nonconvex; the outer loop is a generalized conditional gradient
scheme that linearizes it, solves the resulting entropic transport subproblem
with an adaptive cluster marginal via Lagrangian dual ascent, and line-searches
with a backtracking Armijo rule. The cluster marginal b is recovered per dual
round by solving a scalar root problem with safeguarded Newton iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import NumericError, as_matrix, as_vector, clamp_log, logsumexp

__all__ = [
    "CaotParams",
    "OtProblem",
    "TransportPlan",
    "grad_f",
    "objective",
    "dual_update",
    "b_of_h",
    "newton_h",
    "inner_solve",
    "caot_solve",
    "sinkhorn_fixed",
]

_NEWTON_TOL = 1e-12
_MAX_BRACKET_EXPANSIONS = 200
_MAX_BISECTIONS = 300
_MAX_BACKTRACKS = 20


@dataclass(frozen=True)
class CaotParams:
    """Hyperparameters and iteration budgets for one CAOT solve.

    eps1 weighs the entropy term, eps2 the cluster-marginal penalty (large
    values pin b to uniform), eps3 the semantic-consistency term. t1 counts
    outer linearization rounds, t2 inner dual rounds.
    """

    eps1: float = 1.0
    eps2: float = 100.0
    eps3: float = 25.0
    t1: int = 10
    t2: int = 10
    newton_iters: int = 10
    armijo_c1: float = 1e-4
    armijo_shrink: float = 0.5
    marginal_tol: float = 1e-9
    prob_floor: float = 1e-30

    def __post_init__(self) -> None:
        if self.eps1 <= 0:
            raise ValueError("eps1 must be > 0")
        if self.eps2 <= 0:
            raise ValueError("eps2 must be > 0")
        if self.eps3 < 0:
            raise ValueError("eps3 must be >= 0")
        if self.t1 < 1 or self.t2 < 1 or self.newton_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if not 0.0 < self.armijo_c1 < 1.0:
            raise ValueError("armijo_c1 must be in (0, 1)")
        if not 0.0 < self.armijo_shrink < 1.0:
            raise ValueError("armijo_shrink must be in (0, 1)")
        if self.prob_floor <= 0:
            raise ValueError("prob_floor must be > 0")


@dataclass
class OtProblem:
    """One transport instance: predictions P (N x K), similarity S (N x N),
    and the sample marginal a (length N, positive, summing to 1)."""

    p: np.ndarray
    s: np.ndarray
    a: np.ndarray

    @classmethod
    def from_probabilities(cls, p, s=None, a=None) -> "OtProblem":
        """Build a problem from P alone; S defaults to zeros, a to uniform."""
        p = as_matrix(p, "p")
        n = p.shape[0]
        s = np.zeros((n, n)) if s is None else as_matrix(s, "s")
        a = np.full(n, 1.0 / n) if a is None else as_vector(a, "a")
        return cls(p=p, s=s, a=a)

    def validate(self) -> None:
        self.p = as_matrix(self.p, "p")
        self.s = as_matrix(self.s, "s")
        self.a = as_vector(self.a, "a")
        n, _ = self.p.shape
        if self.s.shape != (n, n):
            raise ValueError(f"s must be {n}x{n}, got {self.s.shape}")
        if self.a.shape != (n,):
            raise ValueError(f"a must have length {n}, got {self.a.shape}")
        if np.any(self.p < 0):
            raise ValueError("p entries must be nonnegative")
        row_sums = self.p.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > 1e-6):
            raise ValueError("rows of p must sum to 1 within 1e-6")
        if np.any(self.a <= 0):
            raise ValueError("a entries must be positive")
        if abs(self.a.sum() - 1.0) > 1e-9:
            raise ValueError("a must sum to 1 within 1e-9")


@dataclass
class TransportPlan:
    """Solved coupling q (N x K), estimated cluster marginal b, duals f and g,
    and the objective value recorded after each outer iteration."""

    q: np.ndarray
    b: np.ndarray
    f: np.ndarray
    g: np.ndarray
    objective_trace: list = field(default_factory=list)


def grad_f(q, p, s, eps3: float, prob_floor: float = 1e-30) -> np.ndarray:
    """Gradient of f(Q) = <Q, -log P> - eps3 <S, Q Q^T>.

    Returns -log(P) - eps3 (S + S^T) Q, with P floored at prob_floor before
    the log.
    """
    q = as_matrix(q, "q")
    p = as_matrix(p, "p")
    s = as_matrix(s, "s")
    n, k = q.shape
    if p.shape != (n, k):
        raise ValueError(f"p must be {n}x{k}, got {p.shape}")
    if s.shape != (n, n):
        raise ValueError(f"s must be {n}x{n}, got {s.shape}")
    out = -clamp_log(p, prob_floor)
    if eps3 != 0.0:
        out = out - eps3 * ((s + s.T) @ q)
    return out


def _objective_cached(
    q: np.ndarray,
    b: np.ndarray,
    neg_log_p: np.ndarray,
    s_sym: np.ndarray | None,
    params: CaotParams,
) -> float:
    """Objective with -log P and S + S^T precomputed (s_sym None when eps3=0)."""
    if np.any(b <= 0.0) or np.any(b >= 1.0):
        raise ValueError("b entries must lie strictly inside (0, 1)")
    val = float(np.sum(q * neg_log_p))
    val += params.eps1 * float(np.sum(q * (np.log(q) - 1.0)))
    val += params.eps2 * float(np.sum(-np.log(b) - np.log1p(-b)))
    if s_sym is not None:
        # <S, QQ^T> = sum((S @ Q) * Q); s_sym already holds S + S^T, halve it.
        val -= params.eps3 * 0.5 * float(np.sum((s_sym @ q) * q))
    return val


def objective(q, b, prob: OtProblem, params: CaotParams) -> float:
    """Full objective value at a positive coupling q and marginal b in (0,1)^K."""
    q = as_matrix(q, "q")
    b = as_vector(b, "b")
    neg_log_p = -clamp_log(prob.p, params.prob_floor)
    s_sym = None if params.eps3 == 0.0 else prob.s + prob.s.T
    return _objective_cached(q, b, neg_log_p, s_sym, params)


def dual_update(m_prime, f, g, b, a, eps1: float) -> tuple[np.ndarray, np.ndarray]:
    """One alternating update of the Lagrangian duals (f, g).

    f_i = eps1 ln a_i - eps1 logsumexp_j((g_j - M'_ij)/eps1), then
    g_j = eps1 ln b_j - eps1 logsumexp_i((f_i - M'_ij)/eps1) using the fresh f.
    The incoming f is superseded and only kept for call-site symmetry.
    """
    m_prime = as_matrix(m_prime, "m_prime")
    g = as_vector(g, "g")
    b = as_vector(b, "b")
    a = as_vector(a, "a")
    del f
    f_new = eps1 * np.log(a) - eps1 * logsumexp((g[None, :] - m_prime) / eps1, axis=1)
    g_new = eps1 * np.log(b) - eps1 * logsumexp((f_new[:, None] - m_prime) / eps1, axis=0)
    return f_new, g_new


def b_of_h(g, h: float, eps2: float) -> np.ndarray:
    """Cluster marginal implied by dual g and multiplier h.

    Stationarity of the penalized subproblem in b gives the quadratic
    (g_j - h) b^2 - (g_j - h + 2 eps2) b + eps2 = 0 whose feasible root is
    evaluated in the rationalized form

        b_j = 2 eps2 / (g_j - h + 2 eps2 + sqrt((g_j - h)^2 + 4 eps2^2)),

    which is cancellation-free and yields the removable-singularity limit
    b_j = 1/2 at g_j = h automatically. Every b_j lies strictly in (0, 1).
    """
    g = as_vector(g, "g")
    if eps2 <= 0:
        raise ValueError("eps2 must be > 0")
    x = g - h
    root = np.hypot(x, 2.0 * eps2)
    # Pick the branch whose denominator sums positives only, so neither large
    # positive nor large negative x cancels.
    return np.where(
        x >= 0.0,
        2.0 * eps2 / (np.abs(x) + 2.0 * eps2 + root),
        (root + np.abs(x)) / (2.0 * eps2 + root + np.abs(x)),
    )


def _b_residual(g: np.ndarray, h: float, eps2: float) -> float:
    return float(b_of_h(g, h, eps2).sum() - 1.0)


def _b_residual_prime(g: np.ndarray, h: float, eps2: float) -> float:
    # d/dh of sum_j b_j(h); strictly positive, so the residual is increasing.
    # Written with |x| (the two sign branches coincide) to avoid cancellation.
    x = np.abs(g - h)
    root = np.hypot(x, 2.0 * eps2)
    denom = x + 2.0 * eps2 + root
    return float(np.sum(2.0 * eps2 * (1.0 + x / root) / (denom * denom)))


def newton_h(g, eps2: float, h0: float = 1.0, iters: int = 10, tol: float = _NEWTON_TOL) -> float:
    """Solve sum_j b_of_h(g, h, eps2) = 1 for h.

    Runs safeguarded Newton steps from h0 inside a bracket found by geometric
    expansion; a step that leaves the bracket or fails to reduce the residual
    is replaced by bisection, and bisection continues after the Newton budget
    until the residual is below tol. The residual is strictly increasing in h
    (from -1 toward K - 1), so the root is unique; for K = 1 no root exists
    and a NumericError is raised.
    """
    g = as_vector(g, "g")
    if eps2 <= 0:
        raise ValueError("eps2 must be > 0")
    if iters < 1:
        raise ValueError("iters must be >= 1")

    res0 = _b_residual(g, h0, eps2)
    if abs(res0) < tol:
        return float(h0)

    # Expand a bracket [lo, hi] with residual(lo) < 0 < residual(hi).
    lo = hi = float(h0)
    step = max(1.0, abs(h0))
    for _ in range(_MAX_BRACKET_EXPANSIONS):
        if _b_residual(g, lo, eps2) < 0.0:
            break
        lo -= step
        step *= 2.0
    else:
        raise NumericError(
            f"no lower bracket for the cluster-marginal root; residual at h0 is {res0:.3e}"
        )
    step = max(1.0, abs(h0))
    for _ in range(_MAX_BRACKET_EXPANSIONS):
        if _b_residual(g, hi, eps2) > 0.0:
            break
        hi += step
        step *= 2.0
    else:
        raise NumericError(
            f"no upper bracket for the cluster-marginal root; residual at h0 is {res0:.3e}"
        )

    h = min(max(float(h0), lo), hi)
    res = _b_residual(g, h, eps2)
    for _ in range(iters):
        if abs(res) < tol:
            return h
        if res < 0.0:
            lo = h
        else:
            hi = h
        deriv = _b_residual_prime(g, h, eps2)
        h_new = h - res / deriv if deriv > 0.0 else None
        if h_new is not None and lo < h_new < hi:
            res_new = _b_residual(g, h_new, eps2)
            if abs(res_new) < abs(res):
                h, res = h_new, res_new
                continue
        h = 0.5 * (lo + hi)
        res = _b_residual(g, h, eps2)

    # Polish by bisection so the 1e-8 feasibility contract always holds.
    for _ in range(_MAX_BISECTIONS):
        if abs(res) < tol:
            break
        if res < 0.0:
            lo = h
        else:
            hi = h
        mid = 0.5 * (lo + hi)
        if mid == h or hi - lo <= np.finfo(float).eps * max(1.0, abs(h)):
            break
        h = mid
        res = _b_residual(g, h, eps2)
    if abs(res) > 1e-8:
        raise NumericError(f"cluster-marginal root stalled with residual {res:.3e}")
    return h


def inner_solve(
    m_prime, prob: OtProblem, params: CaotParams, b_init
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Entropic transport with adaptive cluster marginal for a fixed cost M'.

    Runs t2 rounds of {update f then g with b fixed; update b from the fresh g
    via the Newton root problem}, then re-applies the f update once so the row
    marginals of the materialized coupling equal a exactly. Returns
    (q, b, f, g) with q_ij = exp((f_i + g_j - M'_ij)/eps1) > 0.

    K = 1 is degenerate (the only feasible coupling is q = a with b = [1],
    where the marginal penalty has no interior root) and is returned directly.
    """
    m_prime = as_matrix(m_prime, "m_prime")
    a = as_vector(prob.a, "a")
    n, k = m_prime.shape
    eps1 = params.eps1
    if k == 1:
        f = eps1 * np.log(a) + m_prime[:, 0]
        return a.reshape(n, 1).copy(), np.ones(1), f, np.zeros(1)

    b = as_vector(b_init, "b_init").copy()
    if np.any(b <= 0.0) or np.any(b >= 1.0) or abs(b.sum() - 1.0) > 1e-8:
        raise ValueError("b_init entries must be in (0,1) and sum to 1")
    f = np.zeros(n)
    g = np.zeros(k)
    h = 1.0
    for _ in range(params.t2):
        f, g = dual_update(m_prime, f, g, b, a, eps1)
        h = newton_h(g, params.eps2, h, params.newton_iters)
        b = b_of_h(g, h, params.eps2)
    f = eps1 * np.log(a) - eps1 * logsumexp((g[None, :] - m_prime) / eps1, axis=1)
    q = np.exp((f[:, None] + g[None, :] - m_prime) / eps1)
    return q, b, f, g


def caot_solve(
    prob: OtProblem,
    params: CaotParams,
    b_init: str = "uniform",
    seed: int = 0,
) -> TransportPlan:
    """Solve the full CAOT problem by generalized conditional gradient.

    Each outer round linearizes the quadratic similarity term at the current
    coupling, solves the resulting adaptive-marginal transport subproblem, and
    interpolates toward it with a step length chosen by backtracking Armijo on
    the full objective (b held at the subproblem's estimate). A step is only
    accepted if it also does not exceed the previous trace value, so the
    recorded objective_trace (one entry per outer round) is non-increasing;
    on rejection the previous iterate is kept and the trace repeats.

    b_init selects the starting cluster marginal: "uniform" (default) or
    "random" (seeded positive draw, normalized).
    """
    prob.validate()
    n, k = prob.p.shape
    if b_init == "uniform":
        b0 = np.full(k, 1.0 / k)
    elif b_init == "random":
        rng = np.random.default_rng(seed)
        raw = rng.uniform(0.5, 1.5, size=k)
        b0 = raw / raw.sum()
    else:
        raise ValueError("b_init must be 'uniform' or 'random'")

    neg_log_p = -clamp_log(prob.p, params.prob_floor)
    if k == 1:
        q = prob.a.reshape(n, 1).copy()
        f = params.eps1 * np.log(prob.a) + neg_log_p[:, 0]
        return TransportPlan(q=q, b=np.ones(1), f=f, g=np.zeros(1), objective_trace=[])

    s_sym = None if params.eps3 == 0.0 else prob.s + prob.s.T
    q = np.outer(prob.a, b0)
    b_cur = b0
    f_cur = np.zeros(n)
    g_cur = np.zeros(k)
    obj_cur = _objective_cached(q, b_cur, neg_log_p, s_sym, params)
    trace: list[float] = []

    for _ in range(params.t1):
        if s_sym is None:
            m_prime = neg_log_p
            quad_pull = None
        else:
            quad_pull = params.eps3 * (s_sym @ q)
            m_prime = neg_log_p - quad_pull
        q_tilde, b_tilde, f_tilde, g_tilde = inner_solve(m_prime, prob, params, b_cur)

        # Directional derivative of the full objective at q, b fixed at b_tilde.
        grad_full = neg_log_p + params.eps1 * np.log(q)
        if quad_pull is not None:
            grad_full = grad_full - quad_pull
        direction = q_tilde - q
        slope = float(np.sum(grad_full * direction))
        phi0 = _objective_cached(q, b_tilde, neg_log_p, s_sym, params)

        alpha = 1.0
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            # Convex-combination form keeps every entry strictly positive;
            # q + alpha*(q_tilde - q) can cancel to exact zero in floats.
            q_alpha = (1.0 - alpha) * q + alpha * q_tilde
            val = _objective_cached(q_alpha, b_tilde, neg_log_p, s_sym, params)
            if val <= phi0 + params.armijo_c1 * alpha * slope and val <= obj_cur:
                accepted = True
                break
            alpha *= params.armijo_shrink
        if accepted:
            q = q_alpha
            b_cur, f_cur, g_cur = b_tilde, f_tilde, g_tilde
            obj_cur = val
        trace.append(obj_cur)

    return TransportPlan(q=q, b=b_cur, f=f_cur, g=g_cur, objective_trace=trace)


def sinkhorn_fixed(m, a, b, eps1: float, iters: int) -> np.ndarray:
    """Entropic transport with both marginals fixed (log-domain scaling).

    Reference oracle for the adaptive solver: alternates the f and g dual
    updates with b held constant and materializes q = exp((f + g - m)/eps1).
    Both marginals hold within 1e-8 for iters >= 200 on well-conditioned costs.
    """
    m = as_matrix(m, "m")
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    f = np.zeros(m.shape[0])
    g = np.zeros(m.shape[1])
    for _ in range(iters):
        f, g = dual_update(m, f, g, b, a, eps1)
    return np.exp((f[:, None] + g[None, :] - m) / eps1)
