import math
from dataclasses import replace

import numpy as np
import pytest

from caot.core import NumericError, clamp_log
from caot.labeling import labels_from_plan
from caot.solver import (
    CaotParams,
    OtProblem,
    b_of_h,
    caot_solve,
    dual_update,
    grad_f,
    inner_solve,
    newton_h,
    objective,
    sinkhorn_fixed,
)


def random_problem(rng, n, k, with_similarity=True):
    p = rng.random((n, k)) + 0.05
    p /= p.sum(axis=1, keepdims=True)
    s = rng.random((n, n)) if with_similarity else np.zeros((n, n))
    return OtProblem.from_probabilities(p, s)


def quadratic_cost_value(q, p, s, eps3, floor=1e-30):
    """Direct transcription of f(Q) = <Q, -log P> - eps3 <S, Q Q^T>."""
    total = float(np.sum(q * -np.log(np.maximum(p, floor))))
    total -= eps3 * float(np.sum(s * (q @ q.T)))
    return total


def fd_matrix_gradient(func, q, step):
    grad = np.zeros_like(q)
    work = q.copy()
    for idx in np.ndindex(q.shape):
        work[idx] = q[idx] + step
        up = func(work)
        work[idx] = q[idx] - step
        down = func(work)
        work[idx] = q[idx]
        grad[idx] = (up - down) / (2.0 * step)
    return grad


def bisect_marginal_root(g, eps2, lo=-1e6, hi=1e6, iters=200):
    """Independent bisection oracle for sum_j b_j(h) = 1 (residual increases in h)."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if b_of_h(g, mid, eps2).sum() - 1.0 < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------- grad_f


def test_grad_f_without_semantic_term_is_neg_log_p():
    rng = np.random.default_rng(0)
    q = rng.random((5, 3))
    p = rng.random((5, 3)) + 0.1
    p /= p.sum(axis=1, keepdims=True)
    s = rng.random((5, 5))
    assert grad_f(q, p, s, eps3=0.0) == pytest.approx(-np.log(p))
    assert grad_f(q, p, np.zeros((5, 5)), eps3=2.0) == pytest.approx(-np.log(p))


def test_grad_f_matches_finite_differences():
    rng = np.random.default_rng(1)
    q = rng.random((5, 3)) + 0.1
    p = rng.random((5, 3)) + 0.1
    p /= p.sum(axis=1, keepdims=True)
    s = rng.random((5, 5))
    eps3 = 1.7
    fd = fd_matrix_gradient(lambda m: quadratic_cost_value(m, p, s, eps3), q, 1e-6)
    analytic = grad_f(q, p, s, eps3)
    assert np.abs(analytic - fd).max() / np.abs(fd).max() < 1e-6


def test_grad_f_rejects_bad_shapes():
    with pytest.raises(ValueError):
        grad_f(np.ones((3, 2)), np.ones((2, 2)) / 2, np.zeros((3, 3)), 1.0)
    with pytest.raises(ValueError):
        grad_f(np.ones((3, 2)), np.ones((3, 2)) / 2, np.zeros((2, 2)), 1.0)


# ---------------------------------------------------------------- objective


def test_objective_single_cell_hand_value():
    # <Q,-log P> = 0; entropy term 1*(0-1) = -1; penalty 1*(-log .5 - log .5)
    prob = OtProblem.from_probabilities(np.array([[1.0]]), np.array([[0.0]]), np.array([1.0]))
    params = CaotParams(eps1=1.0, eps2=1.0, eps3=0.0)
    val = objective(np.array([[1.0]]), np.array([0.5]), prob, params)
    assert val == pytest.approx(-1.0 + 2.0 * math.log(2.0))


def test_objective_cost_only_when_weights_zero():
    rng = np.random.default_rng(2)
    prob = random_problem(rng, 4, 3)
    q = rng.random((4, 3)) + 0.01
    b = np.full(3, 1.0 / 3.0)
    # eps2 must stay positive; shrink every regularizer to negligible instead
    params = CaotParams(eps1=1e-300, eps2=1e-300, eps3=0.0)
    val = objective(q, b, prob, params)
    assert val == pytest.approx(float(np.sum(q * -np.log(prob.p))))


def test_objective_uniform_two_by_two_hand_value():
    # cost: 4 * (1/4) ln 2 = ln 2; entropy: <Q, ln Q - 1> = ln(1/4) - 1
    prob = OtProblem.from_probabilities(
        np.full((2, 2), 0.5), np.zeros((2, 2)), np.full(2, 0.5)
    )
    params = CaotParams(eps1=1.0, eps2=1e-300, eps3=0.0)
    val = objective(np.full((2, 2), 0.25), np.full(2, 0.5), prob, params)
    expected = math.log(2.0) + (math.log(0.25) - 1.0)  # = -ln 2 - 1
    assert val == pytest.approx(expected)
    assert expected == pytest.approx(-math.log(2.0) - 1.0)


def test_objective_rejects_b_outside_unit_interval():
    prob = OtProblem.from_probabilities(np.array([[0.5, 0.5]]))
    params = CaotParams()
    with pytest.raises(ValueError):
        objective(np.array([[0.5, 0.5]]), np.array([1.0, 0.0]), prob, params)


# ---------------------------------------------------------------- dual updates


def test_dual_update_single_column_reduction():
    rng = np.random.default_rng(3)
    n = 5
    m_prime = rng.normal(size=(n, 1))
    a = rng.random(n) + 0.1
    a /= a.sum()
    g = np.array([0.7])
    eps1 = 1.3
    f_new, _ = dual_update(m_prime, np.zeros(n), g, np.array([1.0]), a, eps1)
    expected = eps1 * np.log(a) - g[0] + m_prime[:, 0]
    assert f_new == pytest.approx(expected)


def test_dual_update_single_row_reduction():
    rng = np.random.default_rng(4)
    k = 4
    m_prime = rng.normal(size=(1, k))
    b = rng.random(k) + 0.1
    b /= b.sum()
    eps1 = 0.8
    f_new, g_new = dual_update(m_prime, np.zeros(1), np.zeros(k), b, np.array([1.0]), eps1)
    expected = eps1 * np.log(b) - f_new[0] + m_prime[0, :]
    assert g_new == pytest.approx(expected)


def test_dual_update_reaches_sinkhorn_fixed_point():
    rng = np.random.default_rng(5)
    n, k = 4, 3
    m_prime = rng.normal(size=(n, k))
    a = rng.random(n) + 0.2
    a /= a.sum()
    b = rng.random(k) + 0.2
    b /= b.sum()
    eps1 = 0.9
    f = np.zeros(n)
    g = np.zeros(k)
    for _ in range(200):
        f, g = dual_update(m_prime, f, g, b, a, eps1)
    q = np.exp((f[:, None] + g[None, :] - m_prime) / eps1)
    assert np.abs(q.sum(axis=1) - a).max() < 1e-8
    assert np.abs(q.sum(axis=0) - b).max() < 1e-8


# ---------------------------------------------------------------- b(h) and the root


def test_b_of_h_at_singular_point_is_half():
    assert b_of_h(np.array([0.0]), 0.0, 1.0) == pytest.approx([0.5])
    assert b_of_h(np.array([2.0, 5.0]), 2.0, 0.3)[0] == pytest.approx(0.5)


def test_b_of_h_hand_value():
    # quadratic b^2 - 3b + 1 = 0 with the feasible root (3 - sqrt 5)/2
    val = b_of_h(np.array([1.0]), 0.0, 1.0)
    assert val == pytest.approx([(3.0 - math.sqrt(5.0)) / 2.0], abs=1e-12)


def test_b_of_h_satisfies_quadratic_everywhere():
    rng = np.random.default_rng(6)
    for _ in range(30):
        g = rng.normal(scale=5.0, size=rng.integers(1, 9))
        h = float(rng.normal(scale=5.0))
        eps2 = float(rng.uniform(0.01, 120.0))
        b = b_of_h(g, h, eps2)
        assert np.all(b > 0.0) and np.all(b < 1.0)
        x = g - h
        residual = x * b * b - (x + 2.0 * eps2) * b + eps2
        assert np.abs(residual).max() < 1e-10


def test_newton_h_uniform_for_equal_duals():
    for k in (2, 3, 7):
        g = np.full(k, 1.3)
        h = newton_h(g, eps2=2.0, h0=1.0, iters=10)
        b = b_of_h(g, h, 2.0)
        assert b == pytest.approx(np.full(k, 1.0 / k), abs=1e-9)


def test_newton_h_symmetric_two_cluster_point():
    h = newton_h(np.zeros(2), eps2=1.0, h0=1.0, iters=10)
    assert h == pytest.approx(0.0, abs=1e-9)
    assert b_of_h(np.zeros(2), h, 1.0) == pytest.approx([0.5, 0.5])


def test_newton_h_agrees_with_bisection():
    g = np.array([0.0, 1.0, 2.0])
    eps2 = 1.0
    h_newton = newton_h(g, eps2, h0=1.0, iters=10)
    h_bisect = bisect_marginal_root(g, eps2)
    assert abs(h_newton - h_bisect) < 1e-8
    assert abs(b_of_h(g, h_newton, eps2).sum() - 1.0) < 1e-8


def test_newton_h_no_root_for_single_cluster():
    with pytest.raises(NumericError):
        newton_h(np.array([0.0]), eps2=1.0, h0=1.0, iters=10)


# ---------------------------------------------------------------- inner solve


def test_inner_solve_single_cluster_returns_sample_marginal():
    rng = np.random.default_rng(7)
    a = np.array([0.3, 0.7])
    prob = OtProblem(p=np.ones((2, 1)), s=np.zeros((2, 2)), a=a)
    q, b, f, g = inner_solve(rng.normal(size=(2, 1)), prob, CaotParams(), np.ones(1))
    assert q[:, 0] == pytest.approx(a)
    assert b == pytest.approx([1.0])


def test_inner_solve_symmetric_instance_is_uniform():
    n, k = 6, 3
    prob = OtProblem.from_probabilities(np.full((n, k), 1.0 / k))
    params = CaotParams(eps2=2.0)
    q, b, _, _ = inner_solve(np.full((n, k), 0.4), prob, params, np.full(k, 1.0 / k))
    assert q == pytest.approx(np.full((n, k), 1.0 / (n * k)), abs=1e-12)
    assert b == pytest.approx(np.full(k, 1.0 / k), abs=1e-10)


def test_inner_solve_row_marginals_exact_column_drift_shrinks():
    rng = np.random.default_rng(8)
    prob = random_problem(rng, 8, 4)
    m_prime = rng.normal(size=(8, 4))
    b0 = np.full(4, 0.25)
    errs = []
    for t2 in (1, 5, 40):
        params = CaotParams(eps2=1.0, t2=t2)
        q, b, _, _ = inner_solve(m_prime, prob, params, b0)
        assert np.abs(q.sum(axis=1) - prob.a).max() < 1e-9
        errs.append(np.abs(q.sum(axis=0) - b).max())
    assert errs[2] <= errs[0]
    assert errs[2] < 1e-6


def test_inner_solve_huge_penalty_matches_uniform_sinkhorn():
    rng = np.random.default_rng(9)
    n, k = 6, 3
    prob = random_problem(rng, n, k, with_similarity=False)
    m_prime = rng.normal(size=(n, k))
    params = CaotParams(eps2=1e4, t2=200)
    q, b, _, _ = inner_solve(m_prime, prob, params, np.full(k, 1.0 / k))
    q_ref = sinkhorn_fixed(m_prime, prob.a, np.full(k, 1.0 / k), params.eps1, 200)
    assert np.abs(q - q_ref).max() < 1e-5
    assert b == pytest.approx(np.full(k, 1.0 / k), abs=1e-5)


# ---------------------------------------------------------------- sinkhorn oracle


def test_sinkhorn_fixed_trivial_cell():
    q = sinkhorn_fixed(np.array([[2.0]]), np.array([1.0]), np.array([1.0]), 1.0, 5)
    assert q == pytest.approx([[1.0]])


def test_sinkhorn_fixed_constant_cost_gives_independent_coupling():
    rng = np.random.default_rng(10)
    a = rng.random(5) + 0.1
    a /= a.sum()
    b = rng.random(3) + 0.1
    b /= b.sum()
    q = sinkhorn_fixed(np.full((5, 3), 1.7), a, b, 0.6, 100)
    assert q == pytest.approx(np.outer(a, b), abs=1e-10)


def test_sinkhorn_fixed_two_by_two_closed_form():
    # Gibbs kernel [[1, 1/e], [1/e, 1]]; symmetric scaling gives
    # diagonal mass e/(2(1+e)) and off-diagonal 1/(2(1+e)).
    m = np.array([[0.0, 1.0], [1.0, 0.0]])
    q = sinkhorn_fixed(m, np.full(2, 0.5), np.full(2, 0.5), 1.0, 300)
    diag = math.e / (2.0 * (1.0 + math.e))
    off = 1.0 / (2.0 * (1.0 + math.e))
    assert q == pytest.approx(np.array([[diag, off], [off, diag]]), abs=1e-10)
    assert q[0, 0] > q[0, 1]


# ---------------------------------------------------------------- full solve


def test_caot_solve_single_outer_round_matches_inner_solve():
    rng = np.random.default_rng(11)
    prob = random_problem(rng, 6, 3, with_similarity=False)
    params = CaotParams(eps2=1.5, eps3=0.0, t1=1)
    plan = caot_solve(prob, params)
    m_prime = -clamp_log(prob.p, params.prob_floor)
    q_ref, b_ref, _, _ = inner_solve(m_prime, prob, params, np.full(3, 1.0 / 3.0))
    assert plan.q == pytest.approx(q_ref)
    assert plan.b == pytest.approx(b_ref)


def test_caot_solve_confident_predictions_survive_transport():
    p = np.array([[0.95, 0.05], [0.9, 0.1], [0.05, 0.95], [0.1, 0.9]])
    prob = OtProblem.from_probabilities(p)
    plan = caot_solve(prob, CaotParams(eps2=100.0, eps3=0.0))
    assert np.array_equal(
        labels_from_plan(plan.q).labels, np.argmax(p, axis=1)
    )


def figure_instance():
    """Four samples, two clusters; each similarity pair couples a confident row
    with a weak row whose prediction leans the other way."""
    p = np.array([[0.9, 0.1], [0.45, 0.55], [0.1, 0.9], [0.55, 0.45]])
    s = np.zeros((4, 4))
    s[0, 1] = s[1, 0] = 5.0
    s[2, 3] = s[3, 2] = 5.0
    return OtProblem.from_probabilities(p, s)


def assignment_plan(labels, k, a, spread=0.1):
    """Softened one-hot coupling that puts fraction 1-spread of each row's
    mass on its label; used to scan the objective over labelings."""
    n = len(labels)
    q = np.full((n, k), 0.0)
    for i, lab in enumerate(labels):
        q[i, :] = a[i] * spread / (k - 1)
        q[i, lab] = a[i] * (1.0 - spread)
    return q


def test_caot_solve_semantic_term_flips_weak_partners():
    prob = figure_instance()
    base = CaotParams(eps1=1.0, eps2=100.0, eps3=0.0)
    labels0 = labels_from_plan(caot_solve(prob, base).q).labels
    assert labels0[0] != labels0[1]
    assert labels0[2] != labels0[3]
    labels25 = labels_from_plan(caot_solve(prob, replace(base, eps3=25.0)).q).labels
    assert labels25[0] == labels25[1]
    assert labels25[2] == labels25[3]


def test_figure_instance_objective_scan_confirms_flip():
    # Exhaustive scan over all 2^4 softened assignment plans: with the
    # semantic term off, the cheapest labeling follows the per-row argmax
    # (partner-inconsistent); with it on, a partner-consistent labeling wins.
    prob = figure_instance()
    k = 2
    labelings = [(i, j, m, l) for i in range(k) for j in range(k) for m in range(k) for l in range(k)]

    def best_labeling(params):
        vals = []
        for labels in labelings:
            q = assignment_plan(labels, k, prob.a)
            b = q.sum(axis=0)
            vals.append(objective(q, b, prob, params))
        return labelings[int(np.argmin(vals))]

    off = best_labeling(CaotParams(eps1=1.0, eps2=100.0, eps3=0.0))
    assert off == (0, 1, 1, 0)
    on = best_labeling(CaotParams(eps1=1.0, eps2=100.0, eps3=25.0))
    assert on[0] == on[1] and on[2] == on[3]


def test_caot_solve_invariants_over_random_instances():
    rng = np.random.default_rng(12)
    for _ in range(50):
        n = int(rng.integers(4, 65))
        k = int(rng.integers(2, 9))
        prob = random_problem(rng, n, k)
        eps2 = float(rng.choice([0.03, 1.0, 3.5, 100.0]))
        eps3 = float(rng.choice([0.0, 5.0, 25.0]))
        params = CaotParams(eps2=eps2, eps3=eps3)
        plan = caot_solve(prob, params)
        assert np.all(plan.q > 0)
        assert np.abs(plan.q.sum(axis=1) - prob.a).max() < 1e-9
        assert abs(plan.b.sum() - 1.0) < 1e-8
        assert np.all(plan.b > 0) and np.all(plan.b < 1)
        trace = plan.objective_trace
        assert len(trace) == params.t1
        assert all(trace[i + 1] <= trace[i] + 1e-9 for i in range(len(trace) - 1))


def test_caot_solve_marginal_uniformity_monotone_in_penalty():
    rng = np.random.default_rng(13)
    n, k = 40, 4
    # Skewed instance: most rows prefer cluster 0
    weights = np.array([0.6, 0.2, 0.12, 0.08])
    p = rng.random((n, k)) * 0.3 + weights[None, :]
    p /= p.sum(axis=1, keepdims=True)
    prob = OtProblem.from_probabilities(p)
    devs = []
    for eps2 in (0.03, 3.5, 100.0):
        params = CaotParams(eps2=eps2, eps3=0.0, t2=60)
        plan = caot_solve(prob, params)
        devs.append(np.abs(plan.b - 1.0 / k).max())
    assert devs[0] >= devs[1] >= devs[2]


def test_caot_solve_random_b_init_is_seeded_and_deterministic():
    rng = np.random.default_rng(14)
    prob = random_problem(rng, 8, 3)
    params = CaotParams()
    one = caot_solve(prob, params, b_init="random", seed=5)
    two = caot_solve(prob, params, b_init="random", seed=5)
    assert np.array_equal(one.q, two.q)
    with pytest.raises(ValueError):
        caot_solve(prob, params, b_init="bogus")


def test_caot_solve_validates_problem():
    bad = OtProblem(p=np.array([[0.5, 0.4]]), s=np.zeros((1, 1)), a=np.array([1.0]))
    with pytest.raises(ValueError):
        caot_solve(bad, CaotParams())


def test_caot_params_validation():
    with pytest.raises(ValueError):
        CaotParams(eps1=0.0)
    with pytest.raises(ValueError):
        CaotParams(eps2=-1.0)
    with pytest.raises(ValueError):
        CaotParams(armijo_c1=1.5)
    with pytest.raises(ValueError):
        CaotParams(t1=0)
