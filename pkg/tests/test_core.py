import math

import numpy as np
import pytest

from caot.core import clamp_log, logsumexp, logsumexp_row, softmax_rows


def test_softmax_single_element_row():
    assert softmax_rows([[5.0]]) == pytest.approx([[1.0]])


def test_softmax_symmetric_row():
    out = softmax_rows([[0.0, 0.0]])
    assert out == pytest.approx([[0.5, 0.5]])


def test_softmax_log_ratio_row():
    # exp(ln 1) = 1, exp(ln 3) = 3, so the row is (1/4, 3/4)
    out = softmax_rows([[math.log(1.0), math.log(3.0)]])
    assert out == pytest.approx([[0.25, 0.75]], abs=1e-15)


def test_softmax_rows_sum_to_one_for_wild_inputs():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = rng.uniform(-1e3, 1e3, size=(rng.integers(1, 8), rng.integers(1, 10)))
        out = softmax_rows(m)
        assert np.all(out >= 0)
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-12


def test_softmax_shift_invariance():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(4, 5))
    shifted = m + rng.normal(size=(4, 1))
    assert softmax_rows(m) == pytest.approx(softmax_rows(shifted), abs=1e-12)


def test_softmax_rejects_non_finite():
    with pytest.raises(ValueError):
        softmax_rows([[np.inf, 0.0]])


def test_logsumexp_row_zero():
    assert logsumexp_row([0.0]) == pytest.approx(0.0)


def test_logsumexp_row_pair():
    a = 3.7
    assert logsumexp_row([a, a]) == pytest.approx(a + math.log(2.0))


def test_logsumexp_row_no_overflow():
    assert logsumexp_row([1000.0, 1000.0]) == pytest.approx(1000.0 + math.log(2.0))


def test_logsumexp_row_shift_property():
    rng = np.random.default_rng(2)
    for _ in range(20):
        v = rng.normal(scale=10.0, size=rng.integers(1, 12))
        c = float(rng.normal(scale=100.0))
        assert logsumexp_row(v + c) == pytest.approx(logsumexp_row(v) + c, abs=1e-12)


def test_logsumexp_matrix_axes_match_row_version():
    rng = np.random.default_rng(3)
    m = rng.normal(size=(4, 6))
    by_rows = logsumexp(m, axis=1)
    for i in range(4):
        assert by_rows[i] == pytest.approx(logsumexp_row(m[i]))
    by_cols = logsumexp(m, axis=0)
    for j in range(6):
        assert by_cols[j] == pytest.approx(logsumexp_row(m[:, j]))


def test_clamp_log_identity_region():
    assert clamp_log([[1.0]], 1e-30) == pytest.approx([[0.0]])
    assert clamp_log([[math.e]], 1e-30) == pytest.approx([[1.0]])


def test_clamp_log_floor_engages():
    assert clamp_log([[0.0]], 1e-30) == pytest.approx([[math.log(1e-30)]])


def test_clamp_log_requires_positive_floor():
    with pytest.raises(ValueError):
        clamp_log([[1.0]], 0.0)
