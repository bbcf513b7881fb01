import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from weaksep.mixture import chi2_mixture_pvalue, regularized_gamma_q, welch_satterthwaite


@settings(max_examples=300, deadline=None)
@given(st.floats(0.05, 400), st.floats(1e-6, 2000))
def test_gamma_q_matches_mpmath(a, x):
    ref = float(mpmath.gammainc(a, x, mpmath.inf, regularized=True))
    got = regularized_gamma_q(a, x)
    assert abs(got - ref) <= 1e-12 + 1e-10 * ref


@pytest.mark.parametrize("a, x", [(0.5, 0.1), (1.5, 3.0), (10, 9.9), (10, 11.1), (33, 40),
                                  (0.7, 1e-8), (200, 150), (200, 260)])
def test_gamma_q_matches_scipy(a, x):
    assert regularized_gamma_q(a, x) == pytest.approx(special.gammaincc(a, x), rel=1e-11, abs=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 700))
def test_gamma_q_shape_one_is_exponential(x):
    assert regularized_gamma_q(1.0, x) == pytest.approx(math.exp(-x), rel=1e-12, abs=1e-300)


def test_gamma_q_endpoints_and_domain():
    assert regularized_gamma_q(2.5, 0.0) == 1.0
    assert regularized_gamma_q(2.5, math.inf) == 0.0
    for a, x in ((0.0, 1.0), (-1.0, 1.0), (1.0, -0.5), (math.nan, 1.0)):
        with pytest.raises(ValueError):
            regularized_gamma_q(a, x)


def test_ws_diagonal_hand():
    # tr = 4, tr^2 = 10 -> beta = 2.5, d = 1.6
    beta, d = welch_satterthwaite(np.diag([3.0, 1.0]))
    assert beta == pytest.approx(2.5, rel=1e-15)
    assert d == pytest.approx(1.6, rel=1e-15)


@pytest.mark.parametrize("m", [1, 3, 10])
def test_ws_isotropic_gives_exact_chi2(m):
    beta, d = welch_satterthwaite(0.7 * np.eye(m))
    assert beta == pytest.approx(0.7, rel=1e-14)
    assert d == pytest.approx(m, rel=1e-14)


def test_ws_singular():
    beta, d = welch_satterthwaite(np.diag([2.0, 0.0]))
    assert (beta, d) == (2.0, 1.0)


def test_ws_degenerate():
    with pytest.raises(ValueError, match="degenerate"):
        welch_satterthwaite(np.zeros((3, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 100))
def test_ws_invariances(seed, c):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((5, 5))
    theta = A @ A.T
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    b0, d0 = welch_satterthwaite(theta)
    b1, d1 = welch_satterthwaite(Q @ theta @ Q.T)
    b2, d2 = welch_satterthwaite(c * theta)
    assert b1 == pytest.approx(b0, rel=1e-10) and d1 == pytest.approx(d0, rel=1e-10)
    assert b2 == pytest.approx(c * b0, rel=1e-10) and d2 == pytest.approx(d0, rel=1e-10)
    assert 1 - 1e-12 <= d0 <= 5 + 1e-12


def test_pvalue_at_chi2_quantile():
    assert chi2_mixture_pvalue(5.9915, 1.0, 2.0) == pytest.approx(0.05, abs=1e-5)
    q = stats.chi2.ppf(0.95, 7)
    assert chi2_mixture_pvalue(q, 1.0, 7.0) == pytest.approx(0.05, rel=1e-10)


def test_pvalue_nonpositive_statistic():
    assert chi2_mixture_pvalue(0.0, 1.0, 3.0) == 1.0


def test_pvalue_monotone():
    ps = [chi2_mixture_pvalue(s, 1.3, 4.2) for s in np.linspace(0.01, 60, 200)]
    assert all(a >= b for a, b in zip(ps, ps[1:]))


def test_mixture_approximation_is_close_by_simulation():
    # weighted chi-square sum: the moment-matched tail at its own 95% point
    rng = np.random.default_rng(7)
    w = np.array([3.0, 1.0, 0.5, 0.5, 0.2])
    draws = (rng.standard_normal((400_000, w.size)) ** 2) @ w
    beta, d = welch_satterthwaite(np.diag(w))
    s95 = np.quantile(draws, 0.95)
    assert abs(chi2_mixture_pvalue(s95, beta, d) - 0.05) < 0.01
