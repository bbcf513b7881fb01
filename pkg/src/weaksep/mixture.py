"""
Scaled chi-square approximation to weighted sums of chi-square variables.

A quadratic form ``S = sum_i sigma_i A_i`` with ``A_i ~ chi2_1`` is matched
in mean and variance by ``beta * chi2_d``.  Upper tails with non-integer
``d`` go through the regularized upper incomplete gamma function.
"""
import math

import numpy as np

__all__ = ["regularized_gamma_q", "welch_satterthwaite", "chi2_mixture_pvalue"]

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 100_000


def _series_p(a, x):
    # P(a, x) = x^a e^-x / Gamma(a+1) * sum_n x^n / ((a+1)...(a+n))
    term = total = 1.0 / a
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma series did not converge (a={a}, x={x})")
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _contfrac_q(a, x):
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma fraction did not converge (a={a}, x={x})")
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_q(a, x):
    """Regularized upper incomplete gamma ``Q(a, x) = Gamma(a, x) / Gamma(a)``.

    Uses the power series for ``x < a + 1`` and a continued fraction
    otherwise.
    """
    a = float(a)
    x = float(x)
    if not a > 0 or math.isinf(a):
        raise ValueError(f"shape must be positive and finite, got {a}")
    if not x >= 0:
        raise ValueError(f"x must be nonnegative, got {x}")
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        q = 1.0 - _series_p(a, x)
    else:
        q = _contfrac_q(a, x)
    return min(max(q, 0.0), 1.0)


def welch_satterthwaite(theta):
    """Moment-matched ``(beta, d)`` for ``T^T T`` with ``T ~ N(0, theta)``.

    ``beta = tr(theta^2) / tr(theta)`` and ``d = tr(theta)^2 / tr(theta^2)``.
    """
    theta = np.asarray(theta, dtype=float)
    tr = float(np.trace(theta))
    tr2 = float(np.sum(theta * theta.T))
    if not tr > 0 or not tr2 > 0:
        raise ValueError("degenerate Θ: trace must be positive")
    return tr2 / tr, tr * tr / tr2


def chi2_mixture_pvalue(Sn, beta, d):
    """Upper tail ``P(beta * chi2_d > Sn)``."""
    if not beta > 0 or not d > 0:
        raise ValueError(f"beta and d must be positive, got beta={beta}, d={d}")
    if Sn <= 0:
        return 1.0
    return regularized_gamma_q(d / 2.0, Sn / (2.0 * beta))
