"""
Test of weak separability for two-way functional data.

Under weak separability the marginal projection scores ``chi_jk`` are
mutually uncorrelated.  The statistic collects the scaled empirical
cross-moments

    T_n(j,k,j',k') = n^{-1/2} sum_i chi_{i,jk} chi_{i,j'k'},   (j,k) < (j',k')

into a vector of length ``m = PK(PK-1)/2`` and sums their squares.  Its null
law is a weighted chi-square sum whose weights are the eigenvalues of the
asymptotic covariance ``Theta`` of ``T_n``.  Because the scores use estimated
eigenfunctions, each ``T_n`` entry carries up to two extra first-order terms
with eigengap coefficients; :func:`term_decomposition` lists them and
``Theta`` is the second moment of the resulting per-subject influence sums.

Indices are 0-based throughout; ``(j, k) < (j', k')`` means
``j*K + k < j'*K + k'``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .fpca import fit_marginals, select_PK
from .mixture import chi2_mixture_pvalue, welch_satterthwaite

__all__ = [
    "EigengapError",
    "Term",
    "TnVector",
    "TestResult",
    "quadruple_indices",
    "tn_vector",
    "sn_statistic",
    "term_decomposition",
    "truncation_bounds",
    "influence_values",
    "theta_influence",
    "theta_ninecase",
    "statistics_from_fit",
    "run_test",
]

GAP_RTOL = 1e-8
TRUNC_RTOL = 1e-10


class EigengapError(ValueError):
    """Two retained marginal eigenvalues are too close to separate."""


def quadruple_indices(P, K):
    """All ``(j, k, j', k')`` with ``(j, k) < (j', k')``, shape ``(m, 4)``."""
    a, b = np.triu_indices(P * K, k=1)
    return np.column_stack([a // K, a % K, b // K, b % K])


@dataclass(frozen=True, eq=False)
class TnVector:
    values: np.ndarray
    index: np.ndarray
    P: int
    K: int

    def __len__(self):
        return self.values.size

    def as_matrix(self):
        """Symmetric ``PK x PK`` matrix with the entries off the diagonal."""
        PK = self.P * self.K
        M = np.zeros((PK, PK))
        a = self.index[:, 0] * self.K + self.index[:, 1]
        b = self.index[:, 2] * self.K + self.index[:, 3]
        M[a, b] = M[b, a] = self.values
        return M


def tn_vector(scores, P, K):
    """Stacked ``T_n(j,k,j',k')`` over the ordered index list."""
    if P * K < 2:
        raise ValueError("nothing to test: need P*K >= 2")
    if P > scores.P or K > scores.K:
        raise ValueError("scores do not cover (P, K)")
    n = scores.n
    flat = scores.chi[:, :P, :K].reshape(n, P * K)
    cross = flat.T @ flat / np.sqrt(n)
    a, b = np.triu_indices(P * K, k=1)
    return TnVector(cross[a, b], quadruple_indices(P, K), P, K)


def sn_statistic(t):
    """Sum of squares of the ``T_n`` entries."""
    v = t.values if isinstance(t, TnVector) else np.asarray(t, dtype=float)
    return float(np.dot(v, v))


# -- first-order term structure ---------------------------------------------

@dataclass(frozen=True)
class Term:
    """``coef * tr{(A_1 (x) A_2) Z}`` with ``A_1 = psi_a (x) psi_b`` or identity.

    ``s_pair``/``t_pair`` of ``None`` stands for the identity on that axis.
    """

    s_pair: tuple | None
    t_pair: tuple | None
    coef: float


def _check_gaps(vals, count, label):
    top = vals[0]
    for j in range(count - 1):
        if vals[j] - vals[j + 1] <= GAP_RTOL * top:
            raise EigengapError(
                f"eigengap between {label}{j + 1} and {label}{j + 2} "
                f"({vals[j]:.6g} vs {vals[j + 1]:.6g}) below {GAP_RTOL:g} of the leading value")


def term_decomposition(eig, scores, P, K, on_gap="raise"):
    """First-order terms of each ``T_n`` entry, with plug-in coefficients.

    Parameters
    ----------
    eig : MarginalEigenSystem
    scores : ScoreArray
        Must cover ``(P, K)``; supplies ``eta``.
    on_gap : {"raise", "skip"}
        What to do when a coefficient needs an eigenvalue difference that is
        numerically zero: raise :class:`EigengapError`, or drop that
        correction term.

    Returns
    -------
    list of list of Term
        One list per row of ``quadruple_indices(P, K)``.  Off both diagonals
        there is one term; sharing ``j`` adds two temporal corrections with
        identity on ``s``; sharing ``k`` adds two spatial corrections with
        identity on ``t``.
    """
    lam, gam, eta = eig.lam, eig.gamma, scores.eta
    if on_gap == "raise":
        _check_gaps(lam, P, "lambda")
        _check_gaps(gam, K, "gamma")
    tol_s, tol_t = GAP_RTOL * lam[0], GAP_RTOL * gam[0]
    out = []
    for j, k, j2, k2 in quadruple_indices(P, K).tolist():
        terms = [Term((j, j2), (k, k2), 1.0)]
        if j == j2:
            d = gam[k] - gam[k2]
            if abs(d) > tol_t:
                terms.append(Term(None, (k, k2), eta[j, k2] / d))
                terms.append(Term(None, (k2, k), eta[j, k] / -d))
        elif k == k2:
            d = lam[j2] - lam[j]
            if abs(d) > tol_s:
                terms.append(Term((j2, j), None, eta[j, k] / d))
                terms.append(Term((j, j2), None, eta[j2, k] / -d))
        out.append(terms)
    return out


def truncation_bounds(eig, rtol=TRUNC_RTOL):
    """Implied-sum limits ``(M_S, M_T)``: components above ``rtol`` of the lead."""
    return max(eig.rank_s(rtol), 1), max(eig.rank_t(rtol), 1)


def influence_values(chi, term, M_S, M_T):
    """Per-subject value of one term's trace against ``x_i (x) x_i``.

    ``chi`` is the ``n x M_S' x M_T'`` score array covering the truncation
    bounds.  Identity on ``s`` sums over the first ``M_S`` spatial indices,
    identity on ``t`` over the first ``M_T`` temporal ones.
    """
    if M_S > chi.shape[1] or M_T > chi.shape[2]:
        raise ValueError(f"truncation ({M_S}, {M_T}) exceeds available scores {chi.shape[1:]}")
    if term.coef == 0:
        return np.zeros(chi.shape[0])
    if term.s_pair is None:
        c, d = term.t_pair
        g = np.einsum("im,im->i", chi[:, :M_S, c], chi[:, :M_S, d])
    elif term.t_pair is None:
        a, b = term.s_pair
        g = np.einsum("im,im->i", chi[:, a, :M_T], chi[:, b, :M_T])
    else:
        (a, b), (c, d) = term.s_pair, term.t_pair
        g = chi[:, a, c] * chi[:, b, d]
    return term.coef * g


def theta_influence(chi, decomp, M_S, M_T):
    """``Theta[u, v] = (1/n) sum_i Y_i(u) Y_i(v)`` with ``Y_i(u)`` the influence sum."""
    n = chi.shape[0]
    Y = np.zeros((n, len(decomp)))
    for u, terms in enumerate(decomp):
        for term in terms:
            Y[:, u] += influence_values(chi, term, M_S, M_T)
    theta = Y.T @ Y / n
    return (theta + theta.T) / 2


def theta_ninecase(chi, decomp, M_S, M_T):
    """Slow reference for :func:`theta_influence`.

    Enumerates every pair of terms, classifies it into one of nine cases by
    which of ``A_1, A_2, B_1, B_2`` is an identity, and sums uncentered
    empirical fourth moments of the scores over the implied indices with
    explicit loops.
    """
    chi = chi[:, :M_S, :M_T]
    n = chi.shape[0]
    flat = chi.reshape(n, M_S * M_T)
    # beta[(a,c),(b,d),(e,g),(f,h)] = mean_i chi_ac chi_bd chi_eg chi_fh
    beta = np.einsum("ip,iq,ir,is->pqrs", flat, flat, flat, flat, optimize=True) / n
    beta = beta.reshape((M_S, M_T) * 4)

    def pair_moment(p, q):
        A1, A2, B1, B2 = p.s_pair, p.t_pair, q.s_pair, q.t_pair
        coef = p.coef * q.coef
        if coef == 0:
            return 0.0
        total = 0.0
        if A1 and A2 and B1 and B2:                    # case 1
            total = beta[A1[0], A2[0], A1[1], A2[1], B1[0], B2[0], B1[1], B2[1]]
        elif A1 is None and B1 and B2:                 # case 2
            for i in range(M_S):
                total += beta[i, A2[0], i, A2[1], B1[0], B2[0], B1[1], B2[1]]
        elif A2 is None and B1 and B2:                 # case 3
            for i in range(M_T):
                total += beta[A1[0], i, A1[1], i, B1[0], B2[0], B1[1], B2[1]]
        elif A1 and A2 and B1 is None:                 # case 4
            for k in range(M_S):
                total += beta[A1[0], A2[0], A1[1], A2[1], k, B2[0], k, B2[1]]
        elif A1 and A2 and B2 is None:                 # case 5
            for k in range(M_T):
                total += beta[A1[0], A2[0], A1[1], A2[1], B1[0], k, B1[1], k]
        elif A1 is None and B1 is None:                # case 6
            for i in range(M_S):
                for k in range(M_S):
                    total += beta[i, A2[0], i, A2[1], k, B2[0], k, B2[1]]
        elif A1 is None and B2 is None:                # case 7
            for i in range(M_S):
                for k in range(M_T):
                    total += beta[i, A2[0], i, A2[1], B1[0], k, B1[1], k]
        elif A2 is None and B1 is None:                # case 8
            for i in range(M_T):
                for k in range(M_S):
                    total += beta[A1[0], i, A1[1], i, k, B2[0], k, B2[1]]
        elif A2 is None and B2 is None:                # case 9
            for i in range(M_T):
                for k in range(M_T):
                    total += beta[A1[0], i, A1[1], i, B1[0], k, B1[1], k]
        else:
            raise AssertionError("term with identity on both axes")
        return coef * total

    m = len(decomp)
    theta = np.zeros((m, m))
    for u in range(m):
        for v in range(u, m):
            theta[u, v] = theta[v, u] = sum(
                pair_moment(p, q) for p in decomp[u] for q in decomp[v])
    return theta


# -- orchestration ----------------------------------------------------------

@dataclass
class TestResult:
    method: str
    P: int
    K: int
    S_n: float
    trace_theta: float
    trace_theta_sq: float
    beta: float
    d: float
    p_value: float
    warnings: list = field(default_factory=list)

    __test__ = False  # keep pytest from collecting this class

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def statistics_from_fit(fit, P, K, theta_method="influence", on_gap="skip"):
    """Chi-square mixture test on an already fitted :class:`MarginalFit`.

    Returns
    -------
    result : TestResult
    tn : TnVector
    theta : ndarray
    """
    eig, scores = fit.eig, fit.scores
    notes = list(eig.warnings)
    tn = tn_vector(scores, P, K)
    Sn = sn_statistic(tn)
    try:
        decomp = term_decomposition(eig, scores, P, K, on_gap="raise")
    except EigengapError as exc:
        if on_gap == "raise":
            raise
        notes.append(f"{exc}; affected correction terms dropped")
        decomp = term_decomposition(eig, scores, P, K, on_gap="skip")
    M_S, M_T = truncation_bounds(eig)
    M_S, M_T = max(M_S, P), max(M_T, K)
    estimator = theta_influence if theta_method == "influence" else theta_ninecase
    theta = estimator(scores.chi, decomp, M_S, M_T)
    tr = float(np.trace(theta))
    tr2 = float(np.sum(theta * theta))
    if tr > 0 and tr2 > 0:
        beta, d = welch_satterthwaite(theta)
        p = chi2_mixture_pvalue(Sn, beta, d)
    else:
        notes.append("degenerate Θ: p-value set to 1")
        beta = d = float("nan")
        p = 1.0
    p = float(min(max(p, 0.0), 1.0))
    result = TestResult("chi2-mixture", int(P), int(K), Sn, tr, tr2, beta, d, p, notes)
    return result, tn, theta


def run_test(data, P=None, K=None, method="chi2", B=1000, seed=0,
             theta_method="influence", n_jobs=1):
    """Test weak separability of a :class:`~weaksep.datagrid.MultiwayDataset`.

    Parameters
    ----------
    data : MultiwayDataset
    P, K : int, optional
        Number of spatial / temporal components.  Both ``None`` selects them
        by the variance-explained rule.
    method : {"chi2", "bootstrap"}
        Null approximation: scaled chi-square matched to the plug-in
        ``Theta``, or the empirical bootstrap with ``B`` replicates.
    seed : int
        Bootstrap seed.
    theta_method : {"influence", "ninecase"}

    Returns
    -------
    TestResult
    """
    if data.n < 3:
        raise ValueError("need at least three subjects")
    if (P is None) != (K is None):
        raise ValueError("give both P and K, or neither")
    fit = fit_marginals(data)
    if P is None:
        P, K = select_PK(fit.eig, fit.scores)
    if not (1 <= P <= fit.eig.P_max and 1 <= K <= fit.eig.K_max):
        raise ValueError(f"(P, K) = ({P}, {K}) outside retained rank "
                         f"({fit.eig.P_max}, {fit.eig.K_max})")
    result, tn, _ = statistics_from_fit(fit, P, K, theta_method=theta_method)
    if method == "bootstrap":
        from .bootstrap import BootstrapConfig, bootstrap_pvalue
        p, _ = bootstrap_pvalue(data, fit, tn, BootstrapConfig(B=B, seed=seed), n_jobs=n_jobs)
        result.method = "bootstrap"
        result.p_value = p
    elif method != "chi2":
        raise ValueError(f"unknown method {method!r}")
    return result
