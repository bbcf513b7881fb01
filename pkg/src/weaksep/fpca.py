"""
Marginal functional principal components of two-way functional data.

The marginal kernels are estimated by integrating the sample covariance over
the other argument; their eigenfunctions give the product basis
``psi_j(s) phi_k(t)`` onto which centered surfaces are projected.  All
integrals are quadrature sums with the axis weights, so eigenvectors are
orthonormal in the weighted inner product ``x^T W y``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .datagrid import CenteredDataset, center

__all__ = [
    "EigengapWarning",
    "MarginalEigenSystem",
    "ScoreArray",
    "FveReport",
    "MarginalFit",
    "marginal_covariances",
    "eigendecompose_marginals",
    "marginal_scores",
    "fve",
    "select_PK",
    "fit_marginals",
]

# eigenvalues at or below this fraction of the leading one are treated as zero
NONZERO_RTOL = 1e-12
GAP_RTOL = 1e-8
FVE_LEVELS = (0.90, 0.95)


class EigengapWarning(UserWarning):
    pass


def marginal_covariances(c, s_weights=None, t_weights=None):
    """Estimated marginal covariance matrices ``(C_S, C_T)``.

    ``C_S = (1/n) sum_i R_i W_T R_i^T`` and ``C_T = (1/n) sum_i R_i^T W_S R_i``
    where ``R_i`` are the residual surfaces.  Weights default to the axes of
    the centered dataset.
    """
    if s_weights is None:
        s_weights = c.s_axis.weights
    if t_weights is None:
        t_weights = c.t_axis.weights
    R = c.residuals
    n = R.shape[0]
    cs = np.einsum("ist,t,iut->su", R, t_weights, R, optimize=True) / n
    ct = np.einsum("ist,s,isv->tv", R, s_weights, R, optimize=True) / n
    return (cs + cs.T) / 2, (ct + ct.T) / 2


def _weighted_eigh(cov, weights, rank_cap):
    """Eigenpairs of the integral operator ``f -> C W f``, descending."""
    sw = np.sqrt(weights)
    A = sw[:, None] * cov * sw[None, :]
    try:
        vals, vecs = np.linalg.eigh((A + A.T) / 2)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed: {exc}") from exc
    vals = vals[::-1][:rank_cap]
    vecs = vecs[:, ::-1][:, :rank_cap] / sw[:, None]
    top = vals[0] if vals.size else 0.0
    scale = max(abs(top), 0.0)
    if vals.size and vals.min() < -NONZERO_RTOL * scale:
        raise ValueError(f"covariance is not positive semidefinite "
                         f"(eigenvalue {vals.min():.3e}, leading {top:.3e})")
    vals = np.clip(vals, 0.0, None)
    # largest-magnitude coordinate positive; argmax takes the first on ties
    lead = np.abs(vecs).argmax(axis=0)
    signs = np.sign(vecs[lead, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vals, vecs * signs


def _gap_warnings(vals, label):
    out = []
    if vals.size == 0 or vals[0] <= 0:
        return out
    keep = vals[vals > NONZERO_RTOL * vals[0]]
    gaps = -np.diff(keep)
    for idx in np.flatnonzero(gaps < GAP_RTOL * vals[0]):
        out.append(f"near-degenerate eigengap in {label}: "
                   f"components {idx + 1} and {idx + 2}")
    return out


@dataclass(frozen=True, eq=False)
class MarginalEigenSystem:
    """Marginal eigenvalues and weighted-orthonormal eigenvectors.

    ``psi[:, j]`` and ``phi[:, k]`` hold the j-th spatial and k-th temporal
    eigenfunctions evaluated on the grid.
    """

    lam: np.ndarray
    gamma: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    s_weights: np.ndarray
    t_weights: np.ndarray
    warnings: tuple = ()

    @property
    def P_max(self):
        return self.lam.size

    @property
    def K_max(self):
        return self.gamma.size

    def rank_s(self, rtol=NONZERO_RTOL):
        """Number of spatial eigenvalues above ``rtol`` times the leading one."""
        return _count_above(self.lam, rtol)

    def rank_t(self, rtol=NONZERO_RTOL):
        return _count_above(self.gamma, rtol)

    def to_dict(self):
        return {
            "lambda": self.lam.tolist(),
            "gamma": self.gamma.tolist(),
            "psi": self.psi.tolist(),
            "phi": self.phi.tolist(),
            "warnings": list(self.warnings),
        }


def _count_above(vals, rtol):
    if vals.size == 0 or vals[0] <= 0:
        return 0
    return int(np.count_nonzero(vals > rtol * vals[0]))


def eigendecompose_marginals(C_S, C_T, s_axis, t_axis, n=None):
    """Eigendecompose both marginal covariances.

    Parameters
    ----------
    C_S, C_T : symmetric arrays
    s_axis, t_axis : GridAxis
        Supply the quadrature weights.
    n : int, optional
        Sample size; caps the retained rank at ``n - 1``.

    Returns
    -------
    MarginalEigenSystem
        Near-degenerate consecutive eigenvalues are reported in ``warnings``
        and emitted as :class:`EigengapWarning`.
    """
    cap_s, cap_t = len(s_axis), len(t_axis)
    if n is not None:
        cap_s, cap_t = min(cap_s, n - 1), min(cap_t, n - 1)
    lam, psi = _weighted_eigh(np.asarray(C_S, float), s_axis.weights, max(cap_s, 1))
    gam, phi = _weighted_eigh(np.asarray(C_T, float), t_axis.weights, max(cap_t, 1))
    notes = tuple(_gap_warnings(lam, "C_S") + _gap_warnings(gam, "C_T"))
    for msg in notes:
        warnings.warn(msg, EigengapWarning, stacklevel=2)
    return MarginalEigenSystem(lam, gam, psi, phi, s_axis.weights, t_axis.weights, notes)


@dataclass(frozen=True, eq=False)
class ScoreArray:
    """Marginal projection scores ``chi[i, j, k]`` and ``eta = mean(chi**2)``."""

    chi: np.ndarray
    eta: np.ndarray

    @property
    def n(self):
        return self.chi.shape[0]

    @property
    def P(self):
        return self.chi.shape[1]

    @property
    def K(self):
        return self.chi.shape[2]

    def truncate(self, P, K):
        chi = self.chi[:, :P, :K]
        return ScoreArray(chi, self.eta[:P, :K])


def project(residuals, psi, phi, s_weights, t_weights):
    """``chi[i, j, k] = sum_{s,t} R_i(s,t) psi_j(s) phi_k(t) w_s w_t``."""
    left = psi * s_weights[:, None]
    right = phi * t_weights[:, None]
    return np.einsum("sj,ist,tk->ijk", left, residuals, right, optimize=True)


def marginal_scores(c, eig, P=None, K=None):
    """Scores of the centered surfaces on the first ``P x K`` product functions."""
    P = eig.P_max if P is None else P
    K = eig.K_max if K is None else K
    if not (0 <= P <= eig.P_max and 0 <= K <= eig.K_max):
        raise ValueError(f"(P, K) = ({P}, {K}) outside available range "
                         f"({eig.P_max}, {eig.K_max})")
    chi = project(c.residuals, eig.psi[:, :P], eig.phi[:, :K],
                  eig.s_weights, eig.t_weights)
    eta = np.mean(chi ** 2, axis=0)
    return ScoreArray(chi, eta)


@dataclass(frozen=True)
class FveReport:
    """Fractions of variance explained.

    ``fve_S[p]`` and ``fve_T[k]`` are the marginal fractions for the first
    ``p`` / ``k`` components (index 0 holds 0.0); ``fve_joint[p, k]`` is the
    joint fraction.  ``chosen`` is the selected ``(P, K)``.
    """

    fve_S: np.ndarray
    fve_T: np.ndarray
    fve_joint: np.ndarray
    chosen: tuple
    thresholds: tuple

    def to_dict(self):
        P, K = self.chosen
        return {
            "P": int(P),
            "K": int(K),
            "fve_joint": float(self.fve_joint[P, K]),
            "fve_S": self.fve_S.tolist(),
            "fve_T": self.fve_T.tolist(),
            "fve_joint_table": self.fve_joint.tolist(),
            "thresholds": list(self.thresholds),
        }


def _fractions(vals):
    r = _count_above(vals, NONZERO_RTOL)
    out = np.zeros(r + 1)
    if r:
        out[1:] = np.cumsum(vals[:r]) / vals[:r].sum()
    return out


def _fve_tables(eig, scores):
    fs, ft = _fractions(eig.lam), _fractions(eig.gamma)
    P, K = fs.size - 1, ft.size - 1
    if scores.P < P or scores.K < K:
        raise ValueError("scores do not cover the retained rank")
    eta = scores.eta[:P, :K]
    total = eta.sum()
    joint = np.zeros((P + 1, K + 1))
    if total > 0:
        joint[1:, 1:] = eta.cumsum(axis=0).cumsum(axis=1) / total
    return fs, ft, joint


def _smallest_reaching(frac, level):
    hits = np.flatnonzero(frac >= level)
    return int(hits[0]) if hits.size else frac.size - 1


def select_PK(eig, scores, levels=FVE_LEVELS):
    """Choose ``(P, K)`` by the two-stage variance-explained rule.

    Take the smallest ``P`` and ``K`` whose marginal fractions reach
    ``levels[0]``; keep them if the joint fraction also reaches
    ``levels[0]``, otherwise use the marginal choices at ``levels[1]``.
    """
    fs, ft, joint = _fve_tables(eig, scores)
    return _select(fs, ft, joint, levels)


def _select(fs, ft, joint, levels):
    lo, hi = levels
    P, K = _smallest_reaching(fs, lo), _smallest_reaching(ft, lo)
    if joint[P, K] >= lo:
        return P, K
    return _smallest_reaching(fs, hi), _smallest_reaching(ft, hi)


def fve(eig, scores, P=None, K=None, levels=FVE_LEVELS):
    """Variance-explained tables; ``chosen`` is ``(P, K)`` or the rule's pick.

    ``scores`` must cover every component with a nonzero eigenvalue.
    """
    fs, ft, joint = _fve_tables(eig, scores)
    if P is None or K is None:
        chosen = _select(fs, ft, joint, levels)
    else:
        if P > fs.size - 1 or K > ft.size - 1:
            raise ValueError("(P, K) beyond retained rank")
        chosen = (P, K)
    return FveReport(fs, ft, joint, chosen, tuple(levels))


@dataclass(frozen=True, eq=False)
class MarginalFit:
    centered: CenteredDataset
    eig: MarginalEigenSystem
    scores: ScoreArray


def fit_marginals(data):
    """Center, estimate marginal covariances, eigendecompose and project."""
    c = center(data)
    cs, ct = marginal_covariances(c)
    eig = eigendecompose_marginals(cs, ct, c.s_axis, c.t_axis, n=c.n)
    return MarginalFit(c, eig, marginal_scores(c, eig))
