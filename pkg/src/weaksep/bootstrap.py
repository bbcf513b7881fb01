"""
Empirical (non-studentized) bootstrap for the weak separability statistic.

Each replicate resamples subjects with replacement, re-estimates the
marginal eigenfunctions (signs aligned with the original ones), recomputes
``T_n*`` at the original ``(P, K)`` and records
``S_n* = sum (T_n* - T_n)^2``.  The p-value is the fraction of replicates
with ``S_n* > S_n``.
"""
from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._random import substream
from .datagrid import center
from .fpca import eigendecompose_marginals, marginal_covariances, marginal_scores
from .separability import sn_statistic, tn_vector

__all__ = ["BootstrapConfig", "DegenerateResample", "align_sign", "bootstrap_pvalue",
           "bootstrap_replicate", "write_replicates_csv"]

MAX_RETRIES = 10
_RANK_RTOL = 1e-12


class DegenerateResample(RuntimeError):
    pass


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be at least 1")


def align_sign(candidate, reference, weights=None):
    """Return ``candidate`` or ``-candidate``, whichever is closer to ``reference``.

    Ties (zero inner product) keep ``candidate``.
    """
    candidate = np.asarray(candidate, dtype=float)
    w = 1.0 if weights is None else weights
    return candidate if np.sum(w * candidate * reference) >= 0 else -candidate


def _align_columns(vecs, ref, weights):
    dots = np.einsum("sj,s,sj->j", vecs, weights, ref)
    return vecs * np.where(dots >= 0, 1.0, -1.0)


def bootstrap_replicate(data, fit, tn, idx):
    """``S_n*`` for the resample ``data[idx]``.

    Raises
    ------
    DegenerateResample
        If the resample has fewer than ``P`` or ``K`` nonzero marginal
        eigenvalues.
    """
    P, K = tn.P, tn.K
    c = center(data.subset(idx))
    cs, ct = marginal_covariances(c)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        eig = eigendecompose_marginals(cs, ct, c.s_axis, c.t_axis, n=c.n)
    # rank is judged against the original scale so rounding noise never counts
    if (np.count_nonzero(eig.lam > _RANK_RTOL * fit.eig.lam[0]) < P
            or np.count_nonzero(eig.gamma > _RANK_RTOL * fit.eig.gamma[0]) < K):
        raise DegenerateResample("resample has collapsed marginal rank")
    psi = _align_columns(eig.psi[:, :P], fit.eig.psi[:, :P], fit.eig.s_weights)
    phi = _align_columns(eig.phi[:, :K], fit.eig.phi[:, :K], fit.eig.t_weights)
    eig = type(eig)(eig.lam[:P], eig.gamma[:K], psi, phi, eig.s_weights, eig.t_weights)
    tn_star = tn_vector(marginal_scores(c, eig, P, K), P, K)
    return sn_statistic(tn_star.values - tn.values)


def _replicate(data, fit, tn, seed, b):
    n = data.n
    for attempt in range(MAX_RETRIES + 1):
        rng = substream(seed, b, attempt)
        idx = rng.integers(0, n, size=n)
        try:
            return bootstrap_replicate(data, fit, tn, idx)
        except DegenerateResample:
            continue
    raise DegenerateResample(f"replicate {b}: {MAX_RETRIES} retries all degenerate")


def bootstrap_pvalue(data, fit, tn, cfg, resample_indices=None, n_jobs=1):
    """Bootstrap p-value of ``S_n``.

    Parameters
    ----------
    data : MultiwayDataset
        The original sample.
    fit : MarginalFit
        Marginal fit of ``data``; its eigenfunctions are the sign references.
    tn : TnVector
        Original statistic; fixes ``(P, K)``.
    cfg : BootstrapConfig
    resample_indices : array, shape (B, n), optional
        Explicit resamples instead of random draws.
    n_jobs : int
        Worker threads.  Output does not depend on it.

    Returns
    -------
    p : float
    s_star : ndarray, shape (B,)
    """
    Sn = sn_statistic(tn)
    if resample_indices is not None:
        idx = np.asarray(resample_indices)
        jobs = [lambda i=i: bootstrap_replicate(data, fit, tn, i) for i in idx]
    else:
        jobs = [lambda b=b: _replicate(data, fit, tn, cfg.seed, b) for b in range(cfg.B)]
    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            s_star = np.array(list(pool.map(lambda f: f(), jobs)))
    else:
        s_star = np.array([f() for f in jobs])
    p = np.count_nonzero(s_star > Sn) / s_star.size
    return float(p), s_star


def write_replicates_csv(path, s_star):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", "S_star"])
        for b, v in enumerate(s_star):
            w.writerow([b, repr(float(v))])
