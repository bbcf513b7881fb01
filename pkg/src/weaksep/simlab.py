"""
Simulation design for size and power of the weak separability test.

Surfaces are generated as ``X_i = sum_{j,k<=8} chi_{i,jk} psi_j(s) phi_k(t)``
on a 20-point grid of ``[0, 1]``.  The 64 scores have covariance ``Sigma``
whose diagonal is a variance matrix ``V`` (strongly separable ``V1`` or the
rank-2 ``V2``) and whose off-diagonal entries are zero under the null or
carry one or three positive covariances under the alternatives.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from ._random import GENERATOR_NAME, box_muller, substream
from .bootstrap import BootstrapConfig, bootstrap_pvalue
from .datagrid import GridAxis, MultiwayDataset
from .fpca import fit_marginals, select_PK
from .separability import statistics_from_fit, tn_vector

__all__ = [
    "SIM_GRID", "NB", "PAIR_SINGLE", "PAIRS_TRIPLE",
    "SimBasis", "VMatrix", "SimulationScenario", "RejectionTable",
    "marginal_eigenvalues", "trig_raw", "trig_psi", "bspline_basis", "bspline_columns",
    "build_phi", "sim_basis", "gram_schmidt", "build_V", "assemble_sigma", "max_pd_cov",
    "sample_scores", "synthesize_surfaces", "simulate_dataset", "run_scenario",
]

NB = 8
SIM_GRID = np.linspace(0.0, 1.0, 20)
# score positions are 1-based (j, k) as in the design tables
PAIR_SINGLE = ((1, 2), (2, 1))
PAIRS_TRIPLE = (((1, 2), (2, 1)), ((1, 1), (2, 2)), ((1, 3), (3, 1)))
V2_PAIR_MAX = 0.11
BSPLINE_KNOTS = (0.0, 0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 1.0)


def _flat(jk):
    j, k = jk
    return (j - 1) * NB + (k - 1)


# -- bases ------------------------------------------------------------------

def trig_raw(grid):
    """Unnormalized trigonometric columns; odd j: -sqrt2 cos(pi(j+1)s), even j: sqrt2 sin(pi j s)."""
    s = np.asarray(grid, dtype=float)
    cols = []
    for j in range(1, NB + 1):
        if j % 2:
            cols.append(-math.sqrt(2) * np.cos(np.pi * (j + 1) * s))
        else:
            cols.append(math.sqrt(2) * np.sin(np.pi * j * s))
    return np.column_stack(cols)


def gram_schmidt(cols, weights):
    """Sequential orthonormalization in ``<x, y> = sum w x y``, column order kept.

    Each column is reorthogonalized once (two passes of modified
    Gram-Schmidt), which keeps the Gram matrix at the identity to rounding.
    """
    Q = np.array(cols, dtype=float, copy=True)
    scale = np.sqrt(np.max(np.sum(weights[:, None] * Q * Q, axis=0)))
    for j in range(Q.shape[1]):
        v = Q[:, j]
        for _ in range(2):
            for i in range(j):
                v = v - np.dot(weights * Q[:, i], v) * Q[:, i]
        norm = math.sqrt(np.dot(weights * v, v))
        if norm <= 1e-10 * scale:
            raise np.linalg.LinAlgError(f"column {j + 1} is linearly dependent on the grid")
        Q[:, j] = v / norm
    return Q


def trig_psi(grid=SIM_GRID):
    """Spatial basis: trigonometric columns orthonormalized under trapezoid weights."""
    return gram_schmidt(trig_raw(grid), GridAxis(grid).weights)


def bspline_basis(x, knots, order):
    """All B-spline basis functions of ``order`` on ``knots`` by Cox-de Boor.

    Returns an array of shape ``(len(x), len(knots) - order)``.  The last
    nonempty knot span is closed on the right so the basis sums to one on
    the whole interval.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.asarray(knots, dtype=float)
    nspan = t.size - 1
    last = max(i for i in range(nspan) if t[i] < t[i + 1])
    B = np.zeros((x.size, nspan))
    for i in range(nspan):
        if t[i] < t[i + 1]:
            upper = (x <= t[i + 1]) if i == last else (x < t[i + 1])
            B[:, i] = (x >= t[i]) & upper
    for p in range(1, order):
        nxt = np.zeros((x.size, nspan - p))
        for i in range(nspan - p):
            left = t[i + p] - t[i]
            right = t[i + p + 1] - t[i + 1]
            if left > 0:
                nxt[:, i] += (x - t[i]) / left * B[:, i]
            if right > 0:
                nxt[:, i] += (t[i + p + 1] - x) / right * B[:, i + 1]
        B = nxt
    return B


def bspline_columns(grid=SIM_GRID):
    """First three cubic B-splines on knots ``{0,0,0,0,0.5,1,1,1,1}``."""
    return bspline_basis(grid, BSPLINE_KNOTS, 4)[:, :3]


def build_phi(grid=SIM_GRID):
    """Temporal basis: 3 B-splines then the first 5 trig columns, orthonormalized."""
    cols = np.column_stack([bspline_columns(grid), trig_raw(grid)[:, :5]])
    return gram_schmidt(cols, GridAxis(grid).weights)


@dataclass(frozen=True, eq=False)
class SimBasis:
    psi: np.ndarray
    phi: np.ndarray
    grid: GridAxis


def sim_basis(grid=SIM_GRID):
    return SimBasis(trig_psi(grid), build_phi(grid), GridAxis(grid))


# -- score covariance -------------------------------------------------------

def marginal_eigenvalues():
    """``(lambda, gamma)``: geometric decay at rates 1.2 and 1.6, each summing to one."""
    j = np.arange(1, NB + 1)
    lam = np.exp(1.2 * (9 - j)) / np.exp(1.2 * j).sum()
    gam = np.exp(1.6 * (9 - j)) / np.exp(1.6 * j).sum()
    return lam, gam


@dataclass(frozen=True, eq=False)
class VMatrix:
    values: np.ndarray
    variant: str


def _v2_profiles(lam, gam, t):
    head = lam[0] + lam[1]
    e2 = np.zeros(NB)
    e2[1] = 1.0
    w = (1.0 - t) * gam + t * e2
    u = (gam - (1.0 - head) * w) / head
    return u, w


def build_V(variant):
    """Score variance matrix ``V[j, k] = var(chi_jk)`` for ``"V1"`` or ``"V2"``.

    ``V1 = lambda gamma^T``.  ``V2`` has rows 1-2 equal to ``lambda_j u`` and
    rows 3-8 equal to ``lambda_j w`` for probability vectors ``u != w`` with
    ``(lambda_1 + lambda_2) u + (1 - lambda_1 - lambda_2) w = gamma``, so
    row sums are ``lambda`` and column sums ``gamma``.  ``w`` mixes ``gamma``
    with a point mass on ``k = 2``; the mixing weight is the one for which
    the largest admissible ``cov(chi_12, chi_21)`` equals 0.11.
    """
    lam, gam = marginal_eigenvalues()
    if variant == "V1":
        return VMatrix(np.outer(lam, gam), "V1")
    if variant != "V2":
        raise ValueError(f"unknown variant {variant!r}")

    def excess(t):
        u, _ = _v2_profiles(lam, gam, t)
        return math.sqrt(lam[0] * u[1] * lam[1] * u[0]) - V2_PAIR_MAX

    t = brentq(excess, 0.0, 1.0, xtol=1e-15)
    u, w = _v2_profiles(lam, gam, t)
    if np.any(u < 0) or np.any(w < 0):
        raise ValueError("V2 construction produced a negative variance")
    V = np.vstack([np.outer(lam[:2], u), np.outer(lam[2:], w)])
    return VMatrix(V, "V2")


def _pairs_of(spec):
    kind = spec[0] if isinstance(spec, tuple) else spec
    if kind == "H0":
        return (), ()
    if kind == "single":
        return (PAIR_SINGLE,), (float(spec[1]),)
    if kind == "triple":
        vals = spec[1]
        return PAIRS_TRIPLE, tuple(float(v) for v in vals)
    raise ValueError(f"unknown off-diagonal spec {spec!r}")


def _sigma(V, pairs, values):
    vals = V.values if isinstance(V, VMatrix) else np.asarray(V)
    S = np.diag(vals.ravel()).astype(float)
    for (a, b), c in zip(pairs, values):
        S[_flat(a), _flat(b)] = S[_flat(b), _flat(a)] = c
    return S


def _is_pd(S):
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return False
    return True


def assemble_sigma(V, spec="H0"):
    """64 x 64 score covariance.

    Parameters
    ----------
    V : VMatrix
    spec : "H0", ("single", c) or ("triple", (c1, c2, c3))
        Off-diagonal covariances on ``cov(chi_12, chi_21)``, and for the
        triple also ``cov(chi_11, chi_22)`` and ``cov(chi_13, chi_31)``.
    """
    pairs, values = _pairs_of(spec)
    S = _sigma(V, pairs, values)
    if not _is_pd(S):
        raise np.linalg.LinAlgError("Σ not PD")
    return S


def _bisect(pd_at, hi, tol=1e-9):
    lo = 0.0
    if not pd_at(lo):
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pd_at(mid):
            lo = mid
        else:
            hi = mid
    return lo


def max_pd_cov(V, pairs=(PAIR_SINGLE,)):
    """Largest positive covariance(s) keeping ``Sigma`` positive definite.

    One pair: bisection on the covariance.  Several pairs: each is set to a
    common fraction of its own single-pair maximum and the fraction is
    bisected.  Results are shrunk by a relative ``1e-6`` to stay strictly
    inside the PD cone.  Returns a float for one pair, otherwise a tuple.
    """
    vals = V.values if isinstance(V, VMatrix) else np.asarray(V)
    pairs = tuple(pairs)
    if not pairs:
        raise ValueError("no pairs given")

    def single(pair):
        a, b = pair
        upper = math.sqrt(vals[a[0] - 1, a[1] - 1] * vals[b[0] - 1, b[1] - 1])
        if upper <= 0:
            return 0.0
        sup = _bisect(lambda c: _is_pd(_sigma(vals, (pair,), (c,))), upper)
        return sup * (1 - 1e-6)

    caps = [single(p) for p in pairs]
    if len(pairs) == 1:
        return caps[0]
    f = _bisect(lambda f: _is_pd(_sigma(vals, pairs, [f * c for c in caps])), 1.0)
    return tuple(f * (1 - 1e-6) * c for c in caps)


# -- sampling ---------------------------------------------------------------

def sample_scores(Sigma, dist, n, rng, df=6):
    """``n`` score vectors with covariance ``Sigma``.

    ``dist="normal"``: ``L z`` with ``L`` the Cholesky factor.
    ``dist="t"``: ``x / sqrt(u / (df - 2))`` with ``x`` normal as above and
    ``u ~ chi2_df`` (sum of ``df`` squared normals), so the covariance is
    still ``Sigma``.
    """
    L = np.linalg.cholesky(Sigma)
    x = box_muller(rng, (n, Sigma.shape[0])) @ L.T
    if dist == "normal":
        return x
    if dist == "t":
        u = np.sum(box_muller(rng, (n, df)) ** 2, axis=1)
        return x / np.sqrt(u / (df - 2))[:, None]
    raise ValueError(f"unknown distribution {dist!r}")


def synthesize_surfaces(scores, basis):
    """``X_i = psi mat(chi_i) phi^T`` for score rows ordered ``(j, k)`` row-major."""
    chi = np.asarray(scores, dtype=float).reshape(-1, basis.psi.shape[1], basis.phi.shape[1])
    X = np.einsum("sj,ijk,tk->ist", basis.psi, chi, basis.phi, optimize=True)
    return MultiwayDataset(X, basis.grid, basis.grid)


# -- scenarios --------------------------------------------------------------

PK_RULES = ("FVE", (2, 2), (3, 3), (4, 4))


def _parse_rule(rule):
    if rule in ("FVE", "fve"):
        return "FVE"
    if isinstance(rule, str):
        rule = tuple(int(x) for x in rule.strip("()").split(","))
    return tuple(int(x) for x in rule)


def rule_label(rule):
    return "FVE" if rule == "FVE" else f"({rule[0]},{rule[1]})"


@dataclass(frozen=True)
class SimulationScenario:
    """One cell row of a rejection table.

    ``offdiag`` is ``"H0"``, ``"max"``/``"half"`` (single pair at its largest
    admissible value or half of it), ``"triple"`` (three pairs at their
    joint largest values) or a number (single pair at that covariance).
    """

    variant: str = "V1"
    distribution: str = "normal"
    n: int = 100
    offdiag: object = "H0"
    trials: int = 200
    seed: int = 20240101
    method: str = "chi2"
    pk_rules: tuple = ("FVE",)
    B: int = 1000
    alpha: float = 0.05

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("n must be at least 3")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.method not in ("chi2", "bootstrap"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.distribution not in ("normal", "t"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        object.__setattr__(self, "pk_rules", tuple(_parse_rule(r) for r in self.pk_rules))

    def sigma_spec(self):
        V = build_V(self.variant)
        od = self.offdiag
        if od == "H0":
            return "H0"
        if od == "max":
            return ("single", max_pd_cov(V))
        if od == "half":
            return ("single", max_pd_cov(V) / 2)
        if od == "triple":
            return ("triple", max_pd_cov(V, PAIRS_TRIPLE))
        return ("single", float(od))

    @property
    def label(self):
        od = self.offdiag
        od = f"cov={od}" if isinstance(od, (int, float)) else od
        return f"{self.variant}/{self.distribution}/n={self.n}/{od}/{self.method}"

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "pk_rules" in d:
            d["pk_rules"] = tuple(d["pk_rules"])
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["pk_rules"] = [rule_label(r) for r in self.pk_rules]
        return d


def simulate_dataset(V, spec, dist, n, rng, basis=None):
    basis = sim_basis() if basis is None else basis
    Sigma = assemble_sigma(V, spec)
    return synthesize_surfaces(sample_scores(Sigma, dist, n, rng), basis)


def _trial(scenario, V, spec, basis, trial):
    rng = substream(scenario.seed, trial)
    data = simulate_dataset(V, spec, scenario.distribution, scenario.n, rng, basis)
    boot_seed = int(rng.integers(2 ** 62))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = fit_marginals(data)
    pvals = []
    for rule in scenario.pk_rules:
        P, K = select_PK(fit.eig, fit.scores) if rule == "FVE" else rule
        if scenario.method == "chi2":
            res, _, _ = statistics_from_fit(fit, P, K)
            p = res.p_value
        else:
            tn = tn_vector(fit.scores, P, K)
            p, _ = bootstrap_pvalue(data, fit, tn, BootstrapConfig(scenario.B, boot_seed))
        pvals.append((p, (P, K)))
    return pvals


@dataclass
class RejectionTable:
    """Rejection rates; ``rows`` holds one dict per scenario."""

    rows: list = field(default_factory=list)
    generator: str = GENERATOR_NAME

    COLUMNS = ("FVE", "(2,2)", "(3,3)", "(4,4)")

    def rate(self, label=None, rule="FVE"):
        row = self.rows[0] if label is None else next(r for r in self.rows if r["scenario"] == label)
        return row["rates"][rule_label(_parse_rule(rule))]

    def to_csv(self):
        buf = io.StringIO()
        extra = sorted({c for r in self.rows for c in r["rates"]} - set(self.COLUMNS))
        cols = list(self.COLUMNS) + extra
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", *cols, "trials", "seed", "generator"])
        for r in self.rows:
            w.writerow([r["scenario"], *[("%.3f" % r["rates"][c]) if c in r["rates"] else ""
                                          for c in cols],
                        r["trials"], r["seed"], self.generator])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        reader = csv.DictReader(io.StringIO(text))
        rows, gen = [], GENERATOR_NAME
        for rec in reader:
            gen = rec.pop("generator")
            label, trials, seed = rec.pop("scenario"), int(rec.pop("trials")), int(rec.pop("seed"))
            rates = {k: float(v) for k, v in rec.items() if v != ""}
            rows.append({"scenario": label, "rates": rates, "trials": trials, "seed": seed})
        return cls(rows, gen)


def run_scenario(scenario, n_jobs=1, return_details=False):
    """Simulate ``scenario.trials`` datasets and tabulate rejections at ``alpha``.

    Each trial draws from its own substream ``(seed, trial)``, so results do
    not depend on ``n_jobs``.
    """
    V = build_V(scenario.variant)
    spec = scenario.sigma_spec()
    basis = sim_basis()

    def go(trial):
        try:
            return _trial(scenario, V, spec, basis, trial)
        except Exception as exc:
            raise RuntimeError(f"{scenario.label}: trial {trial} failed: {exc}") from exc

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(go, range(scenario.trials)))
    else:
        results = [go(t) for t in range(scenario.trials)]
    rates = {}
    for r, rule in enumerate(scenario.pk_rules):
        rejected = sum(res[r][0] < scenario.alpha for res in results)
        rates[rule_label(rule)] = rejected / scenario.trials
    table = RejectionTable([{"scenario": scenario.label, "rates": rates,
                             "trials": scenario.trials, "seed": scenario.seed}])
    if return_details:
        return table, results
    return table
