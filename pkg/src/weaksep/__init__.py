"""Weak separability testing and product FPCA for two-way functional data."""
from .datagrid import (CenteredDataset, DataFormatError, GridAxis, MultiwayDataset, center,
                       devectorize_spatial, load_dataset, save_dataset, uniform_axis,
                       vectorize_spatial)
from .fpca import (EigengapWarning, FveReport, MarginalEigenSystem, ScoreArray,
                   eigendecompose_marginals, fit_marginals, fve, marginal_covariances,
                   marginal_scores, select_PK)
from .mixture import chi2_mixture_pvalue, regularized_gamma_q, welch_satterthwaite
from .separability import (EigengapError, TestResult, TnVector, run_test, sn_statistic,
                           term_decomposition, theta_influence, theta_ninecase, tn_vector)
from .bootstrap import BootstrapConfig, align_sign, bootstrap_pvalue
from .plv import compute_plv

__version__ = "0.1.0"
