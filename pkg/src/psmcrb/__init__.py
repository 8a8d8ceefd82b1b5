"""Estimation after model selection under misspecification.

Penalized post-selection estimators, pseudo-true parameters, and
post-selection misspecified Cramer-Rao bounds for a Gaussian linear model
with GLRT channel detection, plus a seeded Monte-Carlo benchmark harness
and CLI.
"""

from .bounds import (
    BoundReport,
    ConventionalMcrb,
    InfoMatrices,
    InterpretationBound,
    build_bound_report,
    conventional_mcrb,
    hessian_fim,
    mcrb_k,
    oracle_crb,
    oracle_crb_phi,
    outer_fim,
    ps_mcrb_total,
    selection_logprob_derivs,
)
from .chi2 import (
    ChiSqParams,
    chi2_cdf_central,
    chi2_cdf_d2lambda,
    chi2_cdf_dlambda,
    chi2_cdf_noncentral,
    chi2_survival_noncentral,
    reg_lower_gamma,
    reg_upper_gamma,
)
from .estimators import (
    Estimate,
    Interpretation,
    ShrinkageProblem,
    msl,
    msnl,
    oracle_ml,
    psml,
    shrinkage_coefficient,
    solve_shrinkage,
)
from .linmodel import (
    ExperimentConfig,
    ModelGeometry,
    assumed_selection_prob,
    build_geometry,
    generate_standard_gaussian_setup,
    glrt_select,
    glrt_statistic,
    noncentrality,
    sample_observation,
    true_selection_probs,
)
from .moments import cond_cov, cond_mean, conditional_moments, mc_cond_moments
from .montecarlo import SweepRow, TrialRecord, aggregate, empirical_psms_bias, run_trial, sweep
from .pseudotrue import mc_objective, pseudo_true, pt_naive, pt_normalized, pt_selective

__version__ = "0.1.0"

__all__ = [
    "BoundReport", "ChiSqParams", "ConventionalMcrb", "Estimate", "ExperimentConfig",
    "InfoMatrices", "Interpretation", "InterpretationBound", "ModelGeometry",
    "ShrinkageProblem", "SweepRow", "TrialRecord", "aggregate",
    "assumed_selection_prob", "build_bound_report", "build_geometry",
    "chi2_cdf_central", "chi2_cdf_d2lambda", "chi2_cdf_dlambda",
    "chi2_cdf_noncentral", "chi2_survival_noncentral", "cond_cov", "cond_mean",
    "conditional_moments", "conventional_mcrb", "empirical_psms_bias",
    "generate_standard_gaussian_setup", "glrt_select", "glrt_statistic",
    "hessian_fim", "mc_cond_moments", "mc_objective", "mcrb_k", "msl", "msnl",
    "noncentrality", "oracle_crb", "oracle_crb_phi", "oracle_ml", "outer_fim",
    "ps_mcrb_total", "pseudo_true", "psml", "pt_naive", "pt_normalized",
    "pt_selective", "reg_lower_gamma", "reg_upper_gamma", "run_trial",
    "sample_observation", "selection_logprob_derivs", "shrinkage_coefficient",
    "solve_shrinkage", "sweep", "true_selection_probs",
]
