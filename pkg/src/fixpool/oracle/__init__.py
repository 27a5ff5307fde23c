"""Closed-form machinery for one-step meta linear regression."""

from .concentration import concentration_report, diagonal_variance_norm, fixed_support_study
from .risks import af_matrix, fixed_support_risk, onestep_adapt, true_risk
from .solutions import (
    af_variance_objective,
    descend,
    diagonal_moments,
    empirical_ml_objective,
    fixml_population_objective,
    gram_for_af,
    hessians,
    ml_population_objective,
    optimal_af,
    theta_hat_ml_empirical,
    theta_star_diag,
    theta_star_fml,
    theta_star_ml,
)

__all__ = [
    "af_matrix",
    "af_variance_objective",
    "concentration_report",
    "descend",
    "diagonal_moments",
    "diagonal_variance_norm",
    "empirical_ml_objective",
    "fixed_support_risk",
    "fixed_support_study",
    "fixml_population_objective",
    "gram_for_af",
    "hessians",
    "ml_population_objective",
    "onestep_adapt",
    "optimal_af",
    "theta_hat_ml_empirical",
    "theta_star_diag",
    "theta_star_fml",
    "theta_star_ml",
    "true_risk",
]
