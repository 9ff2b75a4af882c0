"""Equations of state for l1-regularized linear and logistic neighborhood selection."""

from .core import (
    ActiveTrialSet,
    EosDivergence,
    EosProblem,
    EosSolution,
    GammaNonConvergence,
    OrderParams,
    SpectralMoments,
    eos_rhs,
    gamma_fixed_point,
    neighborhood_expectation,
    pattern_table,
    scaled_residuals,
    soft,
)
from .linr import linr_jbar, solve_linr_asymptotic, solve_linr_finite
from .logr import YhatNonConvergence, logr_active_mean, solve_logr, yhat
from .metrics import expected_precision, predict_metrics, sample_inactive

__all__ = [
    "ActiveTrialSet",
    "EosDivergence",
    "EosProblem",
    "EosSolution",
    "GammaNonConvergence",
    "OrderParams",
    "SpectralMoments",
    "YhatNonConvergence",
    "eos_rhs",
    "expected_precision",
    "gamma_fixed_point",
    "linr_jbar",
    "logr_active_mean",
    "neighborhood_expectation",
    "pattern_table",
    "predict_metrics",
    "sample_inactive",
    "scaled_residuals",
    "soft",
    "solve",
    "solve_linr_asymptotic",
    "solve_linr_finite",
    "solve_logr",
    "yhat",
]


def solve(prob: EosProblem, finite_size: bool = True) -> EosSolution:
    """Dispatch on ``prob.loss`` and mode."""
    if prob.loss == "quadratic":
        return solve_linr_finite(prob) if finite_size else solve_linr_asymptotic(prob)
    return solve_logr(prob, finite_size=finite_size)
