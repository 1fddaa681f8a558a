"""
Endemic-epidemic (NegBin INGARCH(1,1)) models for underreported and
temporally aggregated counts, fitted by marginal moment matching.
"""

__version__ = "0.1.0"

from .equivalence import (EquivalenceTarget, Provenance, Reproduction, effective_reproduction, forward_map,
                          invert_aggregated, invert_moments, match_timevarying, predict_naive_bias)
from .estimation import (FitConfig, FitResult, debias_params, fit, fit_debias, fit_forward, numerical_hessian,
                         sample_reff_ci, wald_ci)
from .exceptions import ConvergenceError, DataError, DomainError, NoRealMatch
from .likelihood import (LikelihoodConfig, approx_loglik, approx_loglik_timevarying, conditional_loglik,
                         equivalent_means, equivalent_process, forward_loglik)
from .model import (CountSeries, ModelParams, ObservationSpec, TimeVaryingParams, inflate_counts, negbin_logpmf,
                    seasonal_path, simulate_latent, thin_series)
from .moments import (MomentPath, MomentSummary, aggregate_moments, empirical_moments, observed_moments,
                      stationary_moments, thin_moments, timevarying_moment_path)

__all__ = [
    "ConvergenceError", "CountSeries", "DataError", "DomainError", "EquivalenceTarget", "FitConfig", "FitResult",
    "LikelihoodConfig", "ModelParams", "MomentPath", "MomentSummary", "NoRealMatch", "ObservationSpec",
    "Provenance", "Reproduction", "TimeVaryingParams", "aggregate_moments", "approx_loglik",
    "approx_loglik_timevarying", "conditional_loglik", "debias_params", "effective_reproduction",
    "empirical_moments", "equivalent_means", "equivalent_process", "fit", "fit_debias", "fit_forward",
    "forward_loglik", "forward_map", "inflate_counts", "invert_aggregated", "invert_moments",
    "match_timevarying", "negbin_logpmf", "numerical_hessian", "observed_moments", "predict_naive_bias",
    "sample_reff_ci", "seasonal_path", "simulate_latent", "stationary_moments", "thin_moments", "thin_series",
    "timevarying_moment_path", "wald_ci",
]
