"""Wavelet-based estimation and inference for conditional optimal transport between treatment arms."""

__version__ = "0.1.0"

from .errors import ArgumentError, ConfigurationError, CotwaveError, DataError, DegenerateDataError
from .wavelet import FilterBank, WaveletBasis, build_filter, cascade_evaluate
from .density import ConditionalModel, DensityEstimate, EstimatorConfig, build_conditional_model, fit_density
from .ot import CostSpec, empirical_w2sq, gelbrich_w2sq, solve_assignment, sorted_w2sq_1d
from .cot import CotConfig, CotEstimate, GroupSample, auto_sample_sizes, estimate_cot, estimate_cw_between_models
from .infer import BootstrapConfig, ConfidenceInterval, bootstrap_ci, normal_quantile
from .simbench import GaussianCondModel, builtin_scenario, generate, true_cw2

__all__ = [
    "ArgumentError",
    "BootstrapConfig",
    "ConditionalModel",
    "ConfidenceInterval",
    "ConfigurationError",
    "CostSpec",
    "CotConfig",
    "CotEstimate",
    "CotwaveError",
    "DataError",
    "DegenerateDataError",
    "DensityEstimate",
    "EstimatorConfig",
    "FilterBank",
    "GaussianCondModel",
    "GroupSample",
    "WaveletBasis",
    "auto_sample_sizes",
    "bootstrap_ci",
    "build_conditional_model",
    "build_filter",
    "builtin_scenario",
    "cascade_evaluate",
    "empirical_w2sq",
    "estimate_cot",
    "estimate_cw_between_models",
    "fit_density",
    "gelbrich_w2sq",
    "generate",
    "normal_quantile",
    "solve_assignment",
    "sorted_w2sq_1d",
    "true_cw2",
]
