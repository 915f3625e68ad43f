"""Physics-informed Gaussian process inference for Kirchhoff-Love plates."""

from .inference import (
    HyperPrior,
    McmcConfig,
    McmcTrace,
    MleResult,
    chain_diagnostics,
    mcmc_mean,
    metropolis_hastings,
    mh_sample,
    mle_optimize,
)
from .kernel import DerivativeOrder, KernelParams, base_kernel, gaussian_derivative_1d, mixed_partial
from .model import (
    Dataset,
    ExtendedHyperparams,
    NoiseClass,
    Observation,
    assemble_covariance,
    assemble_noise,
    lml_gradient,
    log_marginal_likelihood,
)
from .operators import PlateConstants, QuantityKind, cross_covariance, operator_for
from .oracles import LoadKind, LoadSpec, PlateGeometry, navier_field, ritz_field, ritz_solve
from .prediction import PredictiveSummary, Targets, mc_predictive, predictive_posterior

__all__ = [
    "DerivativeOrder", "KernelParams", "base_kernel", "gaussian_derivative_1d", "mixed_partial",
    "PlateConstants", "QuantityKind", "cross_covariance", "operator_for",
    "Dataset", "ExtendedHyperparams", "NoiseClass", "Observation", "assemble_covariance", "assemble_noise",
    "lml_gradient", "log_marginal_likelihood",
    "HyperPrior", "McmcConfig", "McmcTrace", "MleResult", "chain_diagnostics", "mcmc_mean",
    "metropolis_hastings", "mh_sample", "mle_optimize",
    "PredictiveSummary", "Targets", "mc_predictive", "predictive_posterior",
    "LoadKind", "LoadSpec", "PlateGeometry", "navier_field", "ritz_field", "ritz_solve",
]
__version__ = "0.1.0"
