"""Bayesian group-lasso GWAS for longitudinal traits with varying SNP effects."""
from .basis import TimeGrid, legendre_design, legendre_values, standardize_times
from .covariance import Ar1Kernel, gamma_inv_apply, gamma_logdet, gamma_quadratic
from .model import (
    GenotypeMatrix,
    Hyperparameters,
    LongitudinalDataset,
    ParameterState,
    encode_genotypes,
    log_likelihood,
)
from .sampler import ChainSet, SamplerConfig, run_chains

__version__ = "0.1.0"

__all__ = [
    "TimeGrid", "legendre_design", "legendre_values", "standardize_times",
    "Ar1Kernel", "gamma_inv_apply", "gamma_logdet", "gamma_quadratic",
    "GenotypeMatrix", "Hyperparameters", "LongitudinalDataset", "ParameterState",
    "encode_genotypes", "log_likelihood", "ChainSet", "SamplerConfig", "run_chains",
]
