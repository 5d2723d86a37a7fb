"""Blocked Gibbs sampler for the penalized varying-coefficient model."""
from .chains import ChainDraws, ChainSet, SamplerConfig, run_chains
from .conditionals import (
    NonSPDError,
    draw_additive_block,
    draw_covariate_block,
    draw_dominant_block,
    draw_group_scale,
    draw_mean_block,
    draw_rho,
    draw_shrinkage,
    draw_sigma2,
)
from .distributions import inverse_gaussian, scaled_inv_chi2
from .engine import GibbsChain, PackedData, initial_state

__all__ = [
    "ChainDraws", "ChainSet", "SamplerConfig", "run_chains", "NonSPDError",
    "draw_mean_block", "draw_covariate_block", "draw_additive_block", "draw_dominant_block",
    "draw_group_scale", "draw_shrinkage", "draw_sigma2", "draw_rho",
    "inverse_gaussian", "scaled_inv_chi2", "GibbsChain", "PackedData", "initial_state",
]
