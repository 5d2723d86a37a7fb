"""Full conditional distributions, evaluated directly from the model definition.

These functions recompute every sum over subjects from scratch, so they are
slow but transparent. The chain engine uses cached sufficient statistics
instead; tests check the two routes against each other.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_triangular

from ..covariance import gamma_inv_apply, gamma_logdet, gamma_quadratic
from ..model import (
    Hyperparameters,
    LongitudinalDataset,
    ParameterState,
    mean_vector,
    partial_residual,
)
from .distributions import gamma_rate, ig_transform

IG_MEAN_CEILING = 1e12
NORM_FLOOR = 1e-300
SS_FLOOR = 1e-12
TAU2_CEILING = 1e100


class NonSPDError(np.linalg.LinAlgError):
    """Posterior precision stayed non-positive-definite after jitter retries."""


def cholesky_with_jitter(P: np.ndarray, retries: int = 3) -> np.ndarray:
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        pass
    scale = max(np.trace(P) / P.shape[0], 1e-300)
    jitter = 1e-10 * scale
    for _ in range(retries):
        try:
            return np.linalg.cholesky(P + jitter * np.eye(P.shape[0]))
        except np.linalg.LinAlgError:
            jitter *= 100.0
    raise NonSPDError("posterior precision is not positive definite")


def mvn_from_precision(P: np.ndarray, lin: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Return ``P^{-1} lin + L^{-T} z`` where ``P = L L'``; with standard normal
    ``z`` this is a draw from ``MVN(P^{-1} lin, P^{-1})``."""
    L = cholesky_with_jitter(P)
    w = solve_triangular(L, lin, lower=True)
    return solve_triangular(L.T, w + z, lower=False)


def _block_likelihood_terms(state, dataset, block, weights):
    v = dataset.v
    P = np.zeros((v, v))
    lin = np.zeros(v)
    for i, s in enumerate(dataset.subjects):
        w = weights[i]
        if w == 0.0:
            continue
        D = w * dataset.designs[i]
        GiD = gamma_inv_apply(state.rho, s.grid, D) / state.sigma2
        P += D.T @ GiD
        lin += GiD.T @ partial_residual(state, dataset, i, block)
    return P, lin


def _gaussian(P, lin):
    cov = np.linalg.inv(P)
    cov = 0.5 * (cov + cov.T)
    return cov @ lin, cov


def mean_block_posterior(state, dataset, hyper: Hyperparameters):
    """(mean, covariance) of m given everything else."""
    P, lin = _block_likelihood_terms(state, dataset, "m", np.ones(dataset.n))
    P += np.linalg.inv(hyper.Sigma_m0)
    return _gaussian(P, lin)


def covariate_block_posterior(state, dataset, hyper: Hyperparameters, k: int):
    P, lin = _block_likelihood_terms(state, dataset, ("r", k), dataset.X[:, k])
    P += np.linalg.inv(hyper.Sigma_r0)
    return _gaussian(P, lin)


def group_block_posterior(state, dataset, j: int, which: str = "additive", prior_var=None):
    """Conditional of b_j (``additive``) or c_j (``dominant``).

    The prior is ``MVN(0, sigma2 * tau2_j I)``; passing ``prior_var`` replaces
    it with the fixed ``MVN(0, prior_var I)`` used when refitting.
    """
    if which == "additive":
        weights, tau2, block = dataset.genotypes.additive[:, j], state.tau2[j], ("b", j)
    elif which == "dominant":
        weights, tau2, block = dataset.genotypes.dominant[:, j], state.tau2_star[j], ("c", j)
    else:
        raise ValueError(f"which must be 'additive' or 'dominant', got {which!r}")
    P, lin = _block_likelihood_terms(state, dataset, block, weights)
    prior_prec = 1.0 / prior_var if prior_var is not None else 1.0 / (state.sigma2 * tau2)
    P += prior_prec * np.eye(dataset.v)
    return _gaussian(P, lin)


def _draw(mean, cov, rng):
    L = np.linalg.cholesky(np.linalg.inv(cov))
    return mean + solve_triangular(L.T, rng.standard_normal(mean.shape[0]), lower=False)


def draw_mean_block(state, dataset, hyper, rng) -> np.ndarray:
    return _draw(*mean_block_posterior(state, dataset, hyper), rng)


def draw_covariate_block(state, dataset, hyper, rng, k: int) -> np.ndarray:
    return _draw(*covariate_block_posterior(state, dataset, hyper, k), rng)


def draw_additive_block(state, dataset, rng, j: int, prior_var=None) -> np.ndarray:
    return _draw(*group_block_posterior(state, dataset, j, "additive", prior_var), rng)


def draw_dominant_block(state, dataset, rng, j: int, prior_var=None) -> np.ndarray:
    return _draw(*group_block_posterior(state, dataset, j, "dominant", prior_var), rng)


def group_scale_parameters(state: ParameterState, j: int, which: str = "additive"):
    """Mean and shape of the inverse-Gaussian conditional of 1/tau_j^2."""
    if which == "additive":
        coef, lam2 = state.b[j], state.lambda2
    elif which == "dominant":
        coef, lam2 = state.c[j], state.lambda2_star
    else:
        raise ValueError(f"which must be 'additive' or 'dominant', got {which!r}")
    v = coef.shape[0]
    norm2 = float(coef @ coef)
    shape = v * lam2
    if norm2 < NORM_FLOOR:
        return IG_MEAN_CEILING, shape
    return min(math.sqrt(shape * state.sigma2 / norm2), IG_MEAN_CEILING), shape


def draw_group_scale(state, rng, j: int, which: str = "additive") -> float:
    """Return a new tau_j^2 (or tau_j*^2) as the reciprocal of an inverse-Gaussian draw."""
    mean, shape = group_scale_parameters(state, j, which)
    return scale_from_variate(ig_transform(mean, shape, rng.standard_normal(), rng.random()))


def scale_from_variate(x: float) -> float:
    """Reciprocal of an inverse-Gaussian draw, capped at TAU2_CEILING."""
    if not x * TAU2_CEILING > 1.0:
        return TAU2_CEILING
    return 1.0 / x


def shrinkage_parameters(state: ParameterState, hyper: Hyperparameters, which: str = "additive"):
    """(shape, rate) of the Gamma conditional of lambda^2 or lambda*^2."""
    if which == "additive":
        a, b, tau2 = hyper.a, hyper.b, state.tau2
    elif which == "dominant":
        a, b, tau2 = hyper.a_star, hyper.b_star, state.tau2_star
    else:
        raise ValueError(f"which must be 'additive' or 'dominant', got {which!r}")
    p, v = state.b.shape
    return a + p * (v + 1) / 2.0, b + v * float(np.sum(tau2)) / 2.0


def draw_shrinkage(state, hyper, rng, which: str = "additive") -> float:
    shape, rate = shrinkage_parameters(state, hyper, which)
    return float(gamma_rate(shape, rate, rng))


def residual_quadratic(state, dataset) -> float:
    """sum_i (y_i - mu_i)' Gamma_i^{-1} (y_i - mu_i)."""
    total = 0.0
    for i, s in enumerate(dataset.subjects):
        e = s.y - mean_vector(state, dataset, i)
        total += gamma_quadratic(state.rho, s.grid, e, e)
    return total


def sigma2_parameters(state, dataset, hyper: Hyperparameters | None = None, penalized: bool = True):
    """(df, scale) of the scaled-inverse-chi-square conditional of sigma2.

    With ``penalized`` the group coefficients, whose prior variance is
    proportional to sigma2, add ``v`` degrees of freedom per group and their
    scaled squared norms to the sum of squares.
    """
    nu0 = hyper.sigma2_df if hyper is not None else 0.0
    s0 = hyper.sigma2_scale if hyper is not None else 1.0
    df = nu0 + dataset.n_obs
    ss = nu0 * s0 + residual_quadratic(state, dataset)
    if penalized:
        p, v = state.b.shape
        df += 2 * p * v
        ss += float(np.sum(state.b**2, axis=1) @ (1.0 / state.tau2))
        ss += float(np.sum(state.c**2, axis=1) @ (1.0 / state.tau2_star))
    ss = max(ss, SS_FLOOR)
    return df, ss / df


def draw_sigma2(state, dataset, rng, hyper=None, penalized: bool = True) -> float:
    df, scale = sigma2_parameters(state, dataset, hyper, penalized)
    return float(df * scale / rng.chisquare(df))


def rho_log_target(rho: float, state, dataset) -> float:
    """log pi(rho | .) up to a constant: -1/2 sum log|Gamma_i| - SS / (2 sigma2)."""
    total = 0.0
    for i, s in enumerate(dataset.subjects):
        e = s.y - mean_vector(state, dataset, i)
        total -= 0.5 * gamma_logdet(rho, s.grid)
        total -= 0.5 * gamma_quadratic(rho, s.grid, e, e) / state.sigma2
    return total


def reflect_unit(x: float) -> float:
    """Reflect a proposal back into (0, 1); valid for excursions shorter than 1."""
    if x < 0.0:
        x = -x
    elif x > 1.0:
        x = 2.0 - x
    return x


def draw_rho(state, dataset, rng, step: float) -> tuple[float, bool]:
    """Random-walk Metropolis-Hastings update of rho with reflection."""
    if not 0.0 < state.rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {state.rho}")
    proposal = reflect_unit(state.rho + rng.uniform(-step, step))
    if not 0.0 < proposal < 1.0:
        return state.rho, False
    if proposal == state.rho:
        return state.rho, True
    log_ratio = rho_log_target(proposal, state, dataset) - rho_log_target(state.rho, state, dataset)
    if math.log(rng.random()) < log_ratio:
        return proposal, True
    return state.rho, False
