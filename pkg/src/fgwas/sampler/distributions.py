"""Random variate generators used by the Gibbs updates."""
from __future__ import annotations

import numpy as np


def inverse_gaussian(mean, shape, rng: np.random.Generator, size=None):
    """Inverse-Gaussian draws via the transform-rejection method of
    Michael, Schucany and Haas (1976).

    The root ``mean * (1 + w - sqrt(w**2 + 2w))`` is evaluated in the
    cancellation-free form ``mean / (1 + w + sqrt(w**2 + 2w))``.
    """
    mean = np.asarray(mean, dtype=float)
    shape = np.asarray(shape, dtype=float)
    if np.any(mean <= 0) or np.any(shape <= 0):
        raise ValueError("inverse-Gaussian mean and shape must be positive")
    if size is None:
        size = np.broadcast(mean, shape).shape
    nu = rng.standard_normal(size)
    u = rng.random(size)
    return ig_transform(mean, shape, nu, u)


def ig_transform(mean, shape, nu, u):
    """Map a standard normal ``nu`` and uniform ``u`` to an inverse-Gaussian variate."""
    w = mean * nu * nu / (2.0 * shape)
    x = mean / (1.0 + w + np.sqrt(w * w + 2.0 * w))
    out = np.where(u <= mean / (mean + x), x, mean * mean / x)
    return out if np.ndim(out) else float(out)


def gamma_rate(shape, rate, rng: np.random.Generator, size=None):
    """Gamma variate parameterized by shape and rate."""
    return rng.gamma(shape, 1.0 / np.asarray(rate, dtype=float), size)


def scaled_inv_chi2(df, scale, rng: np.random.Generator, size=None):
    """Scaled inverse chi-square: ``df * scale / chi2_df``."""
    if np.any(np.asarray(df) <= 0) or np.any(np.asarray(scale) <= 0):
        raise ValueError("df and scale must be positive")
    return df * scale / rng.chisquare(df, size)
