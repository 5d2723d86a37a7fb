"""AR(1) correlation over irregular time grids.

The correlation between measurements at standardized times ``t`` and ``t'``
is ``rho ** |t - t'|``. Because the process is Markov, the precision matrix
is tridiagonal, so quadratic forms, log-determinants and solves cost O(T).
With ``phi_l = rho ** d_l`` for the gap ``d_l`` between measurements ``l``
and ``l + 1``::

    x' Gamma^{-1} y = x_1 y_1 + sum_l (x_{l+1} - phi_l x_l)(y_{l+1} - phi_l y_l) / (1 - phi_l^2)
    log |Gamma|     = sum_l log(1 - phi_l^2)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import TimeGrid


class CorrelationDomainError(ValueError):
    """rho outside the supported open interval."""


class EmptyGridError(ValueError):
    pass


@dataclass(frozen=True)
class Ar1Kernel:
    rho: float
    sigma2: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.rho) or abs(self.rho) >= 1.0:
            raise CorrelationDomainError(f"|rho| must be < 1, got {self.rho!r}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2!r}")


def _gaps(grid) -> np.ndarray:
    if isinstance(grid, TimeGrid):
        t = grid.standardized_times
    else:
        t = np.asarray(grid, dtype=float).reshape(-1)
    if t.shape[0] == 0:
        raise EmptyGridError("time grid has no measurements")
    return np.diff(t)


def _check_rho(rho: float, gaps: np.ndarray) -> float:
    rho = float(rho)
    if not np.isfinite(rho) or abs(rho) >= 1.0:
        raise CorrelationDomainError(f"|rho| must be < 1, got {rho!r}")
    if rho < 0 and np.any(gaps != np.round(gaps)):
        raise CorrelationDomainError(
            "negative rho is only defined on integer-spaced grids"
        )
    return rho


def lag_correlations(rho: float, gaps: np.ndarray) -> np.ndarray:
    """``rho ** gap`` for each consecutive gap (``0 ** 0`` taken as 1)."""
    gaps = np.asarray(gaps, dtype=float)
    if rho == 0.0:
        return np.where(gaps == 0.0, 1.0, 0.0)
    if rho < 0:
        return np.sign(rho) ** np.round(gaps) * abs(rho) ** gaps
    return rho**gaps


def innovation_variances(rho: float, gaps: np.ndarray, phi: np.ndarray | None = None) -> np.ndarray:
    """``1 - rho ** (2 gap)``, via expm1 so short gaps keep full precision."""
    gaps = np.asarray(gaps, dtype=float)
    if rho > 0.0:
        return -np.expm1(2.0 * gaps * np.log(rho))
    if phi is None:
        phi = lag_correlations(rho, gaps)
    return 1.0 - phi**2


def _rho_of(kernel) -> float:
    return kernel.rho if isinstance(kernel, Ar1Kernel) else float(kernel)


def correlation_matrix(kernel, grid) -> np.ndarray:
    """Dense Gamma with entries ``rho ** |t_j - t_k|``; reference use only."""
    rho = _rho_of(kernel)
    t = grid.standardized_times if isinstance(grid, TimeGrid) else np.asarray(grid, float)
    _check_rho(rho, np.diff(t))
    d = np.abs(t[:, None] - t[None, :])
    if rho == 0.0:
        return np.eye(len(t))
    if rho < 0:
        return np.sign(rho) ** np.round(d) * abs(rho) ** d
    return rho**d


def whiten(kernel, grid, x) -> np.ndarray:
    """Return ``W x`` with ``W' W = Gamma^{-1}``; ``x`` may be a vector or T x k."""
    gaps = _gaps(grid)
    rho = _check_rho(_rho_of(kernel), gaps)
    x = np.asarray(x, dtype=float)
    if x.shape[0] != gaps.shape[0] + 1:
        raise ValueError(f"expected {gaps.shape[0] + 1} rows, got {x.shape[0]}")
    phi = lag_correlations(rho, gaps)
    scale = 1.0 / np.sqrt(innovation_variances(rho, gaps, phi))
    out = np.empty_like(x)
    out[0] = x[0]
    if x.ndim == 1:
        out[1:] = (x[1:] - phi * x[:-1]) * scale
    else:
        out[1:] = (x[1:] - phi[:, None] * x[:-1]) * scale[:, None]
    return out


def gamma_quadratic(kernel, grid, x, y) -> float:
    """``x' Gamma^{-1} y`` in O(T)."""
    wx = whiten(kernel, grid, np.asarray(x, dtype=float).reshape(-1))
    wy = whiten(kernel, grid, np.asarray(y, dtype=float).reshape(-1))
    return float(wx @ wy)


def gamma_logdet(kernel, grid) -> float:
    gaps = _gaps(grid)
    rho = _check_rho(_rho_of(kernel), gaps)
    return float(np.sum(np.log(innovation_variances(rho, gaps))))


def gamma_inv_apply(kernel, grid, M) -> np.ndarray:
    """``Gamma^{-1} M`` using the tridiagonal precision.

    Accepts a length-T vector or a T x k matrix and returns the same shape.
    """
    gaps = _gaps(grid)
    rho = _check_rho(_rho_of(kernel), gaps)
    M = np.asarray(M, dtype=float)
    T = gaps.shape[0] + 1
    if M.shape[0] != T:
        raise ValueError(f"dimension mismatch: grid has {T} points, M has {M.shape[0]} rows")
    vec = M.ndim == 1
    if vec:
        M = M[:, None]
    phi = lag_correlations(rho, gaps)
    inv = 1.0 / innovation_variances(rho, gaps, phi)
    diag = np.ones(T)
    diag[:-1] += phi**2 * inv
    diag[1:] += phi**2 * inv
    off = -phi * inv
    out = diag[:, None] * M
    out[:-1] += off[:, None] * M[1:]
    out[1:] += off[:, None] * M[:-1]
    return out[:, 0] if vec else out


def simulate_ar1(rho: float, sigma2: float, grid, rng: np.random.Generator) -> np.ndarray:
    """Draw one zero-mean AR(1) noise vector on ``grid`` (Markov construction)."""
    gaps = _gaps(grid)
    rho = _check_rho(rho, gaps)
    phi = lag_correlations(rho, gaps)
    z = rng.standard_normal(gaps.shape[0] + 1)
    e = np.empty_like(z)
    e[0] = z[0]
    innov = np.sqrt(innovation_variances(rho, gaps, phi)) * z[1:]
    for l in range(gaps.shape[0]):
        e[l + 1] = phi[l] * e[l] + innov[l]
    return np.sqrt(sigma2) * e
