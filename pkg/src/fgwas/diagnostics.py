"""Multi-chain convergence diagnostics and posterior interval summaries."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DegenerateChainError(ValueError):
    """Within-chain variance is zero, so the PSRF is undefined."""


@dataclass(frozen=True)
class PsrfEntry:
    psrf: float
    within_var: float
    marginal_var: float


@dataclass
class PsrfReport:
    entries: dict[str, PsrfEntry] = field(default_factory=dict)
    threshold: float = 1.1

    @property
    def converged(self) -> bool:
        return bool(self.entries) and all(e.psrf < self.threshold for e in self.entries.values())

    @property
    def max_psrf(self) -> float:
        return max((e.psrf for e in self.entries.values()), default=float("nan"))

    def failing(self) -> list[str]:
        return [k for k, e in self.entries.items() if not e.psrf < self.threshold]


def psrf(chains, extractor=None) -> PsrfEntry:
    """Potential scale reduction factor of one scalar.

    ``chains`` is a (n_chains, length) array of draws, or a ChainSet together
    with ``extractor`` mapping one chain to its 1-D trace. The squared PSRF is
    ``V / W`` with ``W`` the mean within-chain variance and
    ``V = (L - 1) / L * W + B / L``, ``B / L`` being the variance of the chain
    means.
    """
    if extractor is not None:
        draws = np.array([np.asarray(extractor(ch), dtype=float) for ch in chains.chains])
    else:
        draws = np.asarray(chains, dtype=float)
    if draws.ndim != 2 or draws.shape[0] < 2:
        raise ValueError("PSRF needs at least two chains")
    n_chains, L = draws.shape
    if L < 10:
        raise ValueError("PSRF needs at least 10 draws per chain")
    W = float(np.mean(np.var(draws, axis=1, ddof=1)))
    between = float(np.var(np.mean(draws, axis=1), ddof=1))
    if not W > 0.0:
        raise DegenerateChainError("zero within-chain variance")
    V = (L - 1) / L * W + between
    return PsrfEntry(psrf=float(np.sqrt(V / W)), within_var=W, marginal_var=V)


def psrf_or_inf(draws) -> PsrfEntry:
    """Like :func:`psrf` but reports degenerate chains as non-converged."""
    try:
        return psrf(draws)
    except DegenerateChainError:
        return PsrfEntry(psrf=float("inf"), within_var=0.0, marginal_var=float("nan"))


def credible_interval(draws, level: float = 0.95, axis=0) -> tuple:
    """Equal-tailed interval from empirical quantiles (inclusive linear rule)."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    draws = np.asarray(draws, dtype=float)
    if draws.shape[axis] < 100:
        raise ValueError(f"need at least 100 draws for a credible interval, got {draws.shape[axis]}")
    lo, hi = np.quantile(draws, [(1.0 - level) / 2.0, (1.0 + level) / 2.0], axis=axis, method="linear")
    if np.ndim(lo) == 0:
        return float(lo), float(hi)
    return lo, hi
