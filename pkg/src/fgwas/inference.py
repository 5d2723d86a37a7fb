"""Post-processing of chains: selection, refit, degree choice and effect bands."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import legendre_values
from .diagnostics import DegenerateChainError, PsrfEntry, PsrfReport, credible_interval, psrf
from .model import Hyperparameters, LongitudinalDataset, ParameterState, log_likelihood
from .sampler.chains import ChainSet, SamplerConfig, run_chains

__all__ = [
    "DegenerateChainError", "PsrfEntry", "PsrfReport", "psrf", "credible_interval",
    "SelectionReport", "RefitSummary", "DegreeSweep", "EmptySelectionError",
    "select_snps", "refit", "bic", "bic_degree_sweep", "effect_band", "coefficient_band",
]

log = logging.getLogger(__name__)

REFIT_PRIOR_VAR = 1e8
CONDITION_WARN = 1e10
KINDS = ("additive", "dominant")


class EmptySelectionError(ValueError):
    """Refit was asked for with no selected SNP blocks."""


def _intervals(draws, level):
    lo, hi = credible_interval(draws, level, axis=0)
    return np.stack([lo, hi], axis=-1)


def _excludes_zero(iv):
    return np.any((iv[..., 0] > 0.0) | (iv[..., 1] < 0.0), axis=-1)


@dataclass
class SelectionReport:
    """Per-SNP selection flags with the coefficient intervals behind them.

    Intervals have shape (p, v, 2); a block is selected when any of its
    ``v`` intervals excludes zero.
    """

    snp_names: tuple[str, ...]
    level: float
    additive_intervals: np.ndarray
    dominant_intervals: np.ndarray
    additive_mean: np.ndarray
    dominant_mean: np.ndarray
    refit: "RefitSummary | None" = None

    @property
    def additive_selected(self) -> np.ndarray:
        return _excludes_zero(self.additive_intervals)

    @property
    def dominant_selected(self) -> np.ndarray:
        return _excludes_zero(self.dominant_intervals)

    @property
    def selected_set(self) -> list[str]:
        hit = self.additive_selected | self.dominant_selected
        return [self.snp_names[j] for j in np.flatnonzero(hit)]

    def selected_blocks(self) -> list[tuple[int, str]]:
        out = [(int(j), "additive") for j in np.flatnonzero(self.additive_selected)]
        out += [(int(j), "dominant") for j in np.flatnonzero(self.dominant_selected)]
        return sorted(out)


def select_snps(chains: ChainSet, level: float = 0.95) -> SelectionReport:
    """Flag every additive and dominant block whose interval for at least one
    Legendre coefficient does not cover zero."""
    if not chains.converged:
        log.warning("selecting from chains that did not converge")
    b = chains.pooled("b")
    c = chains.pooled("c")
    names = chains.snp_names or tuple(f"snp{j + 1}" for j in range(b.shape[1]))
    return SelectionReport(
        snp_names=tuple(names), level=level,
        additive_intervals=_intervals(b, level), dominant_intervals=_intervals(c, level),
        additive_mean=b.mean(axis=0), dominant_mean=c.mean(axis=0),
    )


@dataclass
class RefitSummary:
    """Unpenalized posterior of the selected submodel."""

    blocks: list[tuple[int, str]]
    level: float
    mean: ParameterState
    sd: dict[str, np.ndarray]
    intervals: dict[str, np.ndarray]
    chains: ChainSet
    condition_number: float
    warnings: list[str] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.chains.converged

    def coefficient(self, j: int, kind: str):
        """(mean, sd, intervals) of one refit block."""
        key = "b" if kind == "additive" else "c"
        return getattr(self.mean, key)[j], self.sd[key][j], self.intervals[key][j]


def _as_blocks(selection) -> list[tuple[int, str]]:
    if isinstance(selection, SelectionReport):
        return selection.selected_blocks()
    blocks = []
    for j, kind in selection:
        if kind not in KINDS:
            raise ValueError(f"block kind must be 'additive' or 'dominant', got {kind!r}")
        blocks.append((int(j), kind))
    return sorted(set(blocks))


def _refit_design_condition(dataset: LongitudinalDataset, blocks) -> float:
    U = np.concatenate(dataset.designs)
    T = [s.T for s in dataset.subjects]
    X = np.repeat(dataset.X, T, axis=0)
    cols = [U] + [X[:, [k]] * U for k in range(dataset.q)]
    for j, kind in blocks:
        g = dataset.genotypes.additive if kind == "additive" else dataset.genotypes.dominant
        cols.append(np.repeat(g[:, j], T)[:, None] * U)
    return float(np.linalg.cond(np.hstack(cols)))


def refit(dataset: LongitudinalDataset, selection, hyper: Hyperparameters, config: SamplerConfig,
          level: float = 0.95, allow_empty: bool = False) -> RefitSummary:
    """Rerun the sampler with only the selected blocks and a flat-limit prior.

    Each retained block gets the fixed prior ``MVN(0, 1e8 I)``; no scale or
    shrinkage parameters are updated.
    """
    blocks = _as_blocks(selection)
    if not blocks and not allow_empty:
        raise EmptySelectionError("refit needs at least one selected SNP block")
    p = dataset.p
    active_add = np.zeros(p, bool)
    active_dom = np.zeros(p, bool)
    for j, kind in blocks:
        if not 0 <= j < p:
            raise IndexError(f"SNP index {j} out of range")
        (active_add if kind == "additive" else active_dom)[j] = True
    warnings = []
    cond = _refit_design_condition(dataset, blocks)
    if not cond < CONDITION_WARN:
        msg = f"refit design is ill-conditioned (condition number {cond:.3g})"
        log.warning(msg)
        warnings.append(msg)
    chains = run_chains(dataset, hyper, config, penalized=False, prior_var=REFIT_PRIOR_VAR,
                        active_add=active_add, active_dom=active_dom)
    if not chains.converged:
        warnings.append("refit chains did not reach the PSRF threshold")
    mean = chains.posterior_mean()
    sd = {}
    intervals = {}
    for key in ("m", "r", "b", "c", "sigma2", "rho"):
        draws = chains.pooled(key)
        sd[key] = draws.std(axis=0, ddof=1)
        intervals[key] = _intervals(draws, level)
    return RefitSummary(blocks, level, mean, sd, intervals, chains, cond, warnings)


def n_free_parameters(dataset: LongitudinalDataset, n_blocks: int) -> int:
    """Coefficients of m, r_k and the retained blocks, plus sigma2 and rho."""
    return dataset.v * (1 + dataset.q + n_blocks) + 2


def bic(summary: RefitSummary, dataset: LongitudinalDataset) -> float:
    k = n_free_parameters(dataset, len(summary.blocks))
    return -2.0 * log_likelihood(summary.mean, dataset) + k * math.log(dataset.n_obs)


@dataclass
class DegreeSweep:
    chosen: int
    bic: dict[int, float]
    selections: dict[int, SelectionReport]
    refits: dict[int, RefitSummary]


def bic_degree_sweep(dataset: LongitudinalDataset, degrees, hyper=None,
                     config: SamplerConfig | None = None, level: float = 0.95) -> DegreeSweep:
    """Fit, select and refit at each polynomial degree; pick the lowest BIC.

    A degree ``d`` uses ``d + 1`` Legendre coefficients. ``hyper`` may be a
    callable mapping the coefficient count to Hyperparameters.
    """
    degrees = [int(d) for d in degrees]
    if not degrees:
        raise ValueError("degrees must be nonempty")
    if any(d < 0 for d in degrees):
        raise ValueError("degrees must be non-negative")
    config = config or SamplerConfig()
    scores, selections, refits = {}, {}, {}
    for d in degrees:
        ds = dataset.with_order(d + 1)
        if callable(hyper):
            h = hyper(d + 1)
        elif hyper is None:
            h = Hyperparameters.default(d + 1)
        else:
            h = hyper
        sel = select_snps(run_chains(ds, h, config), level)
        fit = refit(ds, sel, h, config, level, allow_empty=True)
        sel.refit = fit
        selections[d] = sel
        refits[d] = fit
        scores[d] = bic(fit, ds)
        log.info("degree %d: %d blocks, BIC %.2f", d, len(fit.blocks), scores[d])
    chosen = min(degrees, key=lambda d: (scores[d], d))
    return DegreeSweep(chosen, scores, selections, refits)


def effect_band(intervals, times) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise band of a varying coefficient from per-coefficient intervals.

    ``intervals`` is (v, 2). At each standardized time the lower bound takes
    the lower endpoint where ``u_q(t) >= 0`` and the upper endpoint where
    ``u_q(t) < 0``; the upper bound does the opposite.
    """
    iv = np.asarray(intervals, dtype=float)
    if iv.ndim != 2 or iv.shape[1] != 2:
        raise ValueError("intervals must have shape (v, 2)")
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(np.abs(t) > 1.0):
        raise ValueError("times must be standardized to [-1, 1]")
    u = legendre_values(t, iv.shape[0])
    pos = u >= 0.0
    lo = np.where(pos, iv[:, 0], iv[:, 1])
    hi = np.where(pos, iv[:, 1], iv[:, 0])
    return np.sum(lo * u, axis=1), np.sum(hi * u, axis=1)


def coefficient_band(mean, intervals, times):
    """(lo, curve, hi) for one block at standardized ``times``."""
    t = np.atleast_1d(np.asarray(times, dtype=float))
    lo, hi = effect_band(intervals, t)
    curve = legendre_values(t, len(mean)) @ np.asarray(mean, dtype=float)
    return lo, curve, hi
