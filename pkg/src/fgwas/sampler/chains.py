"""Multi-chain orchestration: burn-in until the PSRF rule holds, then record."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..diagnostics import PsrfReport, psrf_or_inf
from ..model import Hyperparameters, LongitudinalDataset, ParameterState
from .engine import GibbsChain, PackedData, initial_state

log = logging.getLogger(__name__)

THREADS_ENV = "FGWAS_THREADS"


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 2
    burn_in: int = 500
    post_convergence_iters: int = 4000
    thin: int = 1
    seed: int = 0
    rho_step: float = 0.05
    psrf_threshold: float = 1.1
    max_burn_in: int = 20000
    check_every: int = 100
    monitor_top: int = 50
    adapt_rho: bool = True
    threads: int | None = None

    def __post_init__(self):
        if self.n_chains < 2:
            raise ValueError("n_chains must be at least 2")
        for name in ("burn_in", "post_convergence_iters", "thin", "check_every", "max_burn_in"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.rho_step < 1.0:
            raise ValueError("rho_step must lie in (0, 1)")
        if self.post_convergence_iters < self.thin:
            raise ValueError("post_convergence_iters must be at least thin")

    def n_threads(self) -> int:
        if self.threads:
            return int(self.threads)
        return int(os.environ.get(THREADS_ENV, "1") or 1)


@dataclass
class ChainDraws:
    """Recorded (thinned) draws of one chain; leading axis is the draw index."""

    m: np.ndarray
    r: np.ndarray
    b: np.ndarray
    c: np.ndarray
    tau2: np.ndarray
    tau2_star: np.ndarray
    lambda2: np.ndarray
    lambda2_star: np.ndarray
    sigma2: np.ndarray
    rho: np.ndarray
    rho_accepted: int = 0
    rho_proposed: int = 0

    @classmethod
    def empty(cls, L: int, v: int, q: int, p: int) -> "ChainDraws":
        return cls(
            m=np.zeros((L, v)), r=np.zeros((L, q, v)), b=np.zeros((L, p, v)), c=np.zeros((L, p, v)),
            tau2=np.zeros((L, p)), tau2_star=np.zeros((L, p)),
            lambda2=np.zeros(L), lambda2_star=np.zeros(L), sigma2=np.zeros(L), rho=np.zeros(L),
        )

    def __len__(self) -> int:
        return self.sigma2.shape[0]

    def record(self, k: int, ch: GibbsChain) -> None:
        self.m[k] = ch.m
        self.r[k] = ch.r
        self.b[k] = ch.b
        self.c[k] = ch.c
        self.tau2[k] = ch.tau2
        self.tau2_star[k] = ch.tau2_star
        self.lambda2[k] = ch.lambda2
        self.lambda2_star[k] = ch.lambda2_star
        self.sigma2[k] = ch.sigma2
        self.rho[k] = ch.rho

    def state(self, k: int) -> ParameterState:
        return ParameterState(
            self.m[k].copy(), self.r[k].copy(), self.b[k].copy(), self.c[k].copy(),
            self.tau2[k].copy(), self.tau2_star[k].copy(),
            float(self.lambda2[k]), float(self.lambda2_star[k]),
            float(self.sigma2[k]), float(self.rho[k]),
        )

    def __iter__(self):
        return (self.state(k) for k in range(len(self)))


ARRAY_FIELDS = ("m", "r", "b", "c", "tau2", "tau2_star", "lambda2", "lambda2_star", "sigma2", "rho")


@dataclass
class ChainSet:
    chains: list[ChainDraws]
    converged: bool = True
    psrf: PsrfReport = field(default_factory=PsrfReport)
    burn_in_iters: int = 0
    penalized: bool = True
    active_add: np.ndarray | None = None
    active_dom: np.ndarray | None = None
    snp_names: tuple[str, ...] = ()

    @property
    def accepted_rho(self) -> list[int]:
        return [ch.rho_accepted for ch in self.chains]

    def stacked(self, name: str) -> np.ndarray:
        """Array of shape (n_chains, L, ...) for one parameter."""
        return np.stack([getattr(ch, name) for ch in self.chains])

    def pooled(self, name: str) -> np.ndarray:
        """Draws of all chains concatenated along the first axis."""
        return np.concatenate([getattr(ch, name) for ch in self.chains])

    def posterior_mean(self) -> ParameterState:
        means = {name: self.pooled(name).mean(axis=0) for name in ARRAY_FIELDS}
        return ParameterState(
            means["m"], means["r"], means["b"], means["c"], means["tau2"], means["tau2_star"],
            float(means["lambda2"]), float(means["lambda2_star"]),
            float(means["sigma2"]), float(means["rho"]),
        )


class _Monitor:
    """Burn-in traces of the scalars used for the convergence rule."""

    def __init__(self, penalized, active_add, active_dom):
        self.penalized = penalized
        self.ia = np.flatnonzero(active_add)
        self.id = np.flatnonzero(active_dom)
        self.rows: list[list[np.ndarray]] = []

    def new_chain(self):
        self.rows.append([])

    def push(self, k: int, ch: GibbsChain) -> None:
        scal = [ch.sigma2, ch.rho, ch.m[0]]
        if self.penalized:
            scal += [ch.lambda2, ch.lambda2_star]
        scal = np.concatenate([np.array(scal), ch.r[:, 0]])
        b = ch.b[self.ia]
        c = ch.c[self.id]
        row = np.concatenate([
            scal, b[:, 0], c[:, 0], np.sqrt(np.sum(b * b, axis=1)), np.sqrt(np.sum(c * c, axis=1)),
        ]).astype(np.float32)
        self.rows[k].append(row)

    def names(self, q: int) -> list[str]:
        base = ["sigma2", "rho", "m[0]"]
        if self.penalized:
            base += ["lambda2", "lambda2_star"]
        return base + [f"r[{k}][0]" for k in range(q)]

    def report(self, start: int, q: int, snp_names, top: int, threshold: float) -> PsrfReport:
        trace = np.stack([np.array(rows[start:], dtype=float) for rows in self.rows])
        names = self.names(q)
        ns = len(names)
        na, nd = self.ia.size, self.id.size
        o = ns
        b0 = trace[:, :, o:o + na]; o += na
        c0 = trace[:, :, o:o + nd]; o += nd
        bn = trace[:, :, o:o + na].mean(axis=(0, 1)); o += na
        cn = trace[:, :, o:o + nd].mean(axis=(0, 1))
        report = PsrfReport(threshold=threshold)
        for s in range(ns):
            report.entries[names[s]] = psrf_or_inf(trace[:, :, s])
        for kind, first, norms, idx in (("b", b0, bn, self.ia), ("c", c0, cn, self.id)):
            for t in np.argsort(-norms, kind="stable")[:top]:
                report.entries[f"{kind}[{snp_names[idx[t]]}][0]"] = psrf_or_inf(first[:, :, t])
        return report


def run_chains(dataset: LongitudinalDataset, hyper: Hyperparameters, config: SamplerConfig, *,
               penalized: bool = True, prior_var: float = 1e8, active_add=None, active_dom=None,
               frozen=(), init: ParameterState | list | None = None,
               packed: PackedData | None = None) -> ChainSet:
    """Run ``config.n_chains`` chains until every monitored PSRF is below the
    threshold, then record ``post_convergence_iters`` sweeps per chain.

    The monitored scalars are sigma2, rho, lambda2, lambda2*, the first
    Legendre coefficient of m and of each r_k, and the first coefficient of
    the ``monitor_top`` additive and dominant groups with the largest mean
    norm. If the burn-in budget runs out the draws are still recorded and
    the result carries ``converged=False``.
    """
    data = packed if packed is not None else PackedData.from_dataset(dataset)
    p = data.p
    active_add = np.ones(p, bool) if active_add is None else np.asarray(active_add, bool)
    active_dom = np.ones(p, bool) if active_dom is None else np.asarray(active_dom, bool)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    if init is None:
        inits = [initial_state(dataset)] * config.n_chains
    elif isinstance(init, ParameterState):
        inits = [init] * config.n_chains
    else:
        inits = list(init)
    chains = [
        GibbsChain(data, hyper, inits[k], np.random.default_rng(seeds[k]), penalized=penalized,
                   prior_var=prior_var, active_add=active_add, active_dom=active_dom,
                   rho_step=config.rho_step, frozen=frozen)
        for k in range(config.n_chains)
    ]
    monitor = _Monitor(penalized, active_add, active_dom)
    for _ in chains:
        monitor.new_chain()

    n_threads = max(1, min(config.n_threads(), len(chains)))
    pool = ThreadPoolExecutor(n_threads) if n_threads > 1 else None

    def burn(k):
        ch = chains[k]
        acc0, prop0 = ch.rho_accepted, ch.rho_proposed
        for _ in range(config.check_every):
            ch.sweep()
            monitor.push(k, ch)
        if config.adapt_rho and "rho" not in frozen:
            rate = (ch.rho_accepted - acc0) / max(ch.rho_proposed - prop0, 1)
            if rate < 0.30:
                ch.rho_step = max(ch.rho_step * 0.8, 1e-4)
            elif rate > 0.45:
                ch.rho_step = min(ch.rho_step * 1.25, 0.5)

    def _map(fn):
        if pool is None:
            for k in range(len(chains)):
                fn(k)
        else:
            list(pool.map(fn, range(len(chains))))

    try:
        it = 0
        report = PsrfReport(threshold=config.psrf_threshold)
        while True:
            _map(burn)
            it += config.check_every
            if it >= config.burn_in:
                report = monitor.report(it // 2, data.q, dataset.genotypes.snp_names,
                                        config.monitor_top, config.psrf_threshold)
                if report.converged:
                    break
                log.debug("iteration %d: max PSRF %.3f", it, report.max_psrf)
            if it >= config.max_burn_in:
                log.warning("PSRF did not fall below %.2f within %d iterations",
                            config.psrf_threshold, config.max_burn_in)
                break
        monitor.rows = []

        L = config.post_convergence_iters // config.thin
        draws = [ChainDraws.empty(L, data.v, data.q, p) for _ in chains]

        def record(k):
            ch = chains[k]
            acc0, prop0 = ch.rho_accepted, ch.rho_proposed
            for s in range(L * config.thin):
                ch.sweep()
                if (s + 1) % config.thin == 0:
                    draws[k].record(s // config.thin, ch)
            draws[k].rho_accepted = ch.rho_accepted - acc0
            draws[k].rho_proposed = ch.rho_proposed - prop0

        _map(record)
    finally:
        if pool is not None:
            pool.shutdown()

    return ChainSet(chains=draws, converged=report.converged, psrf=report, burn_in_iters=it,
                    penalized=penalized, active_add=active_add, active_dom=active_dom,
                    snp_names=tuple(dataset.genotypes.snp_names))
