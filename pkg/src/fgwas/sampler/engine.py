"""Single-chain Gibbs engine with cached sufficient statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from ..covariance import innovation_variances
from ..model import Hyperparameters, LongitudinalDataset, ParameterState
from . import _kernels as K
from .conditionals import IG_MEAN_CEILING, SS_FLOOR, NonSPDError, reflect_unit

PARAMETER_NAMES = (
    "m", "r", "b", "c", "tau2", "tau2_star", "lambda2", "lambda2_star", "sigma2", "rho",
)


@dataclass(frozen=True, eq=False)
class PackedData:
    """Flat, contiguous copy of a dataset laid out for the kernels."""

    offsets: np.ndarray
    y: np.ndarray
    U: np.ndarray
    gaps: np.ndarray
    starts: np.ndarray
    X: np.ndarray
    X2: np.ndarray
    zeta: np.ndarray
    ptr_a: np.ndarray
    idx_a: np.ndarray
    val_a: np.ndarray
    ptr_d: np.ndarray
    idx_d: np.ndarray
    val_d: np.ndarray
    n: int
    p: int
    q: int
    v: int

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @classmethod
    def from_dataset(cls, dataset: LongitudinalDataset) -> "PackedData":
        n, p, q, v = dataset.n, dataset.p, dataset.q, dataset.v
        lengths = np.array([s.T for s in dataset.subjects], dtype=np.int64)
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        N = int(offsets[-1])
        y = np.concatenate([s.y for s in dataset.subjects]) if n else np.zeros(0)
        U = np.concatenate(dataset.designs) if n else np.zeros((0, v))
        t = np.concatenate([s.grid.standardized_times for s in dataset.subjects]) if n else np.zeros(0)
        starts = np.zeros(N, dtype=bool)
        starts[offsets[:-1][lengths > 0]] = True
        gaps = np.zeros(N)
        if N > 1:
            gaps[1:] = np.diff(t)
        gaps[starts] = 0.0
        X = np.ascontiguousarray(dataset.X.reshape(n, q), dtype=float)
        xi = dataset.genotypes.additive
        zeta = np.ascontiguousarray(dataset.genotypes.dominant)
        A = sparse.csc_matrix(xi)
        D = sparse.csc_matrix(zeta)
        A.sort_indices()
        D.sort_indices()
        return cls(
            offsets=offsets, y=np.ascontiguousarray(y, dtype=float),
            U=np.ascontiguousarray(U, dtype=float), gaps=gaps, starts=starts,
            X=X, X2=X**2, zeta=zeta,
            ptr_a=A.indptr.astype(np.int64), idx_a=A.indices.astype(np.int64),
            val_a=A.data.astype(float),
            ptr_d=D.indptr.astype(np.int64), idx_d=D.indices.astype(np.int64),
            val_d=D.data.astype(float),
            n=n, p=p, q=q, v=v,
        )


def initial_state(dataset: LongitudinalDataset, ridge: float = 1e-6) -> ParameterState:
    """Warm start: m and r_k by ridge least squares on the pooled data, groups at zero."""
    n, q, v, p = dataset.n, dataset.q, dataset.v, dataset.p
    state = ParameterState.zeros(v, q, p)
    if n == 0:
        return state
    U = np.concatenate(dataset.designs)
    y = np.concatenate([s.y for s in dataset.subjects])
    Xrep = np.repeat(dataset.X, [s.T for s in dataset.subjects], axis=0)
    D = np.hstack([U] + [Xrep[:, [k]] * U for k in range(q)])
    coef = np.linalg.solve(D.T @ D + ridge * np.eye(D.shape[1]), D.T @ y)
    state.m = coef[:v].copy()
    state.r = coef[v:].reshape(q, v).copy()
    resid = y - D @ coef
    state.sigma2 = float(max(resid.var(), 1e-8))
    state.rho = 0.2
    return state


class GibbsChain:
    """One Markov chain over all parameters.

    ``penalized=False`` gives the refit model: group blocks get the fixed
    prior ``MVN(0, prior_var I)`` and no scale or shrinkage updates.
    ``active_add``/``active_dom`` restrict which groups are in the model;
    inactive groups stay at zero. Names in ``frozen`` are never updated.
    """

    def __init__(self, data: PackedData, hyper: Hyperparameters, state: ParameterState,
                 rng: np.random.Generator, *, penalized: bool = True, prior_var: float = 1e8,
                 active_add=None, active_dom=None, rho_step: float = 0.05,
                 frozen=(), ig_mean_ceiling: float = IG_MEAN_CEILING):
        unknown = set(frozen) - set(PARAMETER_NAMES)
        if unknown:
            raise ValueError(f"unknown parameters to freeze: {sorted(unknown)}")
        if not 0.0 < rho_step < 1.0 and rho_step != 0.0:
            raise ValueError("rho_step must lie in [0, 1)")
        self.data = data
        self.hyper = hyper
        self.rng = rng
        self.penalized = penalized
        self.fixed_prec = 1.0 / prior_var
        self.rho_step = rho_step
        self.frozen = frozenset(frozen)
        self.ceiling = ig_mean_ceiling
        p, v = data.p, data.v
        self.active_add = np.ones(p, bool) if active_add is None else np.asarray(active_add, bool).copy()
        self.active_dom = np.ones(p, bool) if active_dom is None else np.asarray(active_dom, bool).copy()
        self.P_m0 = np.linalg.inv(hyper.Sigma_m0)
        self.P_r0 = np.linalg.inv(hyper.Sigma_r0)
        if self.P_m0.shape != (v, v) or self.P_r0.shape != (v, v):
            raise ValueError("prior covariance dimensions do not match basis order")

        s = state.copy()
        s.check()
        s.b[~self.active_add] = 0.0
        s.c[~self.active_dom] = 0.0
        self.m, self.r, self.b, self.c = s.m, s.r.reshape(data.q, v), s.b, s.c
        self.tau2, self.tau2_star = s.tau2, s.tau2_star
        self.lambda2, self.lambda2_star = s.lambda2, s.lambda2_star
        self.sigma2, self.rho = s.sigma2, s.rho
        self.y = data.y.copy()

        n = data.n
        self.G = np.zeros((n, v, v))
        self.h = np.zeros((n, v))
        self.R = np.zeros((n, v))
        self.theta = (self.m[None, :] + data.X @ self.r
                      + _csc_apply(data.ptr_a, data.idx_a, data.val_a, self.b, n)
                      + _csc_apply(data.ptr_d, data.idx_d, data.val_d, self.c, n))
        self.rho_accepted = 0
        self.rho_proposed = 0
        self._refresh(self.rho)

    # -- caches ----------------------------------------------------------

    def _lag_terms(self, rho):
        phi = rho ** self.data.gaps
        phi[self.data.starts] = 0.0
        one_minus = innovation_variances(rho, self.data.gaps, phi)
        one_minus[self.data.starts] = 1.0
        logdet = float(np.sum(np.log(one_minus)))
        return phi, 1.0 / np.sqrt(one_minus), logdet

    def _refresh(self, rho):
        d = self.data
        self.phi, self.scl, self.logdet = self._lag_terms(rho)
        K.subject_grams(d.offsets, self.y, d.U, self.phi, self.scl, self.G, self.h)
        Gflat = self.G.reshape(d.n, -1)
        v = d.v
        self.G_tot = Gflat.sum(axis=0).reshape(v, v)
        # xi^2 = 1 - zeta for every valid genotype code
        self.A_dom = np.ascontiguousarray((d.zeta.T @ Gflat).reshape(d.p, v, v))
        self.A_add = np.ascontiguousarray(self.G_tot[None] - self.A_dom)
        # the subtraction leaves rounding noise where xi is identically zero
        self.A_add[np.diff(d.ptr_a) == 0] = 0.0
        self.C_cov = np.ascontiguousarray((d.X2.T @ Gflat).reshape(d.q, v, v))
        K.coefficient_residual(self.G, self.h, self.theta, self.R)

    def set_response(self, y) -> None:
        """Swap in a new response vector (same layout as ``PackedData.y``)."""
        self.y = np.ascontiguousarray(y, dtype=float)
        K.subject_grams(self.data.offsets, self.y, self.data.U, self.phi, self.scl, self.G, self.h)
        K.coefficient_residual(self.G, self.h, self.theta, self.R)

    def residual_quadratic(self, phi=None, scl=None) -> float:
        d = self.data
        return K.residual_quadratic(d.offsets, self.y, d.U, self.theta,
                                    self.phi if phi is None else phi,
                                    self.scl if scl is None else scl)

    # -- sweep -----------------------------------------------------------

    def sweep(self) -> None:
        d = self.data
        rng = self.rng
        p, q, v = d.p, d.q, d.v
        z = rng.standard_normal(v + q * v + 2 * p * v + 2 * p)
        u = rng.random(2 * p)
        o = 0
        z_m = z[o:o + v]; o += v
        z_r = z[o:o + q * v].reshape(q, v); o += q * v
        z_b = z[o:o + p * v].reshape(p, v); o += p * v
        z_c = z[o:o + p * v].reshape(p, v); o += p * v
        nu_b = z[o:o + p]; o += p
        nu_c = z[o:o + p]
        fz = self.frozen
        status = K.sweep_coefficients(
            self.G, self.R, self.theta, d.X, self.C_cov, self.G_tot, self.P_m0, self.P_r0,
            d.ptr_a, d.idx_a, d.val_a, self.A_add, self.active_add,
            d.ptr_d, d.idx_d, d.val_d, self.A_dom, self.active_dom,
            self.m, self.r, self.b, self.c, self.tau2, self.tau2_star,
            self.sigma2, self.lambda2, self.lambda2_star, self.penalized, self.fixed_prec,
            self.ceiling,
            "m" not in fz, "r" not in fz, "b" not in fz, "c" not in fz,
            "tau2" not in fz, "tau2_star" not in fz,
            z_m, z_r, z_b, z_c, nu_b, u[:p], nu_c, u[p:],
        )
        if status != K.OK:
            raise NonSPDError("posterior precision of a coefficient block is not positive definite")

        hyp = self.hyper
        if self.penalized:
            n_add = int(self.active_add.sum())
            n_dom = int(self.active_dom.sum())
            lam_shape = hyp.a + n_add * (v + 1) / 2.0
            lam_rate = hyp.b + v * float(self.tau2[self.active_add].sum()) / 2.0
            lam2 = rng.gamma(lam_shape, 1.0 / lam_rate)
            if "lambda2" not in fz:
                self.lambda2 = lam2
            lam_shape = hyp.a_star + n_dom * (v + 1) / 2.0
            lam_rate = hyp.b_star + v * float(self.tau2_star[self.active_dom].sum()) / 2.0
            lam2 = rng.gamma(lam_shape, 1.0 / lam_rate)
            if "lambda2_star" not in fz:
                self.lambda2_star = lam2

        ss = self.residual_quadratic()
        df = hyp.sigma2_df + d.n_obs
        num = hyp.sigma2_df * hyp.sigma2_scale + ss
        if self.penalized:
            df += v * (int(self.active_add.sum()) + int(self.active_dom.sum()))
            num += float(np.sum(self.b**2, axis=1)[self.active_add] @ (1.0 / self.tau2[self.active_add]))
            num += float(np.sum(self.c**2, axis=1)[self.active_dom] @ (1.0 / self.tau2_star[self.active_dom]))
        num = max(num, SS_FLOOR)
        s2 = num / rng.chisquare(df)
        if "sigma2" not in fz:
            self.sigma2 = s2

        self._update_rho(ss)

    def _update_rho(self, ss: float) -> None:
        step = self.rho_step
        proposal = reflect_unit(self.rho + self.rng.uniform(-step, step))
        log_u = math.log(self.rng.random())
        if "rho" in self.frozen:
            return
        self.rho_proposed += 1
        if not 0.0 < proposal < 1.0:
            return
        if proposal == self.rho:
            self.rho_accepted += 1
            return
        phi, scl, logdet = self._lag_terms(proposal)
        ss_new = self.residual_quadratic(phi, scl)
        log_ratio = -0.5 * (logdet - self.logdet) - 0.5 * (ss_new - ss) / self.sigma2
        if log_u < log_ratio:
            self.rho = proposal
            self.rho_accepted += 1
            self._refresh(proposal)

    # -- access ----------------------------------------------------------

    def state(self) -> ParameterState:
        return ParameterState(
            self.m.copy(), self.r.copy(), self.b.copy(), self.c.copy(),
            self.tau2.copy(), self.tau2_star.copy(),
            float(self.lambda2), float(self.lambda2_star), float(self.sigma2), float(self.rho),
        )

    def fitted_mean(self) -> np.ndarray:
        """Current mean of every observation, in ``PackedData.y`` layout."""
        d = self.data
        rows = np.repeat(np.arange(d.n), np.diff(d.offsets))
        return np.einsum("lv,lv->l", d.U, self.theta[rows])


def _csc_apply(ptr, idx, val, coef, n):
    out = np.zeros((n, coef.shape[1]))
    for j in range(coef.shape[0]):
        sl = slice(ptr[j], ptr[j + 1])
        out[idx[sl]] += val[sl, None] * coef[j]
    return out
