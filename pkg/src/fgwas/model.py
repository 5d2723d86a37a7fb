"""Longitudinal dataset, genotype coding and the varying-coefficient mean.

Every effect function is expanded on the subject's Legendre design ``U_i``,
so the mean of subject ``i`` is ``U_i theta_i`` with the per-subject
coefficient vector

    theta_i = m + sum_k X_ik r_k + sum_j xi_ij b_j + sum_j zeta_ij c_j.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .basis import TimeGrid, legendre_values, standardize_times
from .covariance import gamma_logdet, gamma_quadratic

GENOTYPE_CODES = {"AA": (1, 0), "Aa": (0, 1), "aA": (0, 1), "aa": (-1, 0)}
MISSING_CALLS = {None, "", "NA", "na", "NaN", "nan", "missing"}


class UnencodableSNPError(ValueError):
    """Every call for a SNP is missing, so it cannot be coded or imputed."""


class UnknownBlockError(KeyError):
    pass


@dataclass(frozen=True)
class GenotypeMatrix:
    """Additive (xi) and dominant (zeta) codes, both n x p."""

    additive: np.ndarray
    dominant: np.ndarray
    snp_names: tuple[str, ...]
    maf: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.additive, dtype=float)
        zeta = np.asarray(self.dominant, dtype=float)
        if xi.ndim != 2 or xi.shape != zeta.shape:
            raise ValueError("additive and dominant codes must be n x p matrices of equal shape")
        if not np.all(np.isin(xi, (-1.0, 0.0, 1.0))):
            raise ValueError("additive codes must be in {-1, 0, 1}")
        if not np.array_equal(zeta, (xi == 0).astype(float)):
            raise ValueError("dominant code must be 1 exactly for heterozygotes (xi == 0)")
        if len(self.snp_names) != xi.shape[1]:
            raise ValueError("one SNP name per column required")
        object.__setattr__(self, "additive", xi)
        object.__setattr__(self, "dominant", zeta)
        object.__setattr__(self, "snp_names", tuple(self.snp_names))
        object.__setattr__(self, "maf", np.asarray(self.maf, dtype=float))

    @property
    def n(self) -> int:
        return self.additive.shape[0]

    @property
    def p(self) -> int:
        return self.additive.shape[1]

    def subset(self, columns) -> "GenotypeMatrix":
        columns = list(columns)
        return GenotypeMatrix(
            self.additive[:, columns],
            self.dominant[:, columns],
            tuple(self.snp_names[j] for j in columns),
            self.maf[columns],
        )

    @classmethod
    def from_additive(cls, xi, snp_names=None) -> "GenotypeMatrix":
        xi = np.asarray(xi, dtype=float)
        names = snp_names or [f"snp{j + 1}" for j in range(xi.shape[1])]
        return cls(xi, (xi == 0).astype(float), tuple(names), minor_allele_frequency(xi))


def minor_allele_frequency(xi) -> np.ndarray:
    """Frequency of the less common allele per column of additive codes."""
    xi = np.asarray(xi, dtype=float)
    freq_a = (xi + 1.0).mean(axis=0) / 2.0
    return np.minimum(freq_a, 1.0 - freq_a)


def encode_genotypes(calls, seed=None, snp_names=None, orient_minor: bool = False) -> GenotypeMatrix:
    """Code an n x p table of calls (``AA``/``Aa``/``aa``/missing) into xi and zeta.

    Missing calls are imputed by sampling from the SNP's observed genotype
    frequencies using ``seed``. With ``orient_minor`` the codes of a SNP are
    flipped when ``A`` is the major allele, so that ``xi = 1`` always denotes
    the minor homozygote; a SNP at exactly 0.5 keeps the orientation given.
    """
    table = np.asarray(calls, dtype=object)
    if table.ndim != 2:
        raise ValueError("calls must be an n x p table")
    n, p = table.shape
    rng = np.random.default_rng(seed)
    xi = np.empty((n, p))
    names = list(snp_names) if snp_names is not None else [f"snp{j + 1}" for j in range(p)]
    for j in range(p):
        col = np.full(n, np.nan)
        for i in range(n):
            call = table[i, j]
            if call in MISSING_CALLS or (isinstance(call, float) and math.isnan(call)):
                continue
            try:
                col[i] = GENOTYPE_CODES[call][0]
            except KeyError:
                raise ValueError(f"SNP {names[j]}, row {i}: unknown genotype call {call!r}") from None
        observed = ~np.isnan(col)
        if not observed.any():
            raise UnencodableSNPError(f"SNP {names[j]} has no observed genotype calls")
        missing = np.flatnonzero(~observed)
        if missing.size:
            levels, counts = np.unique(col[observed], return_counts=True)
            col[missing] = rng.choice(levels, size=missing.size, p=counts / counts.sum())
        if orient_minor and col.mean() > 0:
            col = -col
        xi[:, j] = col
    return GenotypeMatrix.from_additive(xi, names)


def decode_genotypes(genotypes: GenotypeMatrix) -> np.ndarray:
    """Inverse of the coding table: xi = 1 -> AA, 0 -> Aa, -1 -> aa."""
    lookup = {1.0: "AA", 0.0: "Aa", -1.0: "aa"}
    return np.vectorize(lookup.get, otypes=[object])(genotypes.additive)


@dataclass(frozen=True)
class Subject:
    grid: TimeGrid
    y: np.ndarray
    covariates: np.ndarray
    subject_id: str = ""

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if y.shape[0] != len(self.grid):
            raise ValueError(
                f"subject {self.subject_id}: {y.shape[0]} phenotype values for {len(self.grid)} times"
            )
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "covariates", np.asarray(self.covariates, dtype=float).reshape(-1))

    @property
    def T(self) -> int:
        return len(self.grid)


@dataclass(frozen=True, eq=False)
class LongitudinalDataset:
    """Subjects with irregular grids plus their genotypes.

    ``designs[i]`` caches the ``T_i x v`` Legendre design of subject ``i``.
    """

    subjects: tuple[Subject, ...]
    genotypes: GenotypeMatrix
    basis_order: int
    covariate_names: tuple[str, ...] = ()
    designs: tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        if self.genotypes.n != len(self.subjects):
            raise ValueError(
                f"{len(self.subjects)} subjects but genotypes have {self.genotypes.n} rows"
            )
        qs = {s.covariates.shape[0] for s in self.subjects}
        if len(qs) > 1:
            raise ValueError("all subjects must carry the same number of covariates")
        q = qs.pop() if qs else len(self.covariate_names)
        names = tuple(self.covariate_names) or tuple(f"cov{k + 1}" for k in range(q))
        if len(names) != q:
            raise ValueError("one name per covariate required")
        object.__setattr__(self, "covariate_names", names)
        designs = tuple(legendre_values(s.grid.standardized_times, self.basis_order) for s in self.subjects)
        object.__setattr__(self, "designs", designs)

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def p(self) -> int:
        return self.genotypes.p

    @property
    def q(self) -> int:
        return len(self.covariate_names)

    @property
    def v(self) -> int:
        return self.basis_order

    @property
    def n_obs(self) -> int:
        return sum(s.T for s in self.subjects)

    @property
    def time_range(self) -> tuple[float, float]:
        return self.subjects[0].grid.range if self.subjects else (-1.0, 1.0)

    @property
    def X(self) -> np.ndarray:
        return np.array([s.covariates for s in self.subjects]).reshape(self.n, self.q)

    def validate(self, strict: bool = False) -> list[str]:
        """Return warnings; in strict mode raise on subjects with fewer than two times."""
        warnings = []
        for s in self.subjects:
            if s.T < 2:
                msg = f"subject {s.subject_id} has a single measurement"
                if strict:
                    raise ValueError(msg)
                warnings.append(msg)
        if self.n < 1 or self.p < 1:
            raise ValueError("dataset needs at least one subject and one SNP")
        return warnings

    def with_order(self, order: int) -> "LongitudinalDataset":
        return LongitudinalDataset(self.subjects, self.genotypes, order, self.covariate_names)

    def with_genotypes(self, genotypes: GenotypeMatrix) -> "LongitudinalDataset":
        return LongitudinalDataset(self.subjects, genotypes, self.basis_order, self.covariate_names)

    def with_responses(self, ys: Sequence[np.ndarray]) -> "LongitudinalDataset":
        subjects = tuple(replace(s, y=y) for s, y in zip(self.subjects, ys))
        return LongitudinalDataset(subjects, self.genotypes, self.basis_order, self.covariate_names)

    @classmethod
    def from_arrays(cls, times, ys, X, genotypes: GenotypeMatrix, basis_order: int,
                    time_range=None, subject_ids=None, covariate_names=()) -> "LongitudinalDataset":
        """Build from per-subject raw time and response lists.

        The standardization range defaults to the global min/max over all subjects.
        """
        times = [np.asarray(t, dtype=float) for t in times]
        if time_range is None:
            time_range = (min(t.min() for t in times), max(t.max() for t in times))
        X = np.asarray(X, dtype=float).reshape(len(times), -1)
        ids = subject_ids or [str(i + 1) for i in range(len(times))]
        subjects = tuple(
            Subject(standardize_times(t, time_range, subject=sid), y, x, sid)
            for t, y, x, sid in zip(times, ys, X, ids)
        )
        return cls(subjects, genotypes, basis_order, tuple(covariate_names))


@dataclass
class ParameterState:
    """One full draw of every model parameter."""

    m: np.ndarray
    r: np.ndarray
    b: np.ndarray
    c: np.ndarray
    tau2: np.ndarray
    tau2_star: np.ndarray
    lambda2: float
    lambda2_star: float
    sigma2: float
    rho: float

    def copy(self) -> "ParameterState":
        return ParameterState(
            self.m.copy(), self.r.copy(), self.b.copy(), self.c.copy(),
            self.tau2.copy(), self.tau2_star.copy(),
            float(self.lambda2), float(self.lambda2_star), float(self.sigma2), float(self.rho),
        )

    @classmethod
    def zeros(cls, v: int, q: int, p: int) -> "ParameterState":
        return cls(
            m=np.zeros(v), r=np.zeros((q, v)), b=np.zeros((p, v)), c=np.zeros((p, v)),
            tau2=np.ones(p), tau2_star=np.ones(p),
            lambda2=1.0, lambda2_star=1.0, sigma2=1.0, rho=0.2,
        )

    def check(self, dataset: LongitudinalDataset | None = None) -> None:
        """Raise ValueError when dimensions or supports are violated."""
        if dataset is not None:
            v, q, p = dataset.v, dataset.q, dataset.p
            if (self.m.shape != (v,) or self.r.shape != (q, v) or self.b.shape != (p, v)
                    or self.c.shape != (p, v) or self.tau2.shape != (p,)
                    or self.tau2_star.shape != (p,)):
                raise ValueError("parameter dimensions do not match dataset")
        if np.any(self.tau2 <= 0) or np.any(self.tau2_star <= 0):
            raise ValueError("group scales must be positive")
        if not (self.lambda2 > 0 and self.lambda2_star > 0 and self.sigma2 > 0):
            raise ValueError("lambda2, lambda2_star and sigma2 must be positive")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho outside (0, 1): {self.rho}")


@dataclass(frozen=True)
class Hyperparameters:
    """Prior settings.

    ``sigma2_df``/``sigma2_scale`` give a scaled-inverse-chi-square prior on
    sigma2; ``sigma2_df = 0`` is the default ``1/sigma2`` prior.
    """

    Sigma_m0: np.ndarray
    Sigma_r0: np.ndarray
    a: float = 0.01
    b: float = 0.01
    a_star: float = 0.01
    b_star: float = 0.01
    sigma2_df: float = 0.0
    sigma2_scale: float = 1.0

    def __post_init__(self):
        for name in ("Sigma_m0", "Sigma_r0"):
            S = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if S.shape[0] != S.shape[1] or not np.allclose(S, S.T):
                raise ValueError(f"{name} must be a symmetric square matrix")
            try:
                np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                raise ValueError(f"{name} is not positive definite") from None
            object.__setattr__(self, name, S)
        if min(self.a, self.b, self.a_star, self.b_star) <= 0:
            raise ValueError("gamma hyperparameters must be positive")
        if self.sigma2_df < 0 or self.sigma2_scale <= 0:
            raise ValueError("invalid sigma2 prior")

    @classmethod
    def default(cls, v: int, **overrides) -> "Hyperparameters":
        return cls(Sigma_m0=1e4 * np.eye(v), Sigma_r0=1e4 * np.eye(v), **overrides)


# -- mean algebra ---------------------------------------------------------

def subject_coefficients(state: ParameterState, dataset: LongitudinalDataset) -> np.ndarray:
    """n x v matrix whose row i is theta_i."""
    G = dataset.genotypes
    return (state.m[None, :] + dataset.X @ state.r
            + G.additive @ state.b + G.dominant @ state.c)


def _block_weight_and_coef(state, dataset, i, block):
    kind, idx = _parse_block(block, dataset)
    if kind == "m":
        return 1.0, state.m
    if kind == "r":
        return dataset.subjects[i].covariates[idx], state.r[idx]
    if kind == "b":
        return dataset.genotypes.additive[i, idx], state.b[idx]
    return dataset.genotypes.dominant[i, idx], state.c[idx]


def _parse_block(block, dataset) -> tuple[str, int]:
    if block == "m" or block == ("m", None):
        return "m", 0
    try:
        kind, idx = block
        idx = int(idx)
    except (TypeError, ValueError):
        raise UnknownBlockError(f"unknown block {block!r}") from None
    limit = {"r": dataset.q, "b": dataset.p, "c": dataset.p}.get(kind)
    if limit is None or not 0 <= idx < limit:
        raise UnknownBlockError(f"unknown block {block!r}")
    return kind, idx


def block_contribution(state, dataset, i: int, block) -> np.ndarray:
    w, coef = _block_weight_and_coef(state, dataset, i, block)
    return w * (dataset.designs[i] @ coef)


def mean_vector(state: ParameterState, dataset: LongitudinalDataset, i: int) -> np.ndarray:
    """Mean of subject i: U_i (m + sum_k X_ik r_k + sum_j xi_ij b_j + sum_j zeta_ij c_j)."""
    G = dataset.genotypes
    if state.b.shape[0] != G.p or state.m.shape[0] != dataset.v or state.r.shape[0] != dataset.q:
        raise ValueError("state dimensions do not match dataset")
    theta = (state.m + dataset.subjects[i].covariates @ state.r
             + G.additive[i] @ state.b + G.dominant[i] @ state.c)
    return dataset.designs[i] @ theta


def partial_residual(state, dataset, i: int, block) -> np.ndarray:
    """``y_i - mu_{i(-B)}``: the response minus the mean without block ``B``.

    ``block`` is ``"m"`` or one of ``("r", k)``, ``("b", j)``, ``("c", j)``.
    """
    mu = mean_vector(state, dataset, i)
    return dataset.subjects[i].y - (mu - block_contribution(state, dataset, i, block))


def log_likelihood(state: ParameterState, dataset: LongitudinalDataset) -> float:
    """Gaussian log-density of all responses under AR(1) residuals."""
    total = 0.0
    n_obs = 0
    for i, s in enumerate(dataset.subjects):
        e = s.y - mean_vector(state, dataset, i)
        total -= 0.5 * gamma_logdet(state.rho, s.grid)
        total -= 0.5 * gamma_quadratic(state.rho, s.grid, e, e) / state.sigma2
        n_obs += s.T
    return total - 0.5 * n_obs * math.log(2.0 * math.pi * state.sigma2)
