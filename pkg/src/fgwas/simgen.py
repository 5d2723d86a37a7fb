"""Synthetic GWAS data with longitudinal phenotypes and known varying effects."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.stats import norm

from .basis import legendre_values, standardize_times
from .covariance import simulate_ar1
from .model import GenotypeMatrix, LongitudinalDataset, Subject, minor_allele_frequency

# Legendre coefficients of the true curves, degree 0..3
TRUE_MEAN = (13.40, -3.08, 1.88, -3.20)
TRUE_SEX = (3.00, 0.15, -2.67, 3.25)
TRUE_ADDITIVE = {
    0: (1.04, 0.88, -2.05, 0.00),
    1: (1.17, -0.22, 0.74, -4.72),
    2: (1.40, 0.00, 0.00, 0.00),
}
TRUE_DOMINANT = {
    2: (1.49, -2.13, 4.82, 1.42),
    3: (1.00, 1.32, 1.90, 1.50),
    4: (1.26, -1.22, 0.00, 0.00),
}


def _pad(coef, v):
    out = np.zeros(v)
    k = min(v, len(coef))
    out[:k] = np.asarray(coef, dtype=float)[:k]
    return out


def default_truth(v: int = 4) -> dict[int, tuple[np.ndarray | None, np.ndarray | None]]:
    """SNP index -> (additive, dominant) coefficients; ``None`` marks a null block."""
    truth = {}
    for j in sorted(set(TRUE_ADDITIVE) | set(TRUE_DOMINANT)):
        b = _pad(TRUE_ADDITIVE[j], v) if j in TRUE_ADDITIVE else None
        c = _pad(TRUE_DOMINANT[j], v) if j in TRUE_DOMINANT else None
        truth[j] = (b, c)
    return truth


@dataclass(frozen=True, eq=False)
class SimDesign:
    n: int = 300
    p: int = 500
    v: int = 4
    rho_G: float = 0.1
    maf: float = 0.3
    sigma2: float = 4.0
    rho: float = 0.4
    measurements: tuple[int, int] = (5, 12)
    age_range: tuple[float, float] = (30.0, 80.0)
    age_step: float = 0.1
    seed: int = 0
    m: tuple = TRUE_MEAN
    r: tuple = (TRUE_SEX,)
    truth: dict = field(default=None)

    def __post_init__(self):
        if self.truth is None:
            object.__setattr__(self, "truth", default_truth(self.v))
        if not 0.0 <= self.rho_G < 1.0:
            raise ValueError("rho_G must lie in [0, 1)")
        if not 0.0 < self.maf <= 0.5:
            raise ValueError("maf must lie in (0, 0.5]")
        if any(j < 0 or j >= self.p for j in self.truth):
            raise ValueError("truth SNP index out of range")
        lo, hi = self.measurements
        if not 1 <= lo <= hi:
            raise ValueError("invalid measurement count range")
        n_slots = int(round((self.age_range[1] - self.age_range[0]) / self.age_step)) + 1
        if hi > n_slots:
            raise ValueError("age lattice too coarse for the requested measurement counts")

    @property
    def q(self) -> int:
        return len(self.r)

    @property
    def threshold(self) -> float:
        return float(norm.ppf(1.0 - self.maf))

    def causal_blocks(self) -> set[tuple[int, str]]:
        out = set()
        for j, (b, c) in self.truth.items():
            if b is not None and np.any(b != 0):
                out.add((j, "additive"))
            if c is not None and np.any(c != 0):
                out.add((j, "dominant"))
        return out

    def causal_snps(self) -> set[int]:
        return {j for j, _ in self.causal_blocks()}

    def coefficient_arrays(self):
        """Dense (m, r, b, c) truth arrays in the model's layout."""
        b = np.zeros((self.p, self.v))
        c = np.zeros((self.p, self.v))
        for j, (bj, cj) in self.truth.items():
            if bj is not None:
                b[j] = _pad(bj, self.v)
            if cj is not None:
                c[j] = _pad(cj, self.v)
        r = np.array([_pad(rk, self.v) for rk in self.r]).reshape(self.q, self.v)
        return _pad(self.m, self.v), r, b, c


def latent_liabilities(design: SimDesign, rng: np.random.Generator) -> np.ndarray:
    """``u_ij = sqrt(rho_G) z_i0 + sqrt(1 - rho_G) z_ij``: unit variance,
    correlation ``rho_G`` between SNPs."""
    z0 = rng.standard_normal((design.n, 1))
    return np.sqrt(design.rho_G) * z0 + np.sqrt(1.0 - design.rho_G) * rng.standard_normal((design.n, design.p))


def generate_genotypes(design: SimDesign, rng: np.random.Generator) -> GenotypeMatrix:
    """Threshold the latent liabilities at +-c: ``u > c`` gives AA, ``u < -c`` aa."""
    p = design.p
    u = latent_liabilities(design, rng)
    c = design.threshold
    xi = np.where(u > c, 1.0, np.where(u < -c, -1.0, 0.0))
    names = tuple(f"snp{j + 1}" for j in range(p))
    return GenotypeMatrix(xi, (xi == 0).astype(float), names, minor_allele_frequency(xi))


def draw_ages(design: SimDesign, T: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = design.age_range
    n_slots = int(round((hi - lo) / design.age_step)) + 1
    slots = np.sort(rng.choice(n_slots, size=T, replace=False))
    return np.round(lo + design.age_step * slots, 10)


def generate_phenotypes(design: SimDesign, genotypes: GenotypeMatrix, rng: np.random.Generator,
                        mean_hook=None) -> LongitudinalDataset:
    """Irregular measurement ages, a binary sex covariate and AR(1) noise around
    the true varying-coefficient mean.

    ``mean_hook(age, x_i, xi_i, zeta_i)`` replaces the Legendre mean when
    given, for truths that are not polynomials.
    """
    if genotypes.n != design.n or genotypes.p != design.p:
        raise ValueError("genotypes do not match the design")
    m, r, b, c = design.coefficient_arrays()
    xi, zeta = genotypes.additive, genotypes.dominant
    theta = m[None, :] + xi @ b + zeta @ c
    lo, hi = design.measurements
    sex = rng.integers(0, 2, size=(design.n, design.q)).astype(float)
    theta += sex @ r
    subjects = []
    for i in range(design.n):
        T = int(rng.integers(lo, hi + 1))
        ages = draw_ages(design, T, rng)
        grid = standardize_times(ages, design.age_range, subject=str(i + 1))
        if mean_hook is None:
            mu = legendre_values(grid.standardized_times, design.v) @ theta[i]
        else:
            mu = np.asarray(mean_hook(ages, sex[i], xi[i], zeta[i]), dtype=float)
        y = mu + simulate_ar1(design.rho, design.sigma2, grid, rng)
        subjects.append(Subject(grid, y, sex[i], str(i + 1)))
    names = ("sex",) if design.q == 1 else tuple(f"cov{k + 1}" for k in range(design.q))
    return LongitudinalDataset(tuple(subjects), genotypes, design.v, names)


def simulate(design: SimDesign, seed: int | None = None) -> LongitudinalDataset:
    """Genotypes then phenotypes from one seed."""
    rng = np.random.default_rng(design.seed if seed is None else seed)
    g = generate_genotypes(design, rng)
    return generate_phenotypes(design, g, rng)


@dataclass(frozen=True)
class SimMetrics:
    C: float
    IC: float
    underfit: Fraction
    correctfit: Fraction
    overfit: Fraction
    n_replicates: int


def classify_selection(selected_blocks, design: SimDesign) -> tuple[int, int, str]:
    """Return (causal captured, null SNPs selected, bucket) for one replicate.

    A causal SNP is captured when every truly nonzero block of it is selected.
    A null SNP counts as selected when either of its blocks is.
    """
    selected_blocks = set(selected_blocks)
    causal = design.causal_blocks()
    causal_snps = design.causal_snps()
    captured = sum(
        all((j, kind) in selected_blocks for (jj, kind) in causal if jj == j) for j in causal_snps
    )
    null_hits = len({j for j, _ in selected_blocks if j not in causal_snps})
    if captured < len(causal_snps):
        bucket = "underfit"
    elif null_hits == 0:
        bucket = "correctfit"
    else:
        bucket = "overfit"
    return captured, null_hits, bucket


def score_selection(reports, design: SimDesign) -> SimMetrics:
    """Average replicate classifications. ``reports`` holds SelectionReports or
    plain iterables of ``(snp_index, "additive"|"dominant")`` pairs."""
    reports = list(reports)
    if not reports:
        raise ValueError("no replicates to score")
    counts = {"underfit": 0, "correctfit": 0, "overfit": 0}
    C = IC = 0
    for rep in reports:
        blocks = rep.selected_blocks() if hasattr(rep, "selected_blocks") else rep
        cap, nul, bucket = classify_selection(blocks, design)
        C += cap
        IC += nul
        counts[bucket] += 1
    R = len(reports)
    # exact rationals so the three proportions sum to exactly 1
    return SimMetrics(C / R, IC / R, Fraction(counts["underfit"], R),
                      Fraction(counts["correctfit"], R), Fraction(counts["overfit"], R), R)
