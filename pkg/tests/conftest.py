import numpy as np
import pytest

from fgwas.model import GenotypeMatrix, Hyperparameters, LongitudinalDataset, ParameterState


def make_dataset(n=12, p=3, q=1, v=3, T=(3, 6), seed=0, rho=0.3, sigma2=1.0):
    """Small irregular-grid dataset with random responses."""
    rng = np.random.default_rng(seed)
    times = []
    for _ in range(n):
        k = int(rng.integers(T[0], T[1] + 1))
        times.append(np.sort(rng.choice(np.arange(0, 100), size=k, replace=False)) * 0.5)
    ys = [rng.normal(size=len(t)) * np.sqrt(sigma2) for t in times]
    xi = rng.choice([-1.0, 0.0, 1.0], size=(n, p))
    X = rng.integers(0, 2, size=(n, q)).astype(float) if q else np.zeros((n, 0))
    return LongitudinalDataset.from_arrays(times, ys, X, GenotypeMatrix.from_additive(xi), v,
                                           time_range=(0.0, 50.0))


def random_state(dataset, seed=1, rho=0.3, sigma2=1.3):
    rng = np.random.default_rng(seed)
    v, q, p = dataset.v, dataset.q, dataset.p
    st = ParameterState.zeros(v, q, p)
    st.m = rng.normal(size=v)
    st.r = rng.normal(size=(q, v))
    st.b = rng.normal(size=(p, v))
    st.c = rng.normal(size=(p, v))
    st.tau2 = rng.gamma(2.0, 0.5, size=p)
    st.tau2_star = rng.gamma(2.0, 0.5, size=p)
    st.lambda2, st.lambda2_star = 1.7, 0.6
    st.sigma2, st.rho = sigma2, rho
    return st


@pytest.fixture
def small():
    ds = make_dataset()
    return ds, random_state(ds), Hyperparameters.default(ds.v)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
