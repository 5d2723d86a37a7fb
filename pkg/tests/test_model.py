import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from conftest import make_dataset, random_state
from fgwas.basis import legendre_values
from fgwas.covariance import correlation_matrix
from fgwas.model import (
    GenotypeMatrix,
    Hyperparameters,
    LongitudinalDataset,
    ParameterState,
    UnencodableSNPError,
    UnknownBlockError,
    block_contribution,
    decode_genotypes,
    encode_genotypes,
    log_likelihood,
    mean_vector,
    partial_residual,
)


def test_genotype_coding_table():
    g = encode_genotypes([["AA", "Aa", "aa"]])
    np.testing.assert_array_equal(g.additive, [[1, 0, -1]])
    np.testing.assert_array_equal(g.dominant, [[0, 1, 0]])
    g = encode_genotypes([["AA"], ["AA"], ["aa"]])
    np.testing.assert_array_equal(g.additive[:, 0], [1, 1, -1])
    np.testing.assert_array_equal(g.dominant[:, 0], [0, 0, 0])


def test_imputation_draws_from_empirical_frequencies():
    draws = [encode_genotypes([["AA"], [None], ["aa"]], seed=s).additive[1, 0] for s in range(2000)]
    draws = np.array(draws)
    assert set(np.unique(draws)) == {-1.0, 1.0}
    assert abs(np.mean(draws == 1.0) - 0.5) < 4 * math.sqrt(0.25 / 2000)


def test_all_missing_snp_is_unencodable():
    with pytest.raises(UnencodableSNPError):
        encode_genotypes([["AA", "NA"], ["Aa", "NA"]])


@given(st.lists(st.lists(st.sampled_from(["AA", "Aa", "aa"]), min_size=3, max_size=3), min_size=1, max_size=10))
def test_decode_inverts_encode(calls):
    calls = np.array(calls, dtype=object)
    np.testing.assert_array_equal(decode_genotypes(encode_genotypes(calls)), calls)


def test_minor_orientation_flips_major_coded_snps():
    g = encode_genotypes([["AA"], ["AA"], ["Aa"], ["aa"]], orient_minor=True)
    assert g.additive[:, 0].mean() < 0


def test_dominant_code_must_mark_heterozygotes():
    with pytest.raises(ValueError):
        GenotypeMatrix(np.array([[1.0]]), np.array([[1.0]]), ("s",), np.array([0.5]))


def naive_mean(state, ds, i):
    s = ds.subjects[i]
    U = legendre_values(s.grid.standardized_times, ds.v)
    out = np.zeros(s.T)
    for l in range(s.T):
        for a in range(ds.v):
            coef = state.m[a]
            for k in range(ds.q):
                coef += s.covariates[k] * state.r[k, a]
            for j in range(ds.p):
                coef += ds.genotypes.additive[i, j] * state.b[j, a]
                coef += ds.genotypes.dominant[i, j] * state.c[j, a]
            out[l] += U[l, a] * coef
    return out


def test_mean_vector_matches_naive_loop():
    ds = make_dataset(n=6, p=4, q=2, v=4)
    st_ = random_state(ds)
    for i in range(ds.n):
        np.testing.assert_allclose(mean_vector(st_, ds, i), naive_mean(st_, ds, i), atol=1e-12)


def test_mean_only_model_and_zero_state():
    ds = make_dataset(n=3, p=2, q=1, v=4)
    st_ = ParameterState.zeros(4, 1, 2)
    assert np.all(mean_vector(st_, ds, 0) == 0)
    st_.m = np.array([2.0, 0, 0, 0])
    np.testing.assert_allclose(mean_vector(st_, ds, 1), 2.0)
    np.testing.assert_allclose(partial_residual(st_, ds, 1, "m"), ds.subjects[1].y)


def test_partial_residual_reconstruction():
    ds = make_dataset(n=5, p=3, q=2, v=3)
    st_ = random_state(ds)
    for i in range(ds.n):
        mu = mean_vector(st_, ds, i)
        for block in ["m", ("r", 1), ("b", 2), ("c", 0)]:
            rebuilt = ds.subjects[i].y - partial_residual(st_, ds, i, block) + block_contribution(st_, ds, i, block)
            np.testing.assert_allclose(rebuilt, mu, atol=1e-12)
    st_.b[1] = 0.0
    np.testing.assert_allclose(partial_residual(st_, ds, 0, ("b", 1)), ds.subjects[0].y - mean_vector(st_, ds, 0))
    with pytest.raises(UnknownBlockError):
        partial_residual(st_, ds, 0, ("b", 9))
    with pytest.raises(UnknownBlockError):
        partial_residual(st_, ds, 0, "tau")


def test_mean_is_linear_in_each_block():
    ds = make_dataset(n=4, p=3, q=1, v=3)
    s1, s2 = random_state(ds, seed=1), random_state(ds, seed=2)
    mix = s1.copy()
    for name in ("m", "r", "b", "c"):
        setattr(mix, name, 2.0 * getattr(s1, name) - 3.0 * getattr(s2, name))
    for i in range(ds.n):
        np.testing.assert_allclose(mean_vector(mix, ds, i),
                                   2.0 * mean_vector(s1, ds, i) - 3.0 * mean_vector(s2, ds, i), atol=1e-12)


def test_log_likelihood_trivial_cases():
    g = GenotypeMatrix.from_additive(np.array([[0.0]]))
    ds = LongitudinalDataset.from_arrays([[1.0]], [[0.0]], np.zeros((1, 0)), g, 1, time_range=(0, 2))
    st_ = ParameterState.zeros(1, 0, 1)
    assert log_likelihood(st_, ds) == pytest.approx(-0.5 * math.log(2 * math.pi))
    ds2 = LongitudinalDataset.from_arrays([[0.0, 1.0]], [[0.3, -1.1]], np.zeros((1, 0)), g, 1, time_range=(0, 2))
    st_.rho = 1e-300
    expected = sum(-0.5 * math.log(2 * math.pi) - 0.5 * y * y for y in (0.3, -1.1))
    assert log_likelihood(st_, ds2) == pytest.approx(expected, abs=1e-12)


def test_log_likelihood_matches_dense_mvn():
    ds = make_dataset(n=7, p=2, q=1, v=3)
    st_ = random_state(ds, rho=0.45, sigma2=2.2)
    ref = 0.0
    for i, s in enumerate(ds.subjects):
        cov = st_.sigma2 * correlation_matrix(st_.rho, s.grid)
        ref += multivariate_normal(mean_vector(st_, ds, i), cov).logpdf(s.y)
    assert log_likelihood(st_, ds) == pytest.approx(ref, abs=1e-10)


@settings(max_examples=30)
@given(st.integers(0, 5), st.floats(-2, 2).filter(lambda d: abs(d) > 1e-6))
def test_exact_fit_is_local_optimum(l, delta):
    g = GenotypeMatrix.from_additive(np.array([[1.0]]))
    t = np.linspace(0, 5, 6)
    ds = LongitudinalDataset.from_arrays([t], [np.full(6, 3.0)], np.zeros((1, 0)), g, 1)
    st_ = ParameterState.zeros(1, 0, 1)
    st_.m = np.array([3.0])
    best = log_likelihood(st_, ds)
    y = np.full(6, 3.0)
    y[l] += delta
    assert log_likelihood(st_, ds.with_responses([y])) < best


def test_state_and_hyper_validation():
    st_ = ParameterState.zeros(2, 0, 1)
    st_.rho = 1.0
    with pytest.raises(ValueError):
        st_.check()
    with pytest.raises(ValueError):
        Hyperparameters(np.eye(2), -np.eye(2))
    with pytest.raises(ValueError):
        Hyperparameters.default(2, a=0.0)
    h = Hyperparameters.default(3)
    np.testing.assert_array_equal(h.Sigma_m0, 1e4 * np.eye(3))
    assert (h.a, h.b, h.a_star, h.b_star) == (0.01, 0.01, 0.01, 0.01)


def test_strict_validation_rejects_single_measurement():
    g = GenotypeMatrix.from_additive(np.array([[1.0], [0.0]]))
    ds = LongitudinalDataset.from_arrays([[1.0], [1.0, 2.0]], [[0.0], [0.0, 1.0]], np.zeros((2, 0)), g, 2,
                                         time_range=(0, 3))
    assert len(ds.validate()) == 1
    with pytest.raises(ValueError):
        ds.validate(strict=True)
