import math

import numpy as np
import pytest
from scipy import stats

from conftest import make_dataset, random_state
from fgwas.basis import legendre_values
from fgwas.covariance import correlation_matrix, gamma_logdet, gamma_quadratic
from fgwas.model import GenotypeMatrix, Hyperparameters, LongitudinalDataset, ParameterState
from fgwas.sampler import conditionals as C
from fgwas.sampler.distributions import ig_transform
from fgwas.sampler.engine import GibbsChain, PackedData

ALL = {"m", "r", "b", "c", "tau2", "tau2_star", "lambda2", "lambda2_star", "sigma2", "rho"}


# -- dense oracle ------------------------------------------------------------

def dense_block_posterior(state, ds, design_weight, prior_prec, exclude):
    """Posterior (mean, cov) of one block by explicit dense matrices.

    ``design_weight[i]`` multiplies U_i; ``exclude(state)`` returns a copy of
    the state with the block zeroed, so the partial mean is the full mean of it.
    """
    s0 = exclude(state)
    P = prior_prec.copy()
    lin = np.zeros(ds.v)
    for i, s in enumerate(ds.subjects):
        U = legendre_values(s.grid.standardized_times, ds.v)
        Sigma = state.sigma2 * correlation_matrix(state.rho, s.grid)
        Si = np.linalg.inv(Sigma)
        theta = s0.m + s.covariates @ s0.r + ds.genotypes.additive[i] @ s0.b + ds.genotypes.dominant[i] @ s0.c
        D = design_weight[i] * U
        P += D.T @ Si @ D
        lin += D.T @ Si @ (s.y - U @ theta)
    cov = np.linalg.inv(P)
    return cov @ lin, cov


def zeroed(name, index=None):
    def f(state):
        s = state.copy()
        arr = getattr(s, name)
        if index is None:
            arr[:] = 0.0
        else:
            arr[index] = 0.0
        return s
    return f


@pytest.fixture
def tiny():
    ds = make_dataset(n=10, p=2, q=1, v=3, seed=4)
    return ds, random_state(ds, seed=5, rho=0.35, sigma2=0.8), Hyperparameters.default(3)


def test_block_posteriors_match_dense_oracle(tiny):
    ds, st, h = tiny
    mean, cov = C.mean_block_posterior(st, ds, h)
    ref = dense_block_posterior(st, ds, np.ones(ds.n), np.linalg.inv(h.Sigma_m0), zeroed("m"))
    np.testing.assert_allclose(mean, ref[0], atol=1e-8)
    np.testing.assert_allclose(cov, ref[1], atol=1e-10)

    mean, cov = C.covariate_block_posterior(st, ds, h, 0)
    ref = dense_block_posterior(st, ds, ds.X[:, 0], np.linalg.inv(h.Sigma_r0), zeroed("r", 0))
    np.testing.assert_allclose(mean, ref[0], atol=1e-8)

    for j in range(ds.p):
        prec = np.eye(3) / (st.sigma2 * st.tau2[j])
        mean, cov = C.group_block_posterior(st, ds, j, "additive")
        ref = dense_block_posterior(st, ds, ds.genotypes.additive[:, j], prec, zeroed("b", j))
        np.testing.assert_allclose(mean, ref[0], atol=1e-8)
        np.testing.assert_allclose(cov, ref[1], atol=1e-10)
        prec = np.eye(3) / (st.sigma2 * st.tau2_star[j])
        mean, cov = C.group_block_posterior(st, ds, j, "dominant")
        ref = dense_block_posterior(st, ds, ds.genotypes.dominant[:, j], prec, zeroed("c", j))
        np.testing.assert_allclose(mean, ref[0], atol=1e-8)


def moment_check(draws, mean, cov, k=3.0):
    N = draws.shape[0]
    se = np.sqrt(np.diag(cov) / N)
    assert np.all(np.abs(draws.mean(axis=0) - mean) < k * se)
    d = np.diag(cov)
    se_cov = np.sqrt((np.outer(d, d) + cov**2) / N)
    assert np.all(np.abs(np.cov(draws.T) - cov) < k * se_cov)


@pytest.mark.parametrize("block", ["m", "r", "b", "c"])
def test_engine_block_draws_match_closed_form_moments(tiny, block):
    ds, st, h = tiny
    j = 1
    active_add = np.array([block != "b" or k == j for k in range(ds.p)])
    active_dom = np.array([block != "c" or k == j for k in range(ds.p)])
    st = st.copy()
    st.b[~active_add] = 0.0
    st.c[~active_dom] = 0.0
    if block == "m":
        mean, cov = C.mean_block_posterior(st, ds, h)
    elif block == "r":
        mean, cov = C.covariate_block_posterior(st, ds, h, 0)
    elif block == "b":
        mean, cov = C.group_block_posterior(st, ds, j, "additive")
    else:
        mean, cov = C.group_block_posterior(st, ds, j, "dominant")
    ch = GibbsChain(PackedData.from_dataset(ds), h, st, np.random.default_rng(11),
                    frozen=ALL - {block}, active_add=active_add, active_dom=active_dom)
    N = 100_000
    out = np.empty((N, ds.v))
    for s in range(N):
        ch.sweep()
        if block == "m":
            out[s] = ch.m
        elif block == "r":
            out[s] = ch.r[0]
        elif block == "b":
            out[s] = ch.b[j]
        else:
            out[s] = ch.c[j]
    moment_check(out, mean, cov)


def test_no_data_gives_prior():
    g = GenotypeMatrix(np.zeros((0, 1)), np.zeros((0, 1)), ("s",), np.array([0.3]))
    ds = LongitudinalDataset((), g, 2, ("x",))
    st = ParameterState.zeros(2, 1, 1)
    h = Hyperparameters(np.diag([2.0, 3.0]), np.eye(2))
    mean, cov = C.mean_block_posterior(st, ds, h)
    np.testing.assert_array_equal(mean, 0.0)
    np.testing.assert_allclose(cov, h.Sigma_m0)
    assert C.shrinkage_parameters(st, h) == (h.a + 1 * 3 / 2.0, h.b + 2 * 1.0 / 2.0)


def test_flat_prior_single_subject_least_squares():
    g = GenotypeMatrix.from_additive(np.array([[0.0]]))
    ds = LongitudinalDataset.from_arrays([[0.0, 1.0]], [[1.5, -0.5]], np.zeros((1, 0)), g, 2)
    st = ParameterState.zeros(2, 0, 1)
    st.rho = 1e-300
    h = Hyperparameters(1e12 * np.eye(2), np.eye(2))
    mean, _ = C.mean_block_posterior(st, ds, h)
    # U = [[1, -1], [1, 1]] is square, so least squares interpolates y
    np.testing.assert_allclose(np.array([[1, -1], [1, 1]]) @ mean, [1.5, -0.5], atol=1e-9)


def test_covariate_block_trivial_designs(tiny):
    ds, st, h = tiny
    ds0 = LongitudinalDataset([type(s)(s.grid, s.y, np.zeros(1), s.subject_id) for s in ds.subjects],
                              ds.genotypes, ds.v)
    mean, cov = C.covariate_block_posterior(st, ds0, h, 0)
    np.testing.assert_array_equal(mean, 0.0)
    np.testing.assert_allclose(cov, h.Sigma_r0)
    # X = 1 everywhere: the r block is a second intercept, so swapping m and r
    # turns its conditional into the mean-block conditional
    ds1 = LongitudinalDataset([type(s)(s.grid, s.y, np.ones(1), s.subject_id) for s in ds.subjects],
                              ds.genotypes, ds.v)
    h1 = Hyperparameters(h.Sigma_r0, h.Sigma_r0)
    swapped = st.copy()
    swapped.m, swapped.r = st.r[0].copy(), st.m[None, :].copy()
    a = C.covariate_block_posterior(st, ds1, h1, 0)
    b = C.mean_block_posterior(swapped, ds1, h1)
    np.testing.assert_allclose(a[0], b[0], atol=1e-10)
    np.testing.assert_allclose(a[1], b[1], atol=1e-10)


def test_monomorphic_snp_posterior_is_prior(tiny):
    ds, st, _ = tiny
    xi = ds.genotypes.additive.copy()
    xi[:, 0] = 0.0
    ds2 = ds.with_genotypes(GenotypeMatrix.from_additive(xi))
    mean, cov = C.group_block_posterior(st, ds2, 0, "additive")
    np.testing.assert_array_equal(mean, 0.0)
    np.testing.assert_allclose(cov, st.sigma2 * st.tau2[0] * np.eye(3))


def test_large_scale_limit_is_refit_prior(tiny):
    ds, st, _ = tiny
    st = st.copy()
    st.tau2[0] = 1e8 / st.sigma2
    a = C.group_block_posterior(st, ds, 0, "additive")
    b = C.group_block_posterior(st, ds, 0, "additive", prior_var=1e8)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-10)


def test_block_draws_do_not_touch_state(tiny):
    ds, st, h = tiny
    before = st.copy()
    rng = np.random.default_rng(0)
    C.draw_mean_block(st, ds, h, rng)
    C.draw_covariate_block(st, ds, h, rng, 0)
    C.draw_additive_block(st, ds, rng, 1)
    C.draw_dominant_block(st, ds, rng, 0)
    C.draw_group_scale(st, rng, 0, "dominant")
    C.draw_shrinkage(st, h, rng)
    C.draw_sigma2(st, ds, rng)
    C.draw_rho(st, ds, rng, 0.1)
    for name in ("m", "r", "b", "c", "tau2", "tau2_star"):
        np.testing.assert_array_equal(getattr(st, name), getattr(before, name))
    assert (st.sigma2, st.rho, st.lambda2) == (before.sigma2, before.rho, before.lambda2)


def test_engine_leaves_frozen_blocks_untouched(tiny):
    ds, st, h = tiny
    ch = GibbsChain(PackedData.from_dataset(ds), h, st, np.random.default_rng(2), frozen=ALL - {"b", "tau2"})
    for _ in range(5):
        ch.sweep()
    out = ch.state()
    for name in ("m", "r", "c", "tau2_star"):
        np.testing.assert_array_equal(getattr(out, name), getattr(st, name))
    assert (out.sigma2, out.rho, out.lambda2, out.lambda2_star) == (st.sigma2, st.rho, st.lambda2, st.lambda2_star)
    assert not np.array_equal(out.b, st.b)


def test_engine_sweep_equals_functional_route():
    """Replay one full sweep with the engine's random numbers through the
    slow functional conditionals."""
    ds = make_dataset(n=15, p=4, q=2, v=3, seed=9)
    st = random_state(ds, seed=3, rho=0.5, sigma2=1.3)
    h = Hyperparameters.default(3, sigma2_df=2.0, sigma2_scale=0.7)
    ch = GibbsChain(PackedData.from_dataset(ds), h, st, np.random.default_rng(0), rho_step=0.2)
    ch.sweep()

    v, q, p = ds.v, ds.q, ds.p
    rng = np.random.default_rng(0)
    z = rng.standard_normal(v + q * v + 2 * p * v + 2 * p)
    u = rng.random(2 * p)
    o = 0
    z_m = z[o:o + v]; o += v
    z_r = z[o:o + q * v].reshape(q, v); o += q * v
    z_b = z[o:o + p * v].reshape(p, v); o += p * v
    z_c = z[o:o + p * v].reshape(p, v); o += p * v
    nu_b, nu_c = z[o:o + p], z[o + p:o + 2 * p]

    s = st.copy()
    s.m = C.mvn_from_precision(*_precision_form(C.mean_block_posterior(s, ds, h)), z_m)
    for k in range(q):
        s.r[k] = C.mvn_from_precision(*_precision_form(C.covariate_block_posterior(s, ds, h, k)), z_r[k])
    for j in range(p):
        s.b[j] = C.mvn_from_precision(*_precision_form(C.group_block_posterior(s, ds, j, "additive")), z_b[j])
        mean, shape = C.group_scale_parameters(s, j, "additive")
        s.tau2[j] = C.scale_from_variate(ig_transform(mean, shape, nu_b[j], u[j]))
    for j in range(p):
        s.c[j] = C.mvn_from_precision(*_precision_form(C.group_block_posterior(s, ds, j, "dominant")), z_c[j])
        mean, shape = C.group_scale_parameters(s, j, "dominant")
        s.tau2_star[j] = C.scale_from_variate(ig_transform(mean, shape, nu_c[j], u[p + j]))
    shape, rate = C.shrinkage_parameters(s, h, "additive")
    s.lambda2 = rng.gamma(shape, 1.0 / rate)
    shape, rate = C.shrinkage_parameters(s, h, "dominant")
    s.lambda2_star = rng.gamma(shape, 1.0 / rate)
    df, scale = C.sigma2_parameters(s, ds, h)
    s.sigma2 = df * scale / rng.chisquare(df)
    prop = C.reflect_unit(s.rho + rng.uniform(-0.2, 0.2))
    if math.log(rng.random()) < C.rho_log_target(prop, s, ds) - C.rho_log_target(s.rho, s, ds):
        s.rho = prop

    out = ch.state()
    for name in ("m", "r", "b", "c", "tau2", "tau2_star"):
        np.testing.assert_allclose(getattr(out, name), getattr(s, name), rtol=1e-9, atol=1e-10)
    for name in ("lambda2", "lambda2_star", "sigma2", "rho"):
        assert getattr(out, name) == pytest.approx(getattr(s, name), rel=1e-9)


def _precision_form(posterior):
    mean, cov = posterior
    P = np.linalg.inv(cov)
    return 0.5 * (P + P.T), P @ mean


def test_engine_caches_stay_consistent(tiny):
    ds, st, h = tiny
    ch = GibbsChain(PackedData.from_dataset(ds), h, st, np.random.default_rng(1), rho_step=0.3)
    for _ in range(50):
        ch.sweep()
    out = ch.state()
    R = ch.R.copy()
    ch._refresh(ch.rho)
    np.testing.assert_allclose(R, ch.R, atol=1e-9)
    assert ch.residual_quadratic() == pytest.approx(C.residual_quadratic(out, ds), rel=1e-10)


def test_scale_draw_clamps_zero_norm():
    st = ParameterState.zeros(4, 0, 2)
    mean, shape = C.group_scale_parameters(st, 0, "additive")
    assert mean == C.IG_MEAN_CEILING and shape == 4.0
    assert np.isfinite(C.draw_group_scale(st, np.random.default_rng(0), 0))


def test_dominant_scale_uses_dominant_norm():
    st = ParameterState.zeros(2, 0, 1)
    st.b[0] = [3.0, 4.0]
    st.c[0] = [0.6, 0.8]
    st.sigma2, st.lambda2_star = 2.0, 1.5
    mean, shape = C.group_scale_parameters(st, 0, "dominant")
    assert mean == pytest.approx(math.sqrt(2 * 1.5 * 2.0 / 1.0))
    assert shape == pytest.approx(3.0)


def test_shrinkage_shape_counts_coefficients_and_groups():
    st = ParameterState.zeros(4, 0, 3000)
    shape, rate = C.shrinkage_parameters(st, Hyperparameters.default(4))
    assert shape == pytest.approx(7500.01)
    assert rate == pytest.approx(0.01 + 4 * 3000 / 2)


def test_shrinkage_draws_follow_gamma(tiny):
    ds, st, h = tiny
    rng = np.random.default_rng(8)
    draws = np.array([C.draw_shrinkage(st, h, rng, "dominant") for _ in range(3000)])
    shape, rate = C.shrinkage_parameters(st, h, "dominant")
    assert stats.kstest(draws, stats.gamma(shape, scale=1.0 / rate).cdf).pvalue > 0.01


def test_sigma2_draws_follow_scaled_inverse_chi2(tiny):
    ds, st, h = tiny
    rng = np.random.default_rng(9)
    draws = np.array([C.draw_sigma2(st, ds, rng, penalized=False) for _ in range(1500)])
    df, scale = C.sigma2_parameters(st, ds, penalized=False)
    assert df == ds.n_obs
    assert stats.kstest(draws, stats.invgamma(df / 2, scale=df * scale / 2).cdf).pvalue > 0.01


def test_sigma2_floor_on_exact_fit():
    g = GenotypeMatrix.from_additive(np.array([[1.0]]))
    ds = LongitudinalDataset.from_arrays([[1.0]], [[2.0]], np.zeros((1, 0)), g, 1, time_range=(0, 2))
    st = ParameterState.zeros(1, 0, 1)
    st.m = np.array([2.0])
    df, scale = C.sigma2_parameters(st, ds, penalized=False)
    assert (df, scale) == (1, C.SS_FLOOR)


def test_rho_zero_step_always_accepts(tiny):
    ds, st, _ = tiny
    rng = np.random.default_rng(0)
    for _ in range(20):
        rho, acc = C.draw_rho(st, ds, rng, 0.0)
        assert acc and rho == st.rho


def test_rho_flat_likelihood_is_uniform():
    g = GenotypeMatrix(np.zeros((0, 1)), np.zeros((0, 1)), ("s",), np.array([0.3]))
    ds = LongitudinalDataset((), g, 2)
    st = ParameterState.zeros(2, 0, 1)
    rng = np.random.default_rng(4)
    trace, accepted = [], 0
    for s in range(40000):
        st.rho, acc = C.draw_rho(st, ds, rng, 0.4)
        accepted += acc
        if s % 20 == 0:
            trace.append(st.rho)
    assert accepted == 40000
    assert stats.kstest(trace, "uniform").pvalue > 0.001


def test_rho_log_ratio_matches_dense(tiny):
    ds, st, _ = tiny
    fast = C.rho_log_target(0.7, st, ds) - C.rho_log_target(0.2, st, ds)
    from fgwas.model import mean_vector
    dense = 0.0
    for i, s in enumerate(ds.subjects):
        e = s.y - mean_vector(st, ds, i)
        for rho, sign in ((0.7, 1.0), (0.2, -1.0)):
            G = correlation_matrix(rho, s.grid)
            dense += sign * (-0.5 * np.linalg.slogdet(G)[1] - 0.5 * e @ np.linalg.solve(G, e) / st.sigma2)
    assert fast == pytest.approx(dense, abs=1e-8)
    assert gamma_logdet(0.7, ds.subjects[0].grid) < 0
    assert gamma_quadratic(0.7, ds.subjects[0].grid, ds.subjects[0].y, ds.subjects[0].y) > 0


def test_rho_recovered_with_other_parameters_at_truth():
    rng = np.random.default_rng(21)
    n, T = 200, 10
    from fgwas.covariance import simulate_ar1
    from fgwas.basis import standardize_times
    grid = standardize_times(np.arange(T, dtype=float), (0.0, T - 1.0))
    ys = [simulate_ar1(0.4, 1.0, grid, rng) for _ in range(n)]
    g = GenotypeMatrix.from_additive(rng.choice([-1.0, 0.0, 1.0], size=(n, 1)))
    ds = LongitudinalDataset.from_arrays([np.arange(T, dtype=float)] * n, ys, np.zeros((n, 0)), g, 1)
    st = ParameterState.zeros(1, 0, 1)
    st.sigma2, st.rho = 1.0, 0.2
    ch = GibbsChain(PackedData.from_dataset(ds), Hyperparameters.default(1), st, np.random.default_rng(0),
                    frozen=ALL - {"rho"}, rho_step=0.1)
    trace = []
    for s in range(3000):
        ch.sweep()
        if s >= 500:
            trace.append(ch.rho)
    assert abs(np.mean(trace) - 0.4) < 0.05


def test_shrinkage_increase_shrinks_null_group():
    ds = make_dataset(n=40, p=2, q=0, v=3, seed=12)
    st = ParameterState.zeros(3, 0, 2)
    st.sigma2, st.rho = 1.0, 0.3
    norms = []
    for lam2 in (1.0, 100.0):
        s = st.copy()
        s.lambda2 = lam2
        ch = GibbsChain(PackedData.from_dataset(ds), Hyperparameters.default(3), s, np.random.default_rng(5),
                        frozen=ALL - {"b", "tau2"})
        acc = []
        for k in range(6000):
            ch.sweep()
            if k >= 500:
                acc.append(np.linalg.norm(ch.b[0]))
        norms.append(np.mean(acc))
    assert norms[1] < 0.7 * norms[0]
