import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import draw_stationary
from underreport.exceptions import DomainError
from underreport.model import ModelParams, ObservationSpec, TimeVaryingParams, seasonal_path, simulate_latent, thin_series
from underreport.moments import (MomentSummary, aggregate_moments, aggregate_path, empirical_moments,
                                 latent_moment_path, observed_moments, stationary_moments, stationary_var_lambda,
                                 thin_moments, thin_path, timevarying_moment_path)


def _constant_tv(params: ModelParams, n: int) -> TimeVaryingParams:
    return TimeVaryingParams(np.full(n, params.nu), np.full(n, params.phi), params.kappa, params.psi,
                             params.lambda1 if params.lambda1 is not None else params.nu / (1 - params.xi))


# --- closed forms ------------------------------------------------------------------------------


def test_benchmark_values(benchmark_params):
    m = stationary_moments(benchmark_params)
    assert m.mu == pytest.approx(50.0, rel=1e-14)
    assert m.sigma2 == pytest.approx(0.67 / 0.494 * 300, rel=1e-14)
    assert math.sqrt(m.sigma2) == pytest.approx(20.17, abs=0.005)
    assert m.eta_prime == pytest.approx(0.4 * 0.79 / 0.67, rel=1e-14)
    assert m.xi_prime == pytest.approx(0.7, rel=1e-14)


def test_thinned_benchmark_values(benchmark_params):
    m = thin_moments(stationary_moments(benchmark_params), 0.5)
    assert m.mu == pytest.approx(25.0)
    assert m.sigma2 == pytest.approx(114.22, abs=0.01)
    assert m.xi_prime == pytest.approx(0.7)


def test_thinning_identity_and_composition(benchmark_params):
    m = stationary_moments(benchmark_params)
    assert thin_moments(m, 1.0) == m
    twice = thin_moments(thin_moments(m, 0.5), 0.4)
    once = thin_moments(m, 0.2)
    np.testing.assert_allclose([twice.mu, twice.sigma2, twice.eta_prime, twice.xi_prime],
                               [once.mu, once.sigma2, once.eta_prime, once.xi_prime], rtol=1e-12)


def test_nonstationary_raises():
    with pytest.raises(DomainError):
        stationary_moments(ModelParams(1, 0.6, 0.39, 0.5))


def test_summary_validation():
    with pytest.raises(DomainError):
        MomentSummary(1.0, 1.0, 1.0, 0.5)
    with pytest.raises(DomainError):
        MomentSummary(-1.0, 1.0, 0.1, 0.5)


def test_iid_case_has_zero_acf():
    m = stationary_moments(ModelParams(10.0, 0.0, 0.0, 0.2))
    assert m.eta_prime == 0 and m.sigma2 == pytest.approx(10 + 0.2 * 100)


# --- independent oracles -----------------------------------------------------------------------


@given(seed=st.integers(0, 2 ** 31))
def test_stationary_moments_are_fixed_point_of_recursion(seed):
    # long-horizon limit of the exact time-varying recursion started far from equilibrium
    p = draw_stationary(np.random.default_rng(seed), 1, kappa_range=(0.0, 0.6))[0]
    start_far = TimeVaryingParams(np.full(3000, p.nu), np.full(3000, p.phi), p.kappa, p.psi, 1.0)
    path = latent_moment_path(start_far, max_lag=4)
    m = stationary_moments(p)
    assert path.mu_t[-1] == pytest.approx(m.mu, rel=1e-8)
    assert path.var_t[-1] == pytest.approx(m.sigma2, rel=1e-6)
    np.testing.assert_allclose(path.autocov[-1], m.autocov(np.arange(1, 5)), rtol=1e-6)
    assert path.var_lambda[-1] == pytest.approx(stationary_var_lambda(p), rel=1e-6)


@given(seed=st.integers(0, 2 ** 31), pi=st.floats(0.05, 1.0))
def test_aggregated_moments_by_summing_autocovariances(seed, pi):
    p = draw_stationary(np.random.default_rng(seed), 1)[0]
    lat = thin_moments(stationary_moments(p), pi)
    gamma = lambda d: lat.sigma2 if d == 0 else lat.autocov(abs(d))
    agg = aggregate_moments(lat)
    var = 2 * gamma(0) + 2 * gamma(1)
    cov = [gamma(2 * d - 1) + 2 * gamma(2 * d) + gamma(2 * d + 1) for d in (1, 2, 3)]
    assert agg.mu == pytest.approx(2 * lat.mu)
    assert agg.sigma2 == pytest.approx(var, rel=1e-12)
    np.testing.assert_allclose(agg.autocov(np.array([1, 2, 3])), cov, rtol=1e-10)


def test_stationary_moments_monte_carlo(benchmark_params):
    x, _ = simulate_latent(benchmark_params, 400_000, seed=21)
    v = x.values.astype(float)
    m = stationary_moments(benchmark_params)
    # batch means for the standard error of a dependent series
    batches = v[: 400 * 1000].reshape(400, 1000)
    se = batches.mean(axis=1).std(ddof=1) / math.sqrt(400)
    assert abs(v.mean() - m.mu) < 4 * se
    assert v.var() == pytest.approx(m.sigma2, rel=0.03)


def test_observed_moments_monte_carlo(benchmark_params):
    x, _ = simulate_latent(benchmark_params, 200_000, seed=22)
    spec = ObservationSpec(0.3, 2)
    y = thin_series(x, spec, seed=23).values.astype(float)
    m = observed_moments(benchmark_params, spec)
    assert y.mean() == pytest.approx(m.mu, rel=0.01)
    assert y.var() == pytest.approx(m.sigma2, rel=0.03)
    yc = y - y.mean()
    r = [np.mean(yc[d:] * yc[:-d]) / np.mean(yc ** 2) for d in (1, 2)]
    np.testing.assert_allclose(r, m.acf(np.array([1, 2])), atol=0.02)


def test_empirical_moments_clamps():
    m = empirical_moments(np.full(20, 4))
    assert m.mu == 4 and m.sigma2 == 0
    x, _ = simulate_latent(ModelParams(15.0, 0.4, 0.3, 0.1), 5000, seed=3)
    e = empirical_moments(x.values)
    assert 0 <= e.eta_prime <= e.xi_prime <= 0.95


# --- time-varying paths ----------------------------------------------------------------------


def test_stationary_start_reproduces_constant_moments(benchmark_params):
    path = latent_moment_path(_constant_tv(benchmark_params, 50), max_lag=5, init="stationary")
    m = stationary_moments(benchmark_params)
    np.testing.assert_allclose(path.mu_t, m.mu, rtol=1e-12)
    np.testing.assert_allclose(path.var_t, m.sigma2, rtol=1e-12)
    np.testing.assert_allclose(path.autocov, np.tile(m.autocov(np.arange(1, 6)), (50, 1)), rtol=1e-12)


@pytest.mark.parametrize("pi", [1.0, 0.3])
def test_observed_path_reduces_to_stationary(benchmark_params, pi):
    spec = ObservationSpec(pi, 2)
    path = timevarying_moment_path(_constant_tv(benchmark_params, 60), spec, max_lag=3, init="stationary")
    m = observed_moments(benchmark_params, spec)
    np.testing.assert_allclose(path.mu_t, m.mu, rtol=1e-12)
    np.testing.assert_allclose(path.var_t, m.sigma2, rtol=1e-12)
    np.testing.assert_allclose(path.autocov[5:], np.tile(m.autocov(np.arange(1, 4)), (25, 1)), rtol=1e-10)
    np.testing.assert_allclose(path.decay, m.xi_prime, rtol=1e-12)


def test_decay_describes_higher_lags():
    n = 120
    tv = TimeVaryingParams(seasonal_path(math.log(8), 0.3, 0.1, n), seasonal_path(math.log(0.5), 0.1, 0.1, n),
                           0.35, 0.05, 20.0)
    pi = np.linspace(0.2, 0.6, n)
    for agg in (1, 2):
        path = timevarying_moment_path(tv, ObservationSpec(pi, agg), max_lag=6)
        c = path.autocov
        for t in range(8, len(path)):
            # Cov(X_{t-d}, X_t) = D_t Cov(X_{t-d}, X_{t-1}) for d >= 2
            np.testing.assert_allclose(c[t, 1:], path.decay[t] * c[t - 1, :-1], rtol=1e-10)


def test_pi_ramp_scales_the_mean():
    n = 80
    tv = TimeVaryingParams(np.linspace(5, 15, n), np.full(n, 0.4), 0.3, 0.1, 30.0)
    pi = np.linspace(0.1, 0.9, n)
    latent = latent_moment_path(tv, 3)
    observed = thin_path(latent, pi)
    np.testing.assert_allclose(observed.mu_t, pi * latent.mu_t, rtol=1e-14)
    agg = aggregate_path(thin_path(latent_moment_path(tv, 7), pi), 3)
    np.testing.assert_allclose(agg.mu_t, (pi * latent.mu_t).reshape(-1, 2).sum(axis=1), rtol=1e-14)


def test_aggregate_path_needs_wide_band():
    path = latent_moment_path(TimeVaryingParams(np.ones(10), np.full(10, 0.2), 0.1, 0.1, 1.0), 4)
    with pytest.raises(DomainError):
        aggregate_path(path, 3)


def test_seasonal_path_monte_carlo():
    # seasonal latent process thinned by a ramp and aggregated, checked against replicate moments
    n = 104
    tv = TimeVaryingParams(seasonal_path(math.log(20), 0.3, 0.1, n), seasonal_path(math.log(0.45), 0.1, 0.1, n),
                           0.3, 0.05, 60.0)
    pi = np.linspace(0.3, 0.7, n)
    spec = ObservationSpec(pi, 2)
    path = timevarying_moment_path(tv, spec, max_lag=2)
    reps = 20_000
    x, _ = simulate_latent(tv, seed=31, n_series=reps)
    y = thin_series(x, spec, seed=32).astype(float)
    mean = y.mean(axis=0)
    var = y.var(axis=0, ddof=1)
    z_mean = (mean - path.mu_t) / np.sqrt(path.var_t / reps)
    assert np.max(np.abs(z_mean)) < 4.5
    # variance of a sample variance ~ 2 sigma^4 / n under near-normality; heavy tails widen it
    np.testing.assert_allclose(var, path.var_t, rtol=0.06)
    cov1 = np.mean((y[:, 1:] - mean[1:]) * (y[:, :-1] - mean[:-1]), axis=0)
    np.testing.assert_allclose(cov1, path.autocov[1:, 0], rtol=0.08, atol=0.02 * path.var_t[1:].max())
