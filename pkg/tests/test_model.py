import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from underreport.exceptions import DomainError
from underreport.model import (CountSeries, ModelParams, ObservationSpec, TimeVaryingParams, inflate_counts,
                               negbin_logpmf, rng_for, seasonal_path, simulate_latent, thin_series)
from underreport.moments import stationary_moments


# --- negbin_logpmf --------------------------------------------------------------------------


def test_poisson_identity_case():
    assert negbin_logpmf(0, 1.0, 0.0) == pytest.approx(-1.0, abs=1e-15)


def test_matches_size_prob_parameterisation():
    # size = 1/psi, prob = 1/(1 + psi*lambda), evaluated directly from the pmf definition
    x, lam, psi = 3, 3.0, 0.1
    size, prob = 1 / psi, 1 / (1 + psi * lam)
    direct = (math.lgamma(x + size) - math.lgamma(size) - math.lgamma(x + 1)
              + size * math.log(prob) + x * math.log1p(-prob))
    assert negbin_logpmf(x, lam, psi) == pytest.approx(direct, rel=1e-13)


@given(lam=st.floats(0.01, 500), psi=st.floats(1e-6, 5.0))
def test_agrees_with_scipy(lam, psi):
    x = np.arange(0, 60)
    ref = stats.nbinom.logpmf(x, 1 / psi, 1 / (1 + psi * lam))
    np.testing.assert_allclose(negbin_logpmf(x, lam, psi), ref, rtol=1e-8, atol=1e-8)


def test_normalisation_brute_force():
    x = np.arange(0, 1_000_001)
    total = np.exp(negbin_logpmf(x, 50.0, 0.1)).sum()
    assert abs(total - 1) < 1e-10


def test_moments_of_pmf():
    x = np.arange(0, 20000)
    p = np.exp(negbin_logpmf(x, 40.0, 0.3))
    mean = (x * p).sum()
    assert mean == pytest.approx(40.0, rel=1e-10)
    assert ((x - mean) ** 2 * p).sum() == pytest.approx(40 + 0.3 * 40 ** 2, rel=1e-9)


def test_small_psi_is_continuous_with_poisson():
    x = np.arange(0, 40)
    np.testing.assert_allclose(negbin_logpmf(x, 12.0, 1e-9), stats.poisson.logpmf(x, 12.0), atol=1e-12)
    np.testing.assert_allclose(negbin_logpmf(x, 12.0, 1e-7), stats.poisson.logpmf(x, 12.0), atol=1e-4)


def test_per_element_dispersion():
    x = np.array([0, 5, 9])
    lam = np.array([1.0, 4.0, 9.0])
    psi = np.array([0.0, 0.2, 1e-3])
    expected = [negbin_logpmf(xi, li, pi) for xi, li, pi in zip(x, lam, psi)]
    np.testing.assert_allclose(negbin_logpmf(x, lam, psi), expected, rtol=1e-10)


@pytest.mark.parametrize("x,lam,psi", [(1, 0.0, 0.1), (1, -1.0, 0.1), (1, np.nan, 0.1), (1, 1.0, np.inf),
                                       (-1, 1.0, 0.1), (1, 1.0, -0.1)])
def test_domain_errors(x, lam, psi):
    with pytest.raises(DomainError):
        negbin_logpmf(x, lam, psi)


# --- value types ------------------------------------------------------------------------------


def test_model_params_validation():
    with pytest.raises(DomainError):
        ModelParams(-1, 0.4, 0.3, 0.1)
    with pytest.raises(DomainError):
        ModelParams(1, 0.4, -0.3, 0.1)
    with pytest.raises(DomainError):
        ModelParams(1, 0.4, 0.3, float("nan"))
    # approximating processes may carry a negative kappa or psi
    assert ModelParams(1, 0.4, -0.1, -0.01, approximating=True).kappa == -0.1


def test_stationarity_predicate(benchmark_params):
    assert benchmark_params.stationary()
    assert not ModelParams(1, 0.6, 0.39, 0.5).stationary()  # xi^2 + phi^2 psi = 0.9801 + 0.18
    assert ModelParams(1, 0.6, 0.3, 0.5).stationary()


def test_observation_spec_validation():
    with pytest.raises(DomainError):
        ObservationSpec(0.0)
    with pytest.raises(DomainError):
        ObservationSpec(1.2)
    with pytest.raises(DomainError):
        ObservationSpec(0.5, aggregation=3)
    spec = ObservationSpec(np.array([0.5, 0.6]))
    with pytest.raises(DomainError):
        spec.pi_path(3)
    with pytest.raises(DomainError):
        spec.scalar_pi()


def test_count_series_validation():
    with pytest.raises(DomainError):
        CountSeries(np.array([1, -1]))
    with pytest.raises(DomainError):
        CountSeries(np.array([1.5, 2]))
    with pytest.raises(DomainError):
        CountSeries(np.array([3])).require_length(2)
    assert CountSeries(np.array([1.0, 2.0])).values.dtype == np.int64


def test_seasonal_path_definition():
    t = np.arange(1, 209)
    expected = np.exp(0.1 + 0.3 * np.sin(2 * np.pi * t / 104) - 0.2 * np.cos(2 * np.pi * t / 104))
    np.testing.assert_allclose(seasonal_path(0.1, 0.3, -0.2, 208), expected, rtol=1e-14)


def test_time_varying_params_validation():
    with pytest.raises(DomainError):
        TimeVaryingParams(np.ones(3), np.ones(4), 0.1, 0.1, 1.0)
    with pytest.raises(DomainError):
        TimeVaryingParams(np.ones(3), -np.ones(3), 0.1, 0.1, 1.0)


# --- simulation -------------------------------------------------------------------------------


def test_simulation_is_deterministic(benchmark_params):
    a, lam_a = simulate_latent(benchmark_params, 50, seed=3)
    b, lam_b = simulate_latent(benchmark_params, 50, seed=3)
    assert np.array_equal(a.values, b.values) and np.array_equal(lam_a, lam_b)
    c, _ = simulate_latent(benchmark_params, 50, seed=4)
    assert not np.array_equal(a.values, c.values)


def test_rng_streams_are_keyed():
    x = rng_for(1, 2, 3).random(5)
    assert np.array_equal(x, rng_for(1, 2, 3).random(5))
    assert not np.array_equal(x, rng_for(1, 3, 2).random(5))


def test_conditional_mean_recursion(benchmark_params):
    series, lam = simulate_latent(benchmark_params.with_lambda1(50.0), 100, seed=1)
    x = series.values
    assert lam[0] == 50.0
    np.testing.assert_allclose(lam[1:], 15 + 0.4 * x[:-1] + 0.3 * lam[:-1], rtol=1e-14)


def test_mean_and_sd_of_benchmark_process(benchmark_params):
    # replicate means of length-416 series centred on mu = 50; sd near 20.17
    x, _ = simulate_latent(benchmark_params.with_lambda1(50.0), 416, seed=11, n_series=1000)
    means = x.mean(axis=1)
    se = means.std(ddof=1) / math.sqrt(means.size)
    assert abs(means.mean() - 50) < 3 * se
    sd = x.std(axis=1, ddof=1).mean()
    assert sd == pytest.approx(math.sqrt(stationary_moments(benchmark_params).sigma2), rel=0.03)
    assert sd == pytest.approx(20.2, abs=0.6)


def test_iid_case_has_no_autocorrelation():
    x, _ = simulate_latent(ModelParams(10.0, 0.0, 0.0, 0.2), 100_000, seed=2)
    v = x.values - x.values.mean()
    r1 = np.mean(v[1:] * v[:-1]) / np.mean(v ** 2)
    assert abs(r1) < 4 / math.sqrt(v.size)


def test_empirical_acf_is_geometric(benchmark_params):
    x, _ = simulate_latent(benchmark_params, 200_000, seed=5)
    v = x.values - x.values.mean()
    m = stationary_moments(benchmark_params)
    for d in range(1, 6):
        r = np.mean(v[d:] * v[:-d]) / np.mean(v ** 2)
        assert r == pytest.approx(m.acf(d), abs=0.02)


def test_stationary_mean_is_default_start(benchmark_params):
    _, lam = simulate_latent(benchmark_params, 5, seed=1)
    assert lam[0] == pytest.approx(50.0)


def test_simulate_time_varying_uses_paths():
    nu = np.linspace(5, 20, 60)
    phi = np.linspace(0.1, 0.5, 60)
    tv = TimeVaryingParams(nu, phi, 0.2, 0.05, 10.0)
    x, lam = simulate_latent(tv, seed=4)
    assert len(x) == 60
    np.testing.assert_allclose(lam[1:], nu[1:] + phi[1:] * x.values[:-1] + 0.2 * lam[:-1], rtol=1e-14)


# --- thinning -----------------------------------------------------------------------------------


def test_full_reporting_is_identity(benchmark_params):
    x, _ = simulate_latent(benchmark_params, 100, seed=1)
    y = thin_series(x, ObservationSpec(1.0), seed=2)
    assert np.array_equal(x.values, y.values)


def test_zero_series_stays_zero():
    y = thin_series(CountSeries(np.zeros(20, dtype=int)), ObservationSpec(0.3), seed=1)
    assert not y.values.any()


def test_thinning_never_exceeds_latent(benchmark_params):
    x, _ = simulate_latent(benchmark_params, 500, seed=1)
    y = thin_series(x, ObservationSpec(0.4), seed=2)
    assert np.all(y.values <= x.values)


def test_aggregation_sums_pairs_and_truncates():
    x = CountSeries(np.arange(11))
    y = thin_series(x, ObservationSpec(1.0, 2))
    assert np.array_equal(y.values, [1, 5, 9, 13, 17])


def test_thinned_moments_monte_carlo(benchmark_params):
    # pi = 0.5: replicate mean 25, variance 114.2
    x, _ = simulate_latent(benchmark_params, 200, seed=9, n_series=10_000)
    y = thin_series(x, ObservationSpec(0.5), seed=10)
    col = y[:, -1].astype(float)
    se_mean = col.std(ddof=1) / math.sqrt(col.size)
    assert abs(col.mean() - 25) < 4 * se_mean
    assert col.var(ddof=1) == pytest.approx(114.22, rel=0.05)


def test_inflation_rounds_half_to_even():
    s = CountSeries(np.array([1, 3, 5, 2]))
    # 1/0.4 = 2.5 -> 2, 3/0.4 = 7.5 -> 8, 5/0.4 = 12.5 -> 12, 2/0.4 = 5
    assert list(inflate_counts(s, 0.4).values) == [2, 8, 12, 5]
