import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from underreport.equivalence import predict_naive_bias
from underreport.estimation import (FitConfig, build_params, debias_params, fit, fit_debias,
                                    fit_forward, loglik_at, moment_start, numerical_hessian, sample_reff_ci,
                                    wald_ci, _vcov_from_hessian)
from underreport.exceptions import ConvergenceError, DomainError
from underreport.experiments import ROTAVIRUS_LIKE, seasonal_truth
from underreport.likelihood import approx_loglik, forward_loglik
from underreport.model import ModelParams, ObservationSpec, simulate_latent, thin_series

FAST = FitConfig(n_starts=2)


def _observed(params, spec, n, seed):
    x, _ = simulate_latent(params, spec.aggregation * n, seed=seed)
    return thin_series(x, spec, seed=seed + 1)


@pytest.fixture(scope="module")
def benchmark_fit():
    p = ModelParams(15.0, 0.4, 0.3, 0.1, 50.0)
    spec = ObservationSpec(0.5)
    data = _observed(p, spec, 832, seed=101)
    return p, spec, data, fit(data, spec, cfg=FAST)


@pytest.fixture(scope="module")
def seasonal_fit():
    # eight years of weekly counts from half-weekly latent steps, at the scale of the rotavirus application
    truth = seasonal_truth(ROTAVIRUS_LIKE, 832)
    spec = ObservationSpec(0.043, 2)
    x, _ = simulate_latent(truth, seed=102)
    data = thin_series(x, spec, seed=103)
    return truth, spec, data, fit(data, spec, "seasonal", FAST)


# --- numerical helpers ------------------------------------------------------------------------


@given(seed=st.integers(0, 2 ** 31))
def test_hessian_of_quadratic(seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(4, 4))
    a = m @ m.T + np.eye(4)
    b = rng.normal(size=4)
    f = lambda x: 0.5 * x @ a @ x + b @ x
    np.testing.assert_allclose(numerical_hessian(f, rng.normal(size=4)), a, rtol=1e-5, atol=1e-5)


def test_indefinite_hessian_is_unusable():
    vcov, ok = _vcov_from_hessian(np.diag([1.0, -1.0]))
    assert vcov is None and not ok
    vcov, ok = _vcov_from_hessian(np.array([[2.0, 0.0], [0.0, np.inf]]))
    assert not ok
    vcov, ok = _vcov_from_hessian(np.diag([4.0, 0.5]))
    np.testing.assert_allclose(vcov, np.diag([0.25, 2.0]))


def test_build_params_scales():
    p = build_params("constant", np.log([15.0, 0.4, 0.3, 0.1, 50.0]))
    np.testing.assert_allclose(p.as_tuple(), (15.0, 0.4, 0.3, 0.1))
    with pytest.raises(DomainError):
        build_params("linear", np.zeros(5))


def test_moment_start_is_finite(benchmark_fit):
    _, spec, data, _ = benchmark_fit
    start = moment_start(data, spec)
    assert np.all(np.isfinite(start)) and np.isfinite(loglik_at("constant", start, data, spec))


@pytest.mark.parametrize("aggregation", [1, 2])
def test_fast_and_validated_routes_agree(aggregation):
    p = ModelParams(15.0, 0.4, 0.3, 0.1, 50.0)
    spec = ObservationSpec(0.3, aggregation)
    data = _observed(p, spec, 200, seed=104)
    slow = replace(FAST, fast=False)
    rng = np.random.default_rng(5)
    for _ in range(20):
        theta = np.log([15.0, 0.4, 0.3, 0.1, 50.0]) + rng.normal(0, 0.3, 5)
        a, b = loglik_at("constant", theta, data, spec, FAST), loglik_at("constant", theta, data, spec, slow)
        assert a == pytest.approx(b, rel=1e-10) or (math.isinf(a) and math.isinf(b))


def test_seasonal_fast_and_validated_routes_agree(seasonal_fit):
    _, spec, data, res = seasonal_fit
    slow = replace(FAST, fast=False)
    assert loglik_at("seasonal", res.theta, data, spec, slow) == pytest.approx(res.loglik, rel=1e-10)


# --- constant model --------------------------------------------------------------------------


def test_recovers_truth(benchmark_fit):
    p, _, _, res = benchmark_fit
    assert res.vcov_usable and res.converged
    ci = wald_ci(res, 0.999)
    for name, truth in zip(("nu", "phi", "kappa", "psi"), p.as_tuple()):
        est, lo, hi = ci[name]
        assert lo <= truth <= hi, name


def test_optimum_beats_truth(benchmark_fit):
    p, spec, data, res = benchmark_fit
    assert res.loglik >= approx_loglik(p, spec, data) - 1e-6
    assert res.loglik == pytest.approx(approx_loglik(res.estimates, spec, data), rel=1e-12)


def test_fit_is_deterministic(benchmark_fit):
    _, spec, data, res = benchmark_fit
    again = fit(data, spec, cfg=FAST)
    assert np.array_equal(res.theta, again.theta) and np.array_equal(res.vcov, again.vcov)


def test_fit_result_serialises(benchmark_fit):
    d = benchmark_fit[3].to_dict()
    assert set(d["estimates"]) >= {"nu", "phi", "kappa", "psi", "lambda1"}
    assert d["derived"]["r_eff"] == pytest.approx(benchmark_fit[3].natural()["phi"]
                                                  / (1 - benchmark_fit[3].natural()["kappa"]))


def test_naive_fit_tracks_predicted_bias():
    p = ModelParams(15.0, 0.4, 0.3, 0.1, 50.0)
    data = _observed(p, ObservationSpec(0.1), 5000, seed=105)
    res = fit(data, ObservationSpec(1.0), cfg=replace(FAST, compute_vcov=False))
    pred = predict_naive_bias(p, 0.1)
    assert res.estimates.kappa > 0.3 and res.estimates.phi < 0.4
    np.testing.assert_allclose(res.estimates.as_tuple(), pred.as_tuple(), rtol=0.25)


def test_iid_model_has_small_autoregression():
    p = ModelParams(20.0, 0.0, 0.0, 0.1)
    data = _observed(p, ObservationSpec(1.0), 1000, seed=106)
    res = fit(data, ObservationSpec(1.0), cfg=replace(FAST, compute_vcov=False))
    assert res.estimates.phi < 0.1
    mu = res.estimates.nu / (1 - res.estimates.xi)
    assert mu == pytest.approx(data.values.mean(), rel=0.05)


def test_all_starts_failing_raises(benchmark_fit):
    _, spec, data, _ = benchmark_fit
    with pytest.raises(ConvergenceError):
        fit(data, spec, cfg=FAST, starts=[np.log([15.0, 0.9, 0.9, 0.1, 50.0])])


def test_short_series_rejected():
    from underreport.model import CountSeries
    with pytest.raises(DomainError):
        fit(CountSeries(np.array([3])), ObservationSpec(0.5))


# --- intervals ---------------------------------------------------------------------------------


def test_wald_contract(benchmark_fit):
    res = benchmark_fit[3]
    ci = wald_ci(res)
    for name, (est, lo, hi) in ci.items():
        assert lo < est < hi
    narrow = wald_ci(res, 0.5)
    assert all(narrow[k][2] - narrow[k][1] < ci[k][2] - ci[k][1] for k in ci)
    for level in (0.0, 1.0, 1.5):
        with pytest.raises(DomainError):
            wald_ci(res, level)
    with pytest.raises(DomainError):
        wald_ci(replace(res, vcov_usable=False))


def test_wald_by_hand(benchmark_fit):
    res = benchmark_fit[3]
    se = math.sqrt(res.vcov[1, 1])
    est, lo, hi = wald_ci(res, 0.95)["phi"]
    assert lo == pytest.approx(math.exp(res.theta[1] - 1.959963984540054 * se), rel=1e-12)
    assert hi == pytest.approx(math.exp(res.theta[1] + 1.959963984540054 * se), rel=1e-12)


def test_band_collapses_without_uncertainty(benchmark_fit):
    res = replace(benchmark_fit[3], vcov=np.zeros((5, 5)))
    band = sample_reff_ci(res, draws=200)
    np.testing.assert_allclose(band.lower, band.point, rtol=1e-12)
    np.testing.assert_allclose(band.upper, band.point, rtol=1e-12)


def test_band_requires_usable_vcov(benchmark_fit):
    with pytest.raises(DomainError):
        sample_reff_ci(replace(benchmark_fit[3], vcov_usable=False))


def test_seasonal_band_is_stable_in_draws(seasonal_fit):
    res = seasonal_fit[3]
    assert res.vcov_usable
    small = sample_reff_ci(res, draws=10_000, seed=1)
    large = sample_reff_ci(res, draws=100_000, seed=2)
    assert np.all(small.upper > small.lower)
    assert np.max(np.abs(small.lower - large.lower)) < 0.005
    assert np.max(np.abs(small.upper - large.upper)) < 0.005


def test_seasonal_fit_recovers_feedback(seasonal_fit):
    truth, spec, data, res = seasonal_fit
    est, lo, hi = wald_ci(res, 0.999)["kappa"]
    assert lo <= truth.kappa <= hi
    r = res.derived["r_eff_t"]
    assert r.shape == (2 * len(data),)
    assert res.derived["r_eff_range"] == [pytest.approx(r.min()), pytest.approx(r.max())]


# --- de-biasing ------------------------------------------------------------------------------------


def test_debias_at_full_reporting_is_plain_fit(benchmark_fit):
    _, _, data, _ = benchmark_fit
    spec = ObservationSpec(1.0)
    a, b = fit_debias(data, spec, FAST), fit(data, spec, cfg=FAST)
    np.testing.assert_allclose(a.estimates.as_tuple(), b.estimates.as_tuple(), rtol=1e-10)
    np.testing.assert_allclose(a.vcov, b.vcov, rtol=1e-6, atol=1e-10)


def test_debias_inverts_predicted_bias():
    p = ModelParams(15.0, 0.4, 0.3, 0.1, 50.0)
    back, clipped = debias_params(predict_naive_bias(p, 0.25).with_lambda1(12.5), 0.25)
    assert not clipped
    np.testing.assert_allclose(back.as_tuple(), p.as_tuple(), rtol=1e-8)
    assert back.lambda1 == pytest.approx(50.0)


def test_debias_clips_small_feedback():
    # an observed process with little feedback de-biased for a low pi gives a negative kappa
    naive = ModelParams(5.0, 0.5, 0.0, 0.001, 10.0)
    out, clipped = debias_params(naive, 0.9)
    assert clipped and out.kappa == 0.0 and out.psi == 0.0


def test_debias_requires_no_aggregation(benchmark_fit):
    with pytest.raises(DomainError):
        fit_debias(benchmark_fit[2], ObservationSpec(0.5, 2))


# --- exact fits ----------------------------------------------------------------------------------


def test_forward_fit_improves_on_truth():
    p = ModelParams(10.0, 0.5, 0.0, 0.1, 20.0)
    data = _observed(p, ObservationSpec(0.5), 150, seed=107)
    res = fit_forward(data, 0.5, FitConfig(n_starts=1, xatol=1e-4, frtol=1e-7))
    assert res.model == "forward"
    assert res.loglik >= forward_loglik(p, 0.5, data) - 1e-6
    assert res.estimates.kappa == 0
