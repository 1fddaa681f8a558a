"""
Maximum likelihood fitting, covariance estimation and confidence intervals.

Parameters are optimised on an unconstrained scale: logs of ``nu``, ``phi``,
``kappa``, ``psi`` and ``lambda1`` for the time-constant model, and the
log-linear seasonal coefficients of ``nu_t`` and ``phi_t`` for the seasonal
model. The reporting probability is always fixed by the caller.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import optimize, stats

from .equivalence import EquivalenceTarget, effective_reproduction, invert_moments
from .exceptions import ConvergenceError, DomainError
from .likelihood import (DEFAULT_CONFIG, forward_loglik, LikelihoodConfig, _approx_loglik_floats, _approx_loglik_tv_floats,
                         approx_loglik,
                         approx_loglik_timevarying)
from .model import (DEFAULT_PERIOD, CountSeries, ModelParams, ObservationSpec, TimeVaryingParams,
                    rng_for, seasonal_path)
from .moments import empirical_moments, latent_moment_path, stationary_moments

logger = logging.getLogger(__name__)

CONSTANT_NAMES = ("nu", "phi", "kappa", "psi", "lambda1")
SEASONAL_NAMES = ("alpha_nu", "gamma_nu", "delta_nu", "alpha_phi", "gamma_phi", "delta_phi",
                  "kappa", "psi", "lambda1")
FORWARD_NAMES = ("nu", "phi", "psi", "lambda1")
_LOG_PARAMS = {"nu", "phi", "kappa", "psi", "lambda1"}


@dataclass(frozen=True)
class FitConfig:
    """Optimiser and inference settings.

    ``n_starts`` deterministic starts are used: a method-of-moments start and
    perturbations of it drawn from a generator keyed by ``start_seed``.
    """

    n_starts: int = 5
    start_seed: int = 20200501
    start_spread: float = 0.3
    xatol: float = 1e-6
    frtol: float = 1e-8
    maxiter: int = 4000
    hessian_step: float = 1e-4
    period: int = DEFAULT_PERIOD
    likelihood: LikelihoodConfig = DEFAULT_CONFIG
    compute_vcov: bool = True
    fast: bool = True


DEFAULT_FIT = FitConfig()


@dataclass
class FitResult:
    """Outcome of a maximum likelihood fit.

    ``theta`` and ``vcov`` are on the transformed scale named by ``names``;
    ``estimates`` holds natural-scale parameters (a TimeVaryingParams for the
    seasonal model, whose coefficients are in ``coefficients``).
    """

    model: str
    spec: ObservationSpec
    names: Tuple[str, ...]
    theta: np.ndarray
    estimates: object
    loglik: float
    vcov: Optional[np.ndarray]
    vcov_usable: bool
    converged: bool
    n_evals: int
    boundary: bool = False
    coefficients: Dict[str, float] = field(default_factory=dict)
    derived: Dict[str, object] = field(default_factory=dict)
    flags: Dict[str, object] = field(default_factory=dict)
    n_obs: int = 0

    def natural(self) -> Dict[str, float]:
        """Parameter values on their natural scale, keyed by name."""
        return {n: _to_natural(n, v) for n, v in zip(self.names, self.theta)}

    @property
    def std_errors(self) -> np.ndarray:
        if self.vcov is None:
            raise DomainError("no covariance matrix available")
        return np.sqrt(np.diag(self.vcov))

    def to_dict(self) -> dict:
        out = {
            "model": self.model,
            "pi": self.spec.pi if self.spec.is_constant else list(map(float, self.spec.pi)),
            "aggregation": self.spec.aggregation,
            "names": list(self.names),
            "theta": [float(v) for v in self.theta],
            "estimates": self.natural(),
            "loglik": self.loglik,
            "vcov": None if self.vcov is None else self.vcov.tolist(),
            "vcov_usable": self.vcov_usable,
            "converged": self.converged,
            "n_evals": self.n_evals,
            "boundary": self.boundary,
            "n_obs": self.n_obs,
            "flags": self.flags,
            "derived": {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.derived.items()},
        }
        return out


def _to_natural(name: str, value: float) -> float:
    return float(math.exp(value)) if name in _LOG_PARAMS else float(value)


def _n_latent(data: CountSeries, spec: ObservationSpec) -> int:
    return spec.aggregation * len(data)


def build_params(model: str, theta: np.ndarray, n_latent: int = 0, period: int = DEFAULT_PERIOD):
    """Natural-scale parameters from a transformed vector."""
    if model == "constant":
        nu, phi, kappa, psi, lambda1 = np.exp(theta)
        return ModelParams(nu, phi, kappa, psi, lambda1)
    if model == "seasonal":
        a_nu, g_nu, d_nu, a_phi, g_phi, d_phi, lk, lpsi, ll1 = theta
        return TimeVaryingParams(
            seasonal_path(a_nu, g_nu, d_nu, n_latent, period),
            seasonal_path(a_phi, g_phi, d_phi, n_latent, period),
            math.exp(lk), math.exp(lpsi), math.exp(ll1),
        )
    raise DomainError(f"unknown model {model!r}")


def loglik_at(model: str, theta: np.ndarray, data: CountSeries, spec: ObservationSpec,
              cfg: FitConfig = DEFAULT_FIT) -> float:
    """Approximate log-likelihood at a transformed parameter vector (``-inf`` outside the domain)."""
    fast = cfg.fast and cfg.likelihood.fallback_negative_lambda == "set_to_nu"
    if fast and model == "constant" and spec.is_constant:
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)) or np.any(theta > 700):
            return -np.inf
        nu, phi, kappa, psi, lambda1 = np.exp(theta)
        x = data.values.astype(float)
        return _approx_loglik_floats(nu, phi, kappa, psi, lambda1, x, spec.pi, spec.aggregation)
    if fast and cfg.likelihood.tv_init == "fixed":
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)) or np.any(np.abs(theta) > 700):
            return -np.inf
        n_lat = _n_latent(data, spec)
        if model == "seasonal":
            a_nu, g_nu, d_nu, a_phi, g_phi, d_phi, lk, lpsi, ll1 = theta
            with np.errstate(over="ignore"):
                nu = seasonal_path(a_nu, g_nu, d_nu, n_lat, cfg.period)
                phi = seasonal_path(a_phi, g_phi, d_phi, n_lat, cfg.period)
        elif model == "constant":
            nu_c, phi_c, lk, lpsi, ll1 = theta
            nu, phi = np.full(n_lat, math.exp(nu_c)), np.full(n_lat, math.exp(phi_c))
        else:
            raise DomainError(f"unknown model {model!r}")
        if not (np.all(np.isfinite(nu)) and np.all(np.isfinite(phi))):
            return -np.inf
        return _approx_loglik_tv_floats(nu, phi, math.exp(lk), math.exp(lpsi), math.exp(ll1),
                                        spec.pi_path(n_lat), spec.aggregation, data.values.astype(float))
    try:
        params = build_params(model, np.asarray(theta, dtype=float), _n_latent(data, spec), cfg.period)
        if model == "constant" and spec.is_constant:
            return approx_loglik(params, spec, data, cfg.likelihood)
        if model == "constant":
            params = TimeVaryingParams.constant(params, _n_latent(data, spec))
        return approx_loglik_timevarying(params, spec, data, cfg.likelihood)
    except (DomainError, FloatingPointError, OverflowError, ZeroDivisionError):
        return -np.inf


def _clamp_start(nu, phi, kappa, psi):
    phi = min(max(phi, 0.02), 0.95)
    kappa = min(max(kappa, 0.02), 0.95)
    psi = min(max(psi, 1e-3), 5.0)
    while (phi + kappa) ** 2 + phi ** 2 * psi >= 0.95:
        phi *= 0.9
        kappa *= 0.9
    return max(nu, 1e-3), phi, kappa, psi


def moment_start(data: CountSeries, spec: ObservationSpec) -> np.ndarray:
    """Method-of-moments start for the time-constant model (transformed scale)."""
    x = data.values
    m = empirical_moments(x)
    pi = float(np.mean(spec.pi)) if not spec.is_constant else spec.pi
    try:
        if spec.aggregation == 1:
            p = invert_moments(EquivalenceTarget(m, pi))
            nu, phi, kappa, psi = p.as_tuple()
        else:
            y = invert_moments(EquivalenceTarget(m, pi))
            xi = math.sqrt(max(y.xi, 1e-4))
            share = y.phi / y.xi if y.xi > 0 else 0.5
            phi, kappa = share * xi, (1 - share) * xi
            nu = m.mu / (2 * pi) * (1 - xi)
            psi = y.psi
    except DomainError:
        nu, phi, kappa, psi = m.mu / (spec.aggregation * pi) * 0.4, 0.3, 0.3, 0.1
    nu, phi, kappa, psi = _clamp_start(nu, phi, kappa, psi)
    xi = phi + kappa
    mu_lat = nu / (1 - xi)
    # first observation scaled back to one latent step
    lam1 = max(x[0] / (spec.aggregation * pi), 0.5 * mu_lat, 1e-2)
    return np.log([nu, phi, kappa, psi, lam1])


def _starts(base: np.ndarray, n: int, seed: int, spread: float) -> List[np.ndarray]:
    starts = [base]
    for i in range(1, n):
        rng = rng_for(seed, i)
        starts.append(base + rng.normal(0.0, spread, size=base.shape))
    return starts


def _minimize(f, x0: np.ndarray, cfg: FitConfig):
    opts = {"xatol": cfg.xatol, "fatol": 0.0, "maxiter": cfg.maxiter, "maxfev": 4 * cfg.maxiter,
            "adaptive": x0.shape[0] > 5}
    total = 0
    best = None
    x = x0
    # restart from the optimum until the log-likelihood stops moving
    for _ in range(4):
        f0 = f(x)
        opts["fatol"] = cfg.frtol * max(1.0, abs(f0)) if np.isfinite(f0) else 1e-8
        res = optimize.minimize(f, x, method="Nelder-Mead", options=opts)
        total += res.nfev
        improved = best is None or res.fun < best.fun - cfg.frtol * max(1.0, abs(res.fun))
        if best is None or res.fun < best.fun:
            best = res
        x = res.x
        if not improved:
            break
    return best, total


def numerical_hessian(f, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central-difference Hessian of ``f`` at ``x``."""
    k = x.shape[0]
    h = np.zeros((k, k))
    f0 = f(x)
    eye = np.eye(k) * step
    for i in range(k):
        fp, fm = f(x + eye[i]), f(x - eye[i])
        h[i, i] = (fp - 2 * f0 + fm) / step ** 2
        for j in range(i):
            fpp = f(x + eye[i] + eye[j])
            fpm = f(x + eye[i] - eye[j])
            fmp = f(x - eye[i] + eye[j])
            fmm = f(x - eye[i] - eye[j])
            h[i, j] = h[j, i] = (fpp - fpm - fmp + fmm) / (4 * step ** 2)
    return h


def _vcov_from_hessian(hess: np.ndarray):
    if not np.all(np.isfinite(hess)):
        return None, False
    try:
        np.linalg.cholesky(hess)
    except np.linalg.LinAlgError:
        return None, False
    vcov = np.linalg.inv(hess)
    vcov = (vcov + vcov.T) / 2
    return vcov, True


def _derived(model: str, params, spec: ObservationSpec, step_days: Optional[float]) -> Dict[str, object]:
    rep = effective_reproduction(params, step_days)
    out: Dict[str, object] = {"serial_interval": rep.serial_interval}
    if model == "constant":
        out["r_eff"] = float(rep.r_eff)
        out["endemic_fraction"] = float(1 - params.xi) if params.stationary() else float("nan")
    else:
        r = np.asarray(rep.r_eff)
        out["r_eff_t"] = r
        out["r_eff_range"] = [float(r.min()), float(r.max())]
        path = latent_moment_path(params, max_lag=1)
        out["endemic_fraction"] = float(params.nu.sum() / path.mu_t.sum())
    return out


def fit(data: CountSeries, spec: ObservationSpec, model: str = "constant", cfg: FitConfig = DEFAULT_FIT,
        starts: Optional[List[np.ndarray]] = None, step_days: Optional[float] = None) -> FitResult:
    """Maximise the approximate likelihood for a fixed reporting probability.

    Parameters
    ----------
    data : CountSeries
        Observed counts (weekly counts when ``spec.aggregation == 2``).
    spec : ObservationSpec
        Assumed reporting probability (scalar or per latent step) and aggregation.
    model : {"constant", "seasonal"}
    starts : list of arrays, optional
        Explicit transformed-scale starts; by default ``cfg.n_starts``
        deterministic starts are generated.
    step_days : float, optional
        Length of a latent step in days, used for the serial interval.

    Raises
    ------
    ConvergenceError
        If no start reaches a finite log-likelihood, or the counts are all
        zero so that the likelihood has no interior maximum.
    """
    data.require_length(2)
    if not np.any(data.values):
        raise ConvergenceError("all counts are zero; the likelihood increases without bound as nu -> 0")
    names = CONSTANT_NAMES if model == "constant" else SEASONAL_NAMES

    def negll(theta):
        return -loglik_at(model, theta, data, spec, cfg)

    if starts is None:
        base = moment_start(data, spec)
        if model == "seasonal":
            const = fit(data, spec, "constant", replace(cfg, compute_vcov=False, n_starts=min(cfg.n_starts, 2)))
            lnu, lphi, lk, lpsi, ll1 = const.theta
            base = np.array([lnu, 0.0, 0.0, lphi, 0.0, 0.0, lk, lpsi, ll1])
        starts = _starts(base, cfg.n_starts, cfg.start_seed, cfg.start_spread)
    runs = []
    n_evals = 0
    for i, x0 in enumerate(starts):
        if not np.isfinite(negll(x0)):
            logger.debug("start %d has infinite objective, skipped", i)
            n_evals += 1
            continue
        res, nfev = _minimize(negll, np.asarray(x0, dtype=float), cfg)
        n_evals += nfev
        runs.append(res)
    finite = [r for r in runs if np.isfinite(r.fun)]
    if not finite:
        raise ConvergenceError("no optimizer start reached a finite log-likelihood",
                               [{"success": r.success, "message": r.message} for r in runs])
    best = min(finite, key=lambda r: r.fun)
    theta = best.x
    params = build_params(model, theta, _n_latent(data, spec), cfg.period)
    vcov, usable = None, False
    if cfg.compute_vcov:
        hess = numerical_hessian(negll, theta, cfg.hessian_step)
        n_evals += 1 + 2 * len(theta) ** 2
        vcov, usable = _vcov_from_hessian(hess)
    boundary = False
    if model == "constant":
        margin = 1 - (params.xi ** 2 + params.phi ** 2 * params.psi)
        boundary = margin < 1e-4 or bool(np.any(theta[:4] < math.log(1e-6)))
    result = FitResult(
        model=model, spec=spec, names=names, theta=theta, estimates=params, loglik=-float(best.fun),
        vcov=vcov, vcov_usable=usable, converged=bool(best.success), n_evals=n_evals, boundary=boundary,
        n_obs=len(data),
    )
    if model == "seasonal":
        result.coefficients = {n: float(v) for n, v in zip(names[:6], theta[:6])}
    result.derived = _derived(model, params, spec, step_days)
    result.flags["n_starts_finite"] = len(finite)
    result.flags["start_logliks"] = [float(-r.fun) for r in finite]
    return result


def fit_forward(data: CountSeries, pi: float, cfg: FitConfig = DEFAULT_FIT,
                starts: Optional[List[np.ndarray]] = None) -> FitResult:
    """Exact maximum likelihood for ``kappa = 0`` via the forward algorithm.

    Optimises ``log nu``, ``log phi``, ``log psi`` and ``log lambda1`` for a
    fixed reporting probability. Slow; meant for small studies and checks.
    """
    data.require_length(2)
    if not np.any(data.values):
        raise ConvergenceError("all counts are zero; the likelihood increases without bound as nu -> 0")
    spec = ObservationSpec(pi)

    def negll(theta):
        if not np.all(np.isfinite(theta)) or np.any(np.abs(theta) > 50):
            return np.inf
        nu, phi, psi, lambda1 = np.exp(theta)
        try:
            return -forward_loglik(ModelParams(nu, phi, 0.0, psi, lambda1), pi, data, cfg.likelihood)
        except DomainError:
            return np.inf

    if starts is None:
        lnu, lphi, lk, lpsi, ll1 = moment_start(data, spec)
        # collapse the decay onto phi
        xi = min(math.exp(lphi) + math.exp(lk), 0.9)
        mu = float(np.mean(data.values)) / pi
        base = np.log([max(mu * (1 - xi), 1e-3), xi, math.exp(lpsi), math.exp(ll1)])
        starts = _starts(base, cfg.n_starts, cfg.start_seed, cfg.start_spread)
    runs = []
    n_evals = 0
    for x0 in starts:
        if not np.isfinite(negll(x0)):
            n_evals += 1
            continue
        res, nfev = _minimize(negll, np.asarray(x0, dtype=float), cfg)
        n_evals += nfev
        runs.append(res)
    if not runs:
        raise ConvergenceError("no optimizer start reached a finite log-likelihood", [])
    best = min(runs, key=lambda r: r.fun)
    nu, phi, psi, lambda1 = np.exp(best.x)
    result = FitResult(
        model="forward", spec=spec, names=FORWARD_NAMES, theta=best.x,
        estimates=ModelParams(nu, phi, 0.0, psi, lambda1), loglik=-float(best.fun), vcov=None,
        vcov_usable=False, converged=bool(best.success), n_evals=n_evals, n_obs=len(data),
    )
    result.flags["start_logliks"] = [float(-r.fun) for r in runs]
    return result


def debias_params(params: ModelParams, pi: float) -> Tuple[ModelParams, bool]:
    """Post-hoc correction of a fit that ignored underreporting.

    Returns the parameters whose thinning with ``pi`` is second-order
    equivalent to ``params`` (fully observed), with negative ``kappa`` and
    ``psi`` clipped to zero, and whether clipping happened.
    """
    raw = invert_moments(EquivalenceTarget(stationary_moments(params), pi))
    clipped = raw.kappa < 0 or raw.psi < 0
    lam1 = None if params.lambda1 is None else params.lambda1 / pi
    return ModelParams(raw.nu, raw.phi, max(raw.kappa, 0.0), max(raw.psi, 0.0), lam1), clipped


def fit_debias(data: CountSeries, spec: ObservationSpec, cfg: FitConfig = DEFAULT_FIT) -> FitResult:
    """Fit ignoring underreporting, then de-bias the estimates for the assumed ``spec.pi``.

    The covariance matrix is carried over by the delta method when no
    clipping occurred and flagged unusable otherwise.
    """
    if spec.aggregation != 1:
        raise DomainError("post-hoc de-biasing is only defined without aggregation")
    pi = spec.scalar_pi()
    naive = fit(data, ObservationSpec(1.0), "constant", cfg)
    params, clipped = debias_params(naive.estimates, pi)
    vcov, usable = None, False
    if not clipped and naive.vcov_usable:
        def mapped(theta):
            p, _ = debias_params(build_params("constant", theta), pi)
            return np.log([p.nu, p.phi, p.kappa, p.psi, p.lambda1])

        jac = np.empty((5, 5))
        h = cfg.hessian_step
        for i in range(5):
            e = np.zeros(5)
            e[i] = h
            jac[:, i] = (mapped(naive.theta + e) - mapped(naive.theta - e)) / (2 * h)
        vcov = jac @ naive.vcov @ jac.T
        usable = bool(np.all(np.isfinite(vcov)))
    with np.errstate(divide="ignore"):
        theta = np.log([params.nu, params.phi, params.kappa, params.psi, params.lambda1])
    result = FitResult(
        model="constant", spec=spec, names=CONSTANT_NAMES, theta=theta, estimates=params,
        loglik=naive.loglik, vcov=vcov, vcov_usable=usable, converged=naive.converged,
        n_evals=naive.n_evals, boundary=clipped, n_obs=len(data),
    )
    result.flags["clipped"] = clipped
    result.derived = _derived("constant", params, spec, None)
    return result


def wald_ci(result: FitResult, level: float = 0.95) -> Dict[str, Tuple[float, float, float]]:
    """Wald intervals ``theta +/- z * SE`` on the transformed scale, mapped back.

    Returns ``{name: (estimate, lower, upper)}`` on the natural scale.
    """
    if not 0 < level < 1:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    if not result.vcov_usable or result.vcov is None:
        raise DomainError("covariance matrix is unusable; no Wald intervals")
    z = stats.norm.ppf(0.5 + level / 2)
    se = np.sqrt(np.diag(result.vcov))
    out = {}
    for name, th, s in zip(result.names, result.theta, se):
        out[name] = (_to_natural(name, th), _to_natural(name, th - z * s), _to_natural(name, th + z * s))
    return out


@dataclass(frozen=True)
class ReffBand:
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float


def _reff_from_theta(result: FitResult, theta: np.ndarray, n_steps: int, period: int) -> np.ndarray:
    if result.model == "constant":
        p = build_params("constant", theta)
        return np.full(n_steps, p.phi / (1 - p.kappa))
    p = build_params("seasonal", theta, n_steps, period)
    return p.phi / (1 - p.kappa)


def sample_reff_ci(result: FitResult, draws: int = 10000, level: float = 0.90, seed: int = 0,
                   n_steps: Optional[int] = None, period: int = DEFAULT_PERIOD) -> ReffBand:
    """Point-wise band for ``R_eff,t`` from multivariate normal parameter draws.

    Draws use the transformed-scale estimate and covariance; draws with
    ``kappa >= 1`` are discarded.
    """
    if result.vcov is None or not result.vcov_usable:
        raise DomainError("covariance matrix is unusable; no sampling band")
    if n_steps is None:
        n_steps = result.spec.aggregation * result.n_obs if result.model == "seasonal" else 1
    point = _reff_from_theta(result, result.theta, n_steps, period)
    rng = np.random.default_rng(seed)
    thetas = rng.multivariate_normal(result.theta, result.vcov, size=draws, method="eigh")
    k_idx = result.names.index("kappa")
    thetas = thetas[np.exp(thetas[:, k_idx]) < 1]
    samples = np.empty((thetas.shape[0], n_steps))
    for i, th in enumerate(thetas):
        samples[i] = _reff_from_theta(result, th, n_steps, period)
    lo, hi = np.quantile(samples, [0.5 - level / 2, 0.5 + level / 2], axis=0)
    return ReffBand(point, lo, hi, level)
