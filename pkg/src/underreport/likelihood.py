"""
Log-likelihoods for underreported and aggregated counts.

``approx_loglik`` replaces the observed process by a fully observed
second-order equivalent process and evaluates its conditional likelihood.
``forward_loglik`` is the exact hidden-Markov likelihood, available when
``kappa = 0`` makes the latent process a first-order Markov chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter
from scipy.special import betaln, gammaln

from .equivalence import EquivalenceTarget, _invert, invert_moments, match_timevarying
from .exceptions import DomainError
from .model import PSI_POISSON, CountSeries, ModelParams, ObservationSpec, TimeVaryingParams, negbin_logpmf
from .moments import observed_moments, timevarying_moment_path

_LOG_TINY = -46.0  # exp(-46) ~ 1e-20, relative cut-off for the forward window


@dataclass(frozen=True)
class LikelihoodConfig:
    """Options shared by the likelihood functions.

    Attributes
    ----------
    fallback_negative_lambda : {"set_to_nu", "error"}
        What to do when the equivalent process produces ``lambda <= 0``.
    truncation_sd : float
        Forward algorithm state bound ``N = max/pi + truncation_sd * sqrt(max/pi) + truncation_pad``.
    truncation_pad : int
    boundary_tol : float
        Filtered mass allowed at the upper state bound before widening.
    max_states : int
        Give up widening beyond this many latent states.
    lag_band : int
        Lag band of the time-varying moment path.
    tv_init : {"fixed", "stationary"}
        Start of the time-varying moment recursion, see
        :func:`underreport.moments.latent_moment_path`.
    """

    fallback_negative_lambda: str = "set_to_nu"
    truncation_sd: float = 10.0
    truncation_pad: int = 50
    boundary_tol: float = 1e-12
    max_states: int = 200_000
    lag_band: int = 10
    tv_init: str = "fixed"

    def __post_init__(self):
        if self.fallback_negative_lambda not in ("set_to_nu", "error"):
            raise DomainError(f"unknown fallback {self.fallback_negative_lambda!r}")
        if self.tv_init not in ("fixed", "stationary"):
            raise DomainError(f"unknown tv_init {self.tv_init!r}")


DEFAULT_CONFIG = LikelihoodConfig()


def _values(data) -> np.ndarray:
    return data.values if isinstance(data, CountSeries) else np.asarray(data, dtype=np.int64)


def conditional_lambda(x, nu, phi, kappa, lambda1, fallback: str = "set_to_nu") -> tuple:
    """Conditional means ``lambda_t = nu_t + phi_t x_{t-1} + kappa_t lambda_{t-1}``.

    Scalars or per-step arrays are accepted for ``nu``, ``phi`` and ``kappa``
    (index ``t`` drives ``lambda_t``). Non-positive values are replaced by
    ``nu_t``. Returns ``(lambda, n_fallbacks)``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    scalar = np.ndim(nu) == 0 and np.ndim(phi) == 0 and np.ndim(kappa) == 0
    if scalar and kappa >= 0 and phi >= 0 and nu > 0 and lambda1 > 0:
        lam = np.empty(n)
        lam[0] = lambda1
        if n > 1:
            drive = nu + phi * x[:-1]
            lam[1:] = lfilter([1.0], [1.0, -kappa], drive, zi=[kappa * lambda1])[0]
        return lam, 0
    nu_a = np.broadcast_to(np.asarray(nu, dtype=float), (n,))
    phi_a = np.broadcast_to(np.asarray(phi, dtype=float), (n,))
    kap_a = np.broadcast_to(np.asarray(kappa, dtype=float), (n,))
    lam = np.empty(n)
    lam[0] = lambda1
    fallbacks = 0
    if not lambda1 > 0:
        raise DomainError(f"initial conditional mean {lambda1} <= 0")
    prev = lambda1
    for t in range(1, n):
        cur = nu_a[t] + phi_a[t] * x[t - 1] + kap_a[t] * prev
        if cur <= 0:
            if fallback == "error":
                raise DomainError(f"non-positive conditional mean at step {t + 1}")
            cur = nu_a[t]
            fallbacks += 1
            if cur <= 0:
                raise DomainError(f"non-positive endemic term at step {t + 1}")
        lam[t] = cur
        prev = cur
    return lam, fallbacks


def conditional_loglik(params: ModelParams, data, cfg: LikelihoodConfig = DEFAULT_CONFIG) -> float:
    """Log-likelihood of a fully observed series conditional on ``params.lambda1``."""
    x = _values(data)
    lam, _ = conditional_lambda(x, params.nu, params.phi, params.kappa, params.initial_mean(),
                                cfg.fallback_negative_lambda)
    return float(np.sum(negbin_logpmf(x, lam, max(params.psi, 0.0))))


def equivalent_process(params: ModelParams, spec: ObservationSpec) -> ModelParams:
    """Fully observed process second-order equivalent to the observed process, with its ``lambda1``.

    Under aggregation the initial mean is that of the first aggregated count,
    ``pi * (lambda1 + nu + (phi + kappa) * lambda1)``.
    """
    if not params.stationary():
        raise DomainError("time-constant parameters must be second-order stationary")
    pi = spec.scalar_pi()
    y = invert_moments(EquivalenceTarget(observed_moments(params, spec), 1.0))
    lam1 = params.initial_mean()
    if spec.aggregation == 1:
        y_lambda1 = pi * lam1
    else:
        y_lambda1 = pi * (lam1 + params.nu + params.xi * lam1)
    return y.with_lambda1(y_lambda1)


def approx_loglik(params: ModelParams, spec: ObservationSpec, data,
                  cfg: LikelihoodConfig = DEFAULT_CONFIG) -> float:
    """Moment-matching approximation to the log-likelihood of underreported (aggregated) counts."""
    x = _values(data)
    if x.shape[0] < 2:
        raise DomainError("need at least two observations")
    y = equivalent_process(params, spec)
    if y.psi < 0:
        raise DomainError(f"equivalent process has negative dispersion {y.psi:.4g}")
    lam, _ = conditional_lambda(x, y.nu, y.phi, y.kappa, y.lambda1, cfg.fallback_negative_lambda)
    value = float(np.sum(negbin_logpmf(x, lam, y.psi)))
    if not math.isfinite(value):
        raise DomainError("approximate log-likelihood is not finite")
    return value


def equivalent_means(params, spec: ObservationSpec, data, cfg: LikelihoodConfig = DEFAULT_CONFIG):
    """Conditional means and dispersions of the fully observed equivalent process along ``data``.

    Accepts ModelParams (scalar ``spec.pi``) or TimeVaryingParams; these are
    the fitted values used for residuals. Returns ``(lam, psi)`` arrays.
    """
    x = _values(data)
    if isinstance(params, ModelParams) and spec.is_constant:
        y = equivalent_process(params, spec)
        lam, _ = conditional_lambda(x, y.nu, y.phi, y.kappa, y.lambda1, cfg.fallback_negative_lambda)
        return lam, np.full(x.shape[0], max(y.psi, 0.0))
    if isinstance(params, ModelParams):
        params = TimeVaryingParams.constant(params, spec.aggregation * x.shape[0])
    path = timevarying_moment_path(params, spec, max_lag=1, init=cfg.tv_init)
    eq = match_timevarying(path, init=cfg.tv_init)
    lambda1 = eq.lambda1
    if cfg.tv_init == "stationary":
        pi = spec.pi_path(len(params))
        lambda1 = pi[0] * params.lambda1
        if spec.aggregation == 2:
            lambda1 += pi[1] * (params.nu[1] + (params.phi[1] + params.kappa) * params.lambda1)
    lam, _ = conditional_lambda(x, eq.nu, eq.phi, eq.kappa, lambda1, cfg.fallback_negative_lambda)
    return lam, np.maximum(eq.psi, 0.0)


def _approx_loglik_floats(nu, phi, kappa, psi, lambda1, x, pi, aggregation, lgx1=None) -> float:
    """Unvalidated twin of :func:`approx_loglik` on plain floats, used inside optimisers.

    Returns ``-inf`` wherever :func:`approx_loglik` would raise.
    """
    xi = phi + kappa
    if not (nu > 0 and phi >= 0 and kappa >= 0 and psi >= 0 and lambda1 >= 0):
        return -math.inf
    if xi >= 1 or xi * xi + phi * phi * psi >= 1:
        return -math.inf
    mu = nu / (1 - xi)
    one_m = 1 - xi * xi
    sigma2 = (one_m + phi * phi) / (one_m - psi * phi * phi) * (mu + psi * mu * mu)
    eta = phi * (1 - kappa * xi) / (one_m + phi * phi)
    if pi != 1:
        mu_t = pi * mu
        s2_t = pi * pi * sigma2 + pi * (1 - pi) * mu
        eta *= 1 - (1 - pi) * mu_t / s2_t if s2_t > 0 else 1.0
        mu, sigma2 = mu_t, s2_t
    if aggregation == 2:
        mu, sigma2, eta, xi = (2 * mu, 2 * (1 + eta) * sigma2,
                               eta * (1 + xi) ** 2 / (2 * (1 + eta)), xi * xi)
        y_lambda1 = pi * (lambda1 + nu + (phi + kappa) * lambda1)
    else:
        y_lambda1 = pi * lambda1
    try:
        y_nu, y_phi, y_kappa, y_psi = _invert(mu, sigma2, eta, xi, 1.0)
    except DomainError:
        return -math.inf
    if y_psi < 0 or y_phi < 0 or not y_nu > 0 or not y_lambda1 > 0:
        return -math.inf
    n = x.shape[0]
    if y_kappa >= 0:
        lam = np.empty(n)
        lam[0] = y_lambda1
        lam[1:] = lfilter([1.0], [1.0, -y_kappa], y_nu + y_phi * x[:-1], zi=[y_kappa * y_lambda1])[0]
    else:
        lam, _ = conditional_lambda(x, y_nu, y_phi, y_kappa, y_lambda1)
    if lgx1 is None:
        lgx1 = gammaln(x + 1.0)
    if y_psi < PSI_POISSON:
        terms = x * np.log(lam) - lam - lgx1
    else:
        size = 1.0 / y_psi
        lp = np.log1p(lam * y_psi)
        if size < 1e5:
            head = gammaln(x + size) - gammaln(size) - lgx1
        else:
            head = -betaln(x + 1.0, size) - np.log(x + size)
        terms = head - size * lp + x * (np.log(lam * y_psi) - lp)
    value = float(terms.sum())
    return value if math.isfinite(value) else -math.inf


def approx_loglik_timevarying(params: TimeVaryingParams, spec: ObservationSpec, data,
                              cfg: LikelihoodConfig = DEFAULT_CONFIG) -> float:
    """Moment-matching log-likelihood with time-varying ``nu_t``, ``phi_t`` and ``pi_t``.

    ``params`` live on the latent time scale, so with ``spec.aggregation == 2``
    the paths are twice as long as ``data``.
    """
    x = _values(data)
    n_lat = len(params)
    if n_lat != spec.aggregation * x.shape[0]:
        raise DomainError(f"parameter paths of length {n_lat} do not fit {x.shape[0]} observations "
                          f"with aggregation {spec.aggregation}")
    lam, psi = equivalent_means(params, spec, x, cfg)
    value = float(np.sum(negbin_logpmf(x, lam, psi)))
    if not math.isfinite(value):
        raise DomainError("approximate log-likelihood is not finite")
    return value


def _approx_loglik_tv_floats(nu, phi, kappa, psi, lambda1, pi, aggregation, x) -> float:
    """Compiled twin of :func:`approx_loglik_timevarying` for a fixed start and the ``set_to_nu`` fallback.

    ``pi`` is the per-step path on the latent scale. Returns ``-inf`` wherever
    the validated route would raise.
    """
    from . import _kernels

    if not (kappa >= 0 and psi >= 0 and lambda1 > 0):
        return -math.inf
    with np.errstate(all="ignore"):
        lam, y_psi, status = _kernels.tv_equivalent_fixed(nu, phi, float(kappa), float(psi), float(lambda1),
                                                           pi, int(aggregation), x)
        if status != _kernels.OK:
            return -math.inf
        value = float(np.sum(negbin_logpmf(x, lam, y_psi)))
    return value if math.isfinite(value) else -math.inf


def _negbin_row_terms(lam: np.ndarray, psi: float):
    """Row-dependent parts of log NegBin(j; lam_i, psi) = col[j] + b[i] + j * c[i]."""
    if psi < PSI_POISSON:
        return -lam, np.log(lam)
    size = 1.0 / psi
    lp = np.log1p(lam * psi)
    return -gammaln(size) - size * lp, np.log(lam * psi) - lp


def _negbin_col_terms(j: np.ndarray, psi: float) -> np.ndarray:
    if psi < PSI_POISSON:
        return -gammaln(j + 1.0)
    return gammaln(j + 1.0 / psi) - gammaln(j + 1.0)


def _log_binom_emission(obs: int, states: np.ndarray, pi: float) -> np.ndarray:
    out = np.full(states.shape[0], -np.inf)
    ok = states >= obs
    s = states[ok].astype(float)
    if pi == 1.0:
        out[ok] = np.where(s == obs, 0.0, -np.inf)
        return out
    out[ok] = (gammaln(s + 1) - gammaln(obs + 1.0) - gammaln(s - obs + 1)
               + obs * math.log(pi) + (s - obs) * math.log1p(-pi))
    return out


class _BoundaryHit(Exception):
    pass


def _forward_once(x, nu, phi, psi, lambda1, pi, n_max, boundary_tol, dense_limit=4096, row_chunk=1024):
    states = np.arange(n_max + 1)
    col_all = _negbin_col_terms(states.astype(float), psi)
    b_all, c_all = _negbin_row_terms(nu + phi * states, psi)
    dense = None
    if n_max + 1 <= dense_limit:
        dense = np.exp(col_all[None, :] + b_all[:, None] + states[None, :] * c_all[:, None])
    log_a = negbin_logpmf(states, lambda1, psi) + _log_binom_emission(int(x[0]), states, pi)
    top = np.max(log_a)
    if not np.isfinite(top):
        return -np.inf
    alpha = np.exp(log_a - top)
    total = alpha.sum()
    loglik = top + math.log(total)
    alpha /= total
    if alpha[-1] > boundary_tol:
        raise _BoundaryHit
    cut = math.exp(_LOG_TINY)
    for t in range(1, x.shape[0]):
        live = np.flatnonzero(alpha > cut)
        rows = slice(live[0], live[-1] + 1)
        log_e = _log_binom_emission(int(x[t]), states, pi)
        e_top = np.max(log_e)
        keep = np.flatnonzero(log_e > e_top + _LOG_TINY)
        cols = np.arange(keep[0], keep[-1] + 1)
        if dense is not None:
            pred = alpha[rows] @ dense[rows, keep[0]:keep[-1] + 1]
        else:
            pred = np.zeros(cols.shape[0])
            jc = cols.astype(float)
            for start in range(rows.start, rows.stop, row_chunk):
                r = np.arange(start, min(start + row_chunk, rows.stop))
                block = col_all[cols][None, :] + b_all[r][:, None] + jc[None, :] * c_all[r][:, None]
                pred += alpha[r] @ np.exp(block)
        new = pred * np.exp(log_e[cols] - e_top)
        total = new.sum()
        if total <= 0:
            return -np.inf
        loglik += e_top + math.log(total)
        alpha = np.zeros(n_max + 1)
        alpha[cols] = new / total
        if alpha[-1] > boundary_tol:
            raise _BoundaryHit
    return loglik


def forward_loglik(params: ModelParams, pi: float, data, cfg: LikelihoodConfig = DEFAULT_CONFIG,
                   n_states: int = None) -> float:
    """Exact log-likelihood of thinned counts for ``kappa = 0`` via the forward algorithm.

    The latent chain moves with ``NegBin(nu + phi * x_prev, psi)``, emits
    ``Bin(x, pi)`` and starts from ``NegBin(lambda1, psi)``. The state space is
    ``0..N`` with ``N`` chosen from the data and doubled whenever filtered
    mass reaches the bound.
    """
    if params.kappa != 0:
        raise DomainError(f"the forward algorithm requires kappa = 0, got {params.kappa}")
    if not 0 < pi <= 1:
        raise DomainError(f"reporting probability must lie in (0, 1], got {pi}")
    if params.nu <= 0:
        raise DomainError("nu must be positive")
    x = _values(data)
    scaled = x.max() / pi
    lambda1 = params.initial_mean()
    if n_states is None:
        n_max = int(math.ceil(scaled + cfg.truncation_sd * math.sqrt(scaled) + cfg.truncation_pad))
        n_max = max(n_max, int(math.ceil(lambda1)) + cfg.truncation_pad)
    else:
        n_max = n_states
    while n_max <= cfg.max_states:
        try:
            return _forward_once(x, params.nu, params.phi, params.psi, lambda1, pi, n_max, cfg.boundary_tol)
        except _BoundaryHit:
            n_max *= 2
    raise DomainError(f"forward algorithm state space exceeded {cfg.max_states} states")
