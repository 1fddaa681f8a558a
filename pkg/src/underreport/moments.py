"""
Marginal first- and second-order moments of latent, thinned and aggregated
processes.

Every process handled here has an autocorrelation function of the form
``rho(d) = eta * xi**(d - 1)``, so a summary stores ``(mu, sigma2, eta, xi)``
rather than an ACF vector. Time-varying parameters are handled by exact
forward recursions that return a banded autocovariance table.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DomainError
from .model import ModelParams, ObservationSpec, TimeVaryingParams


@dataclass(frozen=True)
class MomentSummary:
    """Mean, variance, lag-1 autocorrelation and geometric ACF decay."""

    mu: float
    sigma2: float
    eta_prime: float
    xi_prime: float

    def __post_init__(self):
        vals = (self.mu, self.sigma2, self.eta_prime, self.xi_prime)
        if not all(np.isfinite(vals)):
            raise DomainError(f"moment summary must be finite, got {vals}")
        if self.mu < 0 or self.sigma2 < 0:
            raise DomainError("mean and variance must be non-negative")
        if not -1 < self.eta_prime < 1:
            raise DomainError(f"lag-1 autocorrelation {self.eta_prime} outside (-1, 1)")
        if not -1 < self.xi_prime < 1:
            raise DomainError(f"decay factor {self.xi_prime} outside (-1, 1)")

    def acf(self, d):
        """Autocorrelation at lag(s) ``d >= 1``."""
        d = np.asarray(d)
        return self.eta_prime * self.xi_prime ** (d - 1)

    def autocov(self, d):
        return self.sigma2 * self.acf(d)

    @property
    def index_of_dispersion(self) -> float:
        return self.sigma2 / self.mu


def _stationary_var_lambda(params: ModelParams, m: MomentSummary) -> float:
    # Var(X) = E[lambda] + psi E[lambda^2] + Var(lambda)
    return (m.sigma2 - m.mu - params.psi * m.mu ** 2) / (1 + params.psi)


def stationary_moments(params: ModelParams) -> MomentSummary:
    """Stationary mean, variance and ACF of the latent process."""
    if not params.stationary():
        raise DomainError(
            "parameters are not second-order stationary: "
            f"(phi + kappa)^2 + phi^2 psi = {params.xi ** 2 + params.phi ** 2 * params.psi:.6g} >= 1"
        )
    nu, phi, kappa, psi = params.as_tuple()
    xi = phi + kappa
    mu = nu / (1 - xi)
    one_m = 1 - xi ** 2
    sigma2 = (one_m + phi ** 2) / (one_m - psi * phi ** 2) * (mu + psi * mu ** 2)
    eta = phi * (1 - kappa * xi) / (one_m + phi ** 2)
    return MomentSummary(mu, sigma2, eta, xi)


def stationary_var_lambda(params: ModelParams) -> float:
    """Stationary variance of the conditional mean ``lambda_t``."""
    return _stationary_var_lambda(params, stationary_moments(params))


def attenuation_factor(m: MomentSummary, pi: float) -> float:
    """``tau = 1 - (1 - pi) * mu_thinned / sigma2_thinned`` for thinning ``m`` with ``pi``."""
    t = thin_moments(m, pi)
    return 1 - (1 - pi) * t.mu / t.sigma2 if t.sigma2 > 0 else 1.0


def thin_moments(m: MomentSummary, pi: float) -> MomentSummary:
    """Moments after independent binomial thinning with probability ``pi``."""
    if not 0 < pi <= 1:
        raise DomainError(f"reporting probability must lie in (0, 1], got {pi}")
    if pi == 1:
        return m
    mu = pi * m.mu
    sigma2 = pi ** 2 * m.sigma2 + pi * (1 - pi) * m.mu
    tau = 1 - (1 - pi) * mu / sigma2 if sigma2 > 0 else 1.0
    return MomentSummary(mu, sigma2, tau * m.eta_prime, m.xi_prime)


def aggregate_moments(m: MomentSummary) -> MomentSummary:
    """Moments of pairwise sums ``X_{2t-1} + X_{2t}``."""
    eta, xi = m.eta_prime, m.xi_prime
    return MomentSummary(
        2 * m.mu,
        2 * (1 + eta) * m.sigma2,
        eta * (1 + xi) ** 2 / (2 * (1 + eta)),
        xi ** 2,
    )


def observed_moments(params: ModelParams, spec: ObservationSpec) -> MomentSummary:
    """Stationary moments of the observed (thinned, then optionally aggregated) process."""
    m = thin_moments(stationary_moments(params), spec.scalar_pi())
    if spec.aggregation == 2:
        m = aggregate_moments(m)
    return m


def empirical_moments(x, max_lag: int = 2) -> MomentSummary:
    """Moment summary of an observed series (ACF decay from lags 1 and 2).

    Used for method-of-moments starting values, so the result is clamped into
    the valid range instead of raising.
    """
    x = np.asarray(x, dtype=float)
    mu = x.mean()
    xc = x - mu
    var = np.mean(xc ** 2)
    if var <= 0:
        return MomentSummary(max(mu, 1e-8), 0.0, 0.0, 0.0)
    r = [np.mean(xc[d:] * xc[:-d]) / var for d in range(1, max_lag + 1)]
    eta = float(np.clip(r[0], 0.0, 0.95))
    xi = float(np.clip(r[1] / r[0], 0.0, 0.95)) if r[0] > 1e-3 else 0.0
    xi = max(xi, eta)
    return MomentSummary(float(mu), float(var), eta, xi)


@dataclass(frozen=True)
class MomentPath:
    """Exact moments of a nonstationary process.

    Attributes
    ----------
    mu_t, var_t : ndarray, shape (n,)
    autocov : ndarray, shape (n, L)
        ``autocov[t, d - 1] = Cov(X_{t-d}, X_t)``; NaN where ``t - d`` falls
        before the start of the process.
    decay : ndarray, shape (n,)
        Factor ``D_t`` with ``Cov(X_s, X_t) = D_t Cov(X_s, X_{t-1})`` for all
        ``s <= t - 2``. NaN where undefined.
    var_lambda : ndarray or None
        Variance of the conditional mean (latent paths only).
    """

    mu_t: np.ndarray
    var_t: np.ndarray
    autocov: np.ndarray
    decay: np.ndarray
    var_lambda: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.mu_t.shape[0]

    @property
    def max_lag(self) -> int:
        return self.autocov.shape[1]

    def autocorr(self) -> np.ndarray:
        """``Corr(X_{t-d}, X_t)``; NaN where ``t - d`` precedes the path."""
        n, L = self.autocov.shape
        out = np.full((n, L), np.nan)
        for d in range(1, min(L, n - 1) + 1):
            out[d:, d - 1] = self.autocov[d:, d - 1] / np.sqrt(self.var_t[d:] * self.var_t[:-d])
        return out


def latent_moment_path(params: TimeVaryingParams, max_lag: int = 10, init: str = "fixed") -> MomentPath:
    """Exact moments of the latent process with time-varying ``nu_t``, ``phi_t``.

    Parameters
    ----------
    init : {"fixed", "stationary"}
        ``"fixed"`` conditions on the deterministic initial mean
        ``params.lambda1``. ``"stationary"`` instead treats ``X_1`` as drawn
        from the stationary distribution implied by the step-1 parameters,
        with that regime extended before ``t = 1``.
    """
    n = len(params)
    nu, phi, kappa, psi = params.nu, params.phi, params.kappa, params.psi
    xi = phi + kappa
    m = np.empty(n)
    v = np.empty(n)
    vl = np.empty(n)
    c = np.full((n, max_lag), np.nan)
    decay = np.full(n, np.nan)
    if init == "fixed":
        m[0] = params.lambda1
        vl[0] = 0.0
        v[0] = m[0] + psi * m[0] ** 2
    elif init == "stationary":
        p1 = ModelParams(nu[0], phi[0], kappa, psi)
        s = stationary_moments(p1)
        m[0], v[0], vl[0] = s.mu, s.sigma2, _stationary_var_lambda(p1, s)
        c[0] = s.autocov(np.arange(1, max_lag + 1))
        decay[0] = xi[0]
    else:
        raise DomainError(f"unknown init mode {init!r}")
    for t in range(1, n):
        m[t] = nu[t] + xi[t] * m[t - 1]
        vl[t] = phi[t] ** 2 * v[t - 1] + (kappa ** 2 + 2 * phi[t] * kappa) * vl[t - 1]
        v[t] = m[t] + psi * (vl[t] + m[t] ** 2) + vl[t]
        c[t, 0] = phi[t] * v[t - 1] + kappa * vl[t - 1]
        c[t, 1:] = xi[t] * c[t - 1, :-1]
        decay[t] = xi[t]
    return MomentPath(m, v, c, decay, vl)


def thin_path(path: MomentPath, pi: np.ndarray, stationary_start: bool = False) -> MomentPath:
    """Apply independent binomial thinning with per-step probabilities ``pi``."""
    n, L = path.autocov.shape
    pi = np.asarray(pi, dtype=float)
    m = pi * path.mu_t
    v = pi ** 2 * path.var_t + pi * (1 - pi) * path.mu_t
    # pre-sample steps share pi_1 when the process starts stationary
    padded = np.concatenate([np.full(L, pi[0]), pi])
    c = np.empty_like(path.autocov)
    for d in range(1, L + 1):
        c[:, d - 1] = padded[L - d:L - d + n] * pi * path.autocov[:, d - 1]
    ratio = pi / np.concatenate([[pi[0]], pi[:-1]])
    decay = path.decay * ratio
    if not stationary_start:
        decay[0] = np.nan
    return MomentPath(m, v, c, decay)


def aggregate_path(path: MomentPath, max_lag: Optional[int] = None) -> MomentPath:
    """Moments of pairwise sums from a path whose band covers ``2 * max_lag + 1`` lags."""
    n_lat, L_lat = path.autocov.shape
    if max_lag is None:
        max_lag = (L_lat - 1) // 2
    if 2 * max_lag + 1 > L_lat:
        raise DomainError(f"latent lag band {L_lat} too narrow for {max_lag} aggregated lags")
    n = n_lat // 2
    odd = slice(0, 2 * n, 2)    # X_{2k-1}
    even = slice(1, 2 * n, 2)   # X_{2k}
    c = path.autocov
    m = path.mu_t[odd] + path.mu_t[even]
    v = path.var_t[odd] + path.var_t[even] + 2 * c[even, 0]
    cov = np.empty((n, max_lag))
    for d in range(1, max_lag + 1):
        cov[:, d - 1] = (c[odd, 2 * d - 1] + c[odd, 2 * d - 2]
                         + c[even, 2 * d] + c[even, 2 * d - 1])
    dl = path.decay
    decay = np.full(n, np.nan)
    k = np.arange(1, n)
    # D_k = d_{2k-1} d_{2k-2} (1 + d_{2k}) / (1 + d_{2k-2}), 1-based latent indices
    decay[1:] = dl[2 * k] * dl[2 * k - 1] * (1 + dl[2 * k + 1]) / (1 + dl[2 * k - 1])
    if np.isfinite(dl[0]):
        # stationary start: the pre-sample regime repeats step 1
        decay[0] = dl[0] * dl[0] * (1 + dl[1]) / (1 + dl[0])
    return MomentPath(m, v, cov, decay)


def timevarying_moment_path(params: TimeVaryingParams, spec: ObservationSpec, max_lag: int = 10,
                            init: str = "fixed") -> MomentPath:
    """Exact moments of the observed process under time-varying parameters.

    The latent path is thinned with ``spec.pi`` (scalar or per latent step)
    and, for ``spec.aggregation == 2``, summed over pairs. ``max_lag`` counts
    steps of the observed process.
    """
    n = len(params)
    pi = spec.pi_path(n)
    latent_lag = 2 * max_lag + 1 if spec.aggregation == 2 else max_lag
    path = latent_moment_path(params, latent_lag, init=init)
    path = thin_path(path, pi, stationary_start=(init == "stationary"))
    if spec.aggregation == 2:
        path = aggregate_path(path, max_lag)
    return path
