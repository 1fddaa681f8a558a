"""
Generative model: NegBin INGARCH(1,1) latent counts, binomial thinning and
pairwise temporal aggregation.

The latent process is

    X_t | past ~ NegBin(lambda_t, psi),   Var(X_t | past) = lambda_t + psi * lambda_t**2
    lambda_t = nu + phi * X_{t-1} + kappa * lambda_{t-1}

and the observed process is X~_t | X_t ~ Bin(X_t, pi_t), optionally summed
over consecutive pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import betaln, gammaln

from .exceptions import DomainError

#: below this value the negative binomial is replaced by its Poisson limit
PSI_POISSON = 1e-8

#: seasonal period in latent steps (half-weeks) used by the seasonal model
DEFAULT_PERIOD = 104


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the latent NegBin INGARCH(1,1) process.

    Parameters
    ----------
    nu : float
        Endemic component (mean immigration per step).
    phi : float
        Epidemic autoregression on the previous count.
    kappa : float
        Feedback on the previous conditional mean.
    psi : float
        Overdispersion, ``Var = lambda + psi * lambda**2``.
    lambda1 : float, optional
        Initial conditional mean. ``None`` means the stationary mean.
    approximating : bool
        Marks the parameters of a second-order equivalent approximating
        process. Such processes may carry a modestly negative ``kappa`` (from
        temporal aggregation) or negative ``kappa``/``psi`` (from post-hoc
        de-biasing); ordinary parameter sets may not.
    """

    nu: float
    phi: float
    kappa: float
    psi: float
    lambda1: Optional[float] = None
    approximating: bool = False

    def __post_init__(self):
        for name in ("nu", "phi", "kappa", "psi"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value}")
        if self.lambda1 is not None and not (math.isfinite(self.lambda1) and self.lambda1 >= 0):
            raise DomainError(f"lambda1 must be finite and >= 0, got {self.lambda1}")
        checked = ("nu", "phi") if self.approximating else ("nu", "phi", "kappa", "psi")
        for name in checked:
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0, got {getattr(self, name)}")

    @property
    def xi(self) -> float:
        """Decay factor of the autocorrelation function, ``phi + kappa``."""
        return self.phi + self.kappa

    def stationary(self) -> bool:
        """Second-order stationarity: ``(phi + kappa)**2 + phi**2 * psi < 1``."""
        return self.xi ** 2 + self.phi ** 2 * self.psi < 1 and self.xi < 1

    def stationary_mean(self) -> float:
        if self.xi >= 1:
            raise DomainError(f"no stationary mean for phi + kappa = {self.xi} >= 1")
        return self.nu / (1 - self.xi)

    def initial_mean(self) -> float:
        """``lambda1`` if given, otherwise the stationary mean."""
        return self.stationary_mean() if self.lambda1 is None else self.lambda1

    def with_lambda1(self, lambda1: Optional[float]) -> "ModelParams":
        return ModelParams(self.nu, self.phi, self.kappa, self.psi, lambda1, self.approximating)

    def as_tuple(self) -> tuple:
        return (self.nu, self.phi, self.kappa, self.psi)


@dataclass(frozen=True)
class TimeVaryingParams:
    """Latent parameters with time-varying ``nu_t`` and ``phi_t``.

    ``kappa`` and ``psi`` are time-constant and ``lambda1`` is the initial
    conditional mean.
    """

    nu: np.ndarray
    phi: np.ndarray
    kappa: float
    psi: float
    lambda1: float

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        if nu.ndim != 1 or nu.shape != phi.shape:
            raise DomainError(f"nu and phi paths must be 1-d of equal length, got {nu.shape} and {phi.shape}")
        if not (np.all(np.isfinite(nu)) and np.all(np.isfinite(phi))):
            raise DomainError("nu and phi paths must be finite")
        if np.any(nu < 0) or np.any(phi < 0) or self.kappa < 0 or self.psi < 0 or self.lambda1 < 0:
            raise DomainError("time-varying parameters must be non-negative")
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "phi", phi)

    def __len__(self) -> int:
        return self.nu.shape[0]

    @classmethod
    def constant(cls, params: ModelParams, length: int) -> "TimeVaryingParams":
        return cls(
            np.full(length, params.nu),
            np.full(length, params.phi),
            params.kappa,
            params.psi,
            params.initial_mean(),
        )


def seasonal_path(alpha: float, gamma: float, delta: float, length: int,
                  period: int = DEFAULT_PERIOD) -> np.ndarray:
    """``exp(alpha + gamma * sin(2 pi t / period) + delta * cos(2 pi t / period))`` for t = 1..length."""
    t = np.arange(1, length + 1)
    angle = 2 * np.pi * t / period
    return np.exp(alpha + gamma * np.sin(angle) + delta * np.cos(angle))


@dataclass(frozen=True)
class ObservationSpec:
    """Reporting probability (scalar or one value per latent step) and aggregation factor."""

    pi: Union[float, np.ndarray] = 1.0
    aggregation: int = 1

    def __post_init__(self):
        if self.aggregation not in (1, 2):
            raise DomainError(f"aggregation must be 1 or 2, got {self.aggregation}")
        pi = np.asarray(self.pi, dtype=float)
        if pi.ndim > 1:
            raise DomainError("pi must be a scalar or a 1-d path")
        if not np.all(np.isfinite(pi)) or np.any(pi <= 0) or np.any(pi > 1):
            raise DomainError("every reporting probability must lie in (0, 1]")
        if pi.ndim == 0:
            object.__setattr__(self, "pi", float(pi))
        else:
            object.__setattr__(self, "pi", pi)

    @property
    def is_constant(self) -> bool:
        return np.ndim(self.pi) == 0

    def pi_path(self, latent_length: int) -> np.ndarray:
        """Reporting probabilities per latent step."""
        if self.is_constant:
            return np.full(latent_length, self.pi)
        if len(self.pi) != latent_length:
            raise DomainError(f"pi path has length {len(self.pi)}, latent series has {latent_length}")
        return self.pi

    def scalar_pi(self) -> float:
        if not self.is_constant:
            raise DomainError("a scalar reporting probability is required here")
        return self.pi


@dataclass(frozen=True)
class CountSeries:
    """Non-negative integer counts with an optional calendar anchor."""

    values: np.ndarray
    t0: Optional[str] = None
    step_label: str = "step"
    index: Optional[Sequence[str]] = field(default=None, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 1:
            raise DomainError("count series must be one-dimensional")
        if values.size and not np.all(np.isfinite(values.astype(float))):
            raise DomainError("counts must be finite")
        as_int = np.rint(values).astype(np.int64)
        if not np.array_equal(as_int, values):
            raise DomainError("counts must be integers")
        if np.any(as_int < 0):
            raise DomainError("counts must be non-negative")
        object.__setattr__(self, "values", as_int)

    def __len__(self) -> int:
        return self.values.shape[0]

    def require_length(self, minimum: int = 2) -> None:
        if len(self) < minimum:
            raise DomainError(f"series of length {len(self)} is too short (need >= {minimum})")


def negbin_logpmf(x, lam, psi):
    """Log-pmf of the negative binomial with mean ``lam`` and ``Var = lam + psi * lam**2``.

    Vectorised over all arguments. ``psi`` below ``PSI_POISSON`` gives the
    Poisson log-pmf.
    """
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    psi_arr = np.asarray(psi, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(lam)) and np.all(np.isfinite(psi_arr))):
        raise DomainError("negbin_logpmf requires finite inputs")
    if np.any(lam <= 0):
        raise DomainError("negbin_logpmf requires lambda > 0")
    if np.any(psi_arr < 0):
        raise DomainError("negbin_logpmf requires psi >= 0")
    if np.any(x < 0):
        raise DomainError("negbin_logpmf requires x >= 0")
    if psi_arr.ndim == 0:
        out = _negbin_logpmf_scalar_psi(x, lam, float(psi_arr))
    else:
        out = np.where(psi_arr < PSI_POISSON,
                       _negbin_logpmf_scalar_psi(x, lam, 0.0),
                       _negbin_logpmf_scalar_psi(x, lam, np.maximum(psi_arr, PSI_POISSON)))
    return out[()] if np.ndim(out) == 0 else out


def _negbin_logpmf_scalar_psi(x, lam, psi):
    if np.ndim(psi) == 0 and psi < PSI_POISSON:
        return x * np.log(lam) - lam - gammaln(x + 1)
    size = 1.0 / psi
    lp = np.log1p(lam * psi)
    if np.ndim(psi) == 0 and size < 1e5:
        # gammaln differences lose ~size * eps, fine below 1e5
        head = gammaln(x + size) - gammaln(size) - gammaln(x + 1)
    else:
        head = -betaln(x + 1, size) - np.log(x + size)
    return head - size * lp + x * (np.log(lam * psi) - lp)


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator keyed by ``(seed, *keys)``, e.g. ``(seed, replicate)``."""
    return np.random.default_rng([int(seed), *[int(k) for k in keys]])


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_negbin(rng: np.random.Generator, lam, psi: float):
    """Gamma-Poisson draw with mean ``lam`` and dispersion ``psi``."""
    lam = np.asarray(lam, dtype=float)
    if psi < PSI_POISSON:
        return rng.poisson(lam)
    rate = rng.gamma(1.0 / psi, psi * lam)
    return rng.poisson(rate)


def simulate_latent(params: Union[ModelParams, TimeVaryingParams], length: Optional[int] = None,
                    seed=None, n_series: Optional[int] = None):
    """Simulate the latent process.

    Parameters
    ----------
    params : ModelParams or TimeVaryingParams
        For time-varying parameters the length is taken from the paths.
    length : int
        Number of steps (ignored for time-varying parameters).
    seed : int, numpy Generator or None
    n_series : int, optional
        If given, simulate that many independent series at once and return
        arrays of shape ``(n_series, length)`` instead of a CountSeries.

    Returns
    -------
    (CountSeries, ndarray) or (ndarray, ndarray)
        Counts and the conditional-mean path ``lambda_t``.
    """
    rng = _as_rng(seed)
    if isinstance(params, TimeVaryingParams):
        nu, phi = params.nu, params.phi
        length = len(params)
        lambda1 = params.lambda1
    else:
        if length is None or length < 1:
            raise DomainError("length must be >= 1")
        nu = np.full(length, params.nu)
        phi = np.full(length, params.phi)
        lambda1 = params.initial_mean()
    kappa, psi = params.kappa, params.psi
    shape = (n_series,) if n_series is not None else ()
    x = np.zeros(shape + (length,), dtype=np.int64)
    lam = np.zeros(shape + (length,))
    lam[..., 0] = lambda1
    x[..., 0] = sample_negbin(rng, np.broadcast_to(lambda1, shape), psi)
    for t in range(1, length):
        lam[..., t] = nu[t] + phi[t] * x[..., t - 1] + kappa * lam[..., t - 1]
        x[..., t] = sample_negbin(rng, lam[..., t], psi)
    if n_series is not None:
        return x, lam
    return CountSeries(x, step_label="latent step"), lam


def thin_series(latent, spec: ObservationSpec, seed=None):
    """Binomial thinning with ``spec.pi`` followed by optional pairwise summation.

    Accepts a CountSeries (returns a CountSeries) or an integer array whose
    last axis is time (returns an array).
    """
    rng = _as_rng(seed)
    values = latent.values if isinstance(latent, CountSeries) else np.asarray(latent)
    length = values.shape[-1]
    pi = spec.pi_path(length)
    if np.all(pi == 1.0):
        thinned = values.copy()
    else:
        thinned = rng.binomial(values, np.broadcast_to(pi, values.shape))
    if spec.aggregation == 2:
        n = length // 2
        thinned = thinned[..., 0:2 * n:2] + thinned[..., 1:2 * n:2]
    if isinstance(latent, CountSeries):
        label = latent.step_label if spec.aggregation == 1 else "aggregated step"
        return CountSeries(thinned, t0=latent.t0, step_label=label)
    return thinned


def inflate_counts(series: CountSeries, pi: float) -> CountSeries:
    """Multiplication-factor correction: divide by ``pi`` and round half to even."""
    return CountSeries(np.round(series.values / pi).astype(np.int64), t0=series.t0,
                       step_label=series.step_label)
