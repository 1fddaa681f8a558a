"""
Second-order equivalent processes.

Given the marginal moments of an observed process, find the parameters of a
process from the same INGARCH class which, after thinning with ``pi_Y``, has
identical mean, variance and autocorrelation function. With ``pi_Y = 1`` the
equivalent process is fully observed and its likelihood is cheap to
evaluate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np

from .exceptions import DomainError, NoRealMatch
from .model import ModelParams, TimeVaryingParams
from .moments import MomentPath, MomentSummary, stationary_moments, thin_moments

LINEAR_TOL = 1e-12


class Provenance(enum.Enum):
    THINNED = "thinned"
    AGGREGATED = "aggregated"
    THINNED_AGGREGATED = "thinned_aggregated"


@dataclass(frozen=True)
class EquivalenceTarget:
    """Observed moments to be matched, with the reporting probability of the matching process."""

    target: MomentSummary
    pi_Y: float = 1.0
    provenance: Provenance = Provenance.THINNED

    def __post_init__(self):
        if not 0 < self.pi_Y <= 1:
            raise DomainError(f"pi_Y must lie in (0, 1], got {self.pi_Y}")


def _invert(mu: float, sigma2: float, eta: float, xi: float, pi_y: float):
    """Solve the four matching equations; returns (nu, phi, kappa, psi)."""
    if sigma2 <= 0:
        if eta != 0:
            raise NoRealMatch("zero variance with non-zero autocorrelation")
        return mu * (1 - xi) / pi_y, 0.0, xi, 0.0
    tau_y = 1 - (1 - pi_y) * mu / sigma2
    if tau_y <= 0:
        raise NoRealMatch(f"no real-valued match: attenuation factor {tau_y:.4g} <= 0 for pi_Y = {pi_y}")
    one_m = 1 - xi ** 2
    a = tau_y * xi - eta
    b = tau_y * one_m
    c = eta * one_m
    if abs(a) < LINEAR_TOL:
        phi = c / b
    else:
        disc = b * b + 4 * a * c
        if disc < 0:
            raise NoRealMatch(f"no real-valued match: negative discriminant {disc:.4g}")
        # the "+sqrt" root, rationalised to stay accurate as a -> 0
        phi = 2 * c / (np.sqrt(disc) + b)
    kappa = xi - phi
    big_a = one_m + phi ** 2
    psi = (one_m * tau_y * sigma2 - pi_y * mu * big_a) / (phi ** 2 * tau_y * sigma2 + mu ** 2 * big_a)
    nu = mu * (1 - xi) / pi_y
    return float(nu), float(phi), float(kappa), float(psi)


def _params(values, lambda1=None) -> ModelParams:
    nu, phi, kappa, psi = values
    negative = kappa < 0 or psi < 0
    return ModelParams(nu, phi, kappa, psi, lambda1, approximating=negative)


def invert_moments(t: EquivalenceTarget) -> ModelParams:
    """Parameters of the process that matches ``t.target`` after thinning with ``t.pi_Y``.

    A negative ``kappa`` or ``psi`` (possible when ``pi_Y`` is smaller than
    the reporting probability that generated the target) is returned with
    ``approximating=True`` instead of raising.

    Raises
    ------
    NoRealMatch
        If the matching equations have no real solution.
    """
    m = t.target
    return _params(_invert(m.mu, m.sigma2, m.eta_prime, m.xi_prime, t.pi_Y))


def invert_aggregated(t: EquivalenceTarget) -> ModelParams:
    """Equivalent process defined directly on the aggregated time scale.

    ``t.target`` must come from :func:`aggregate_moments` (possibly after
    thinning). The decay of the target is already squared, so the same
    matching system applies. For latent ``kappa < 2 - sqrt(3)`` the result may
    carry a negative ``kappa`` (never below ``sqrt(8) - 3`` without
    thinning); it is returned flagged as approximating.
    """
    if t.provenance is Provenance.THINNED:
        t = EquivalenceTarget(t.target, t.pi_Y, Provenance.AGGREGATED)
    return invert_moments(t)


def forward_map(params: ModelParams, pi: float = 1.0) -> MomentSummary:
    """Observed moments of ``params`` thinned with ``pi`` (inverse of :func:`invert_moments`)."""
    return thin_moments(stationary_moments(params), pi)


def predict_naive_bias(true_params: ModelParams, pi: float, method: str = "ignore") -> ModelParams:
    """Large-sample limits of naive estimates from data thinned with ``pi``.

    Parameters
    ----------
    method : {"ignore", "multiplication_factor"}
        ``"ignore"`` fits the thinned counts as if fully reported;
        ``"multiplication_factor"`` fits the counts inflated by ``1 / pi``.
    """
    observed = thin_moments(stationary_moments(true_params), pi)
    if method == "ignore":
        target = observed
    elif method == "multiplication_factor":
        target = MomentSummary(observed.mu / pi, observed.sigma2 / pi ** 2,
                               observed.eta_prime, observed.xi_prime)
    else:
        raise DomainError(f"unknown naive method {method!r}")
    return invert_moments(EquivalenceTarget(target, 1.0))


class Reproduction(NamedTuple):
    r_eff: Union[float, np.ndarray]
    serial_interval: float
    """Mean serial interval in latent steps, or in days when a step length was given."""


def effective_reproduction(params: Union[ModelParams, TimeVaryingParams],
                           step_days: Optional[float] = None) -> Reproduction:
    """``R_eff = phi / (1 - kappa)`` and mean serial interval ``1 / (1 - kappa)``."""
    kappa = params.kappa
    if kappa >= 1:
        raise DomainError(f"kappa must be < 1 for a finite serial interval, got {kappa}")
    r_eff = params.phi / (1 - kappa)
    serial = 1 / (1 - kappa)
    if step_days is not None:
        serial *= step_days
    return Reproduction(r_eff, serial)


@dataclass(frozen=True)
class TimeVaryingEquivalent:
    """Fully observed process with step-wise parameters matching a moment path.

    ``nu[k]``, ``phi[k]``, ``kappa[k]`` drive ``lambda_k`` from step ``k - 1``;
    entries at ``k = 0`` describe the stationary start (NaN for a fixed start).
    ``lambda1`` is the initial conditional mean for a fixed start.
    """

    nu: np.ndarray
    phi: np.ndarray
    kappa: np.ndarray
    psi: np.ndarray
    lambda1: float
    var_lambda: np.ndarray


def match_timevarying(path: MomentPath, init: str = "fixed") -> TimeVaryingEquivalent:
    """Step-wise moment matching of a fully observed process to ``path``.

    At every step the equivalent process reproduces the mean, the variance,
    the lag-1 autocovariance and the geometric decay of all higher-lag
    autocovariances of ``path`` exactly. This needs step-specific ``kappa``
    and ``psi`` as well as ``nu`` and ``phi``.

    Raises
    ------
    NoRealMatch
        If the endemic term of the equivalent process is not positive at some
        step; the message names the step.
    """
    n = len(path)
    m, v, c1, dec = path.mu_t, path.var_t, path.autocov[:, 0], path.decay
    nu = np.full(n, np.nan)
    phi = np.full(n, np.nan)
    kappa = np.full(n, np.nan)
    psi = np.empty(n)
    vl = np.empty(n)
    if init == "fixed":
        lambda1 = m[0]
        vl[0] = 0.0
        psi[0] = (v[0] - m[0]) / m[0] ** 2 if m[0] > 0 else 0.0
    elif init == "stationary":
        eta = c1[0] / v[0] if v[0] > 0 else 0.0
        y = _invert(m[0], v[0], eta, dec[0], 1.0)
        nu[0], phi[0], kappa[0], psi[0] = y
        p = ModelParams(*y, approximating=True)
        s = stationary_moments(p)
        vl[0] = (s.sigma2 - s.mu - p.psi * s.mu ** 2) / (1 + p.psi)
        lambda1 = np.nan
    else:
        raise DomainError(f"unknown init mode {init!r}")
    for k in range(1, n):
        d = dec[k]
        nu_k = m[k] - d * m[k - 1]
        if not nu_k > 0:
            raise NoRealMatch(f"no valid match at step {k + 1}: endemic term {nu_k:.4g} <= 0")
        phi_k = (c1[k] - d * vl[k - 1]) / (v[k - 1] - vl[k - 1])
        kappa_k = d - phi_k
        vl[k] = phi_k ** 2 * v[k - 1] + (kappa_k ** 2 + 2 * phi_k * kappa_k) * vl[k - 1]
        psi[k] = (v[k] - m[k] - vl[k]) / (vl[k] + m[k] ** 2)
        nu[k], phi[k], kappa[k] = nu_k, phi_k, kappa_k
    return TimeVaryingEquivalent(nu, phi, kappa, psi, float(lambda1), vl)
