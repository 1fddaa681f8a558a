"""
Compiled inner loops for the time-varying approximate likelihood.

These fuse the latent moment recursion, thinning, pairwise aggregation,
step-wise matching and the conditional-mean filter for a fixed start. They
return status codes instead of raising; the validated route lives in
:mod:`underreport.moments`, :mod:`underreport.equivalence` and
:mod:`underreport.likelihood`, and the test-suite checks both agree.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

OK = 0
NO_MATCH = 1
BAD_LAMBDA = 2
NOT_FINITE = 3


@njit(cache=True)
def observed_path_fixed(nu, phi, kappa, psi, lambda1, pi, aggregation):
    """Mean, variance, lag-1 autocovariance and decay of the observed process (fixed start)."""
    n_lat = nu.shape[0]
    m = np.empty(n_lat)
    v = np.empty(n_lat)
    vl = np.empty(n_lat)
    c1 = np.full(n_lat, np.nan)
    c2 = np.full(n_lat, np.nan)
    c3 = np.full(n_lat, np.nan)
    dec = np.full(n_lat, np.nan)
    m[0] = lambda1
    vl[0] = 0.0
    v[0] = lambda1 + psi * lambda1 ** 2
    for t in range(1, n_lat):
        xi = phi[t] + kappa
        m[t] = nu[t] + xi * m[t - 1]
        vl[t] = phi[t] ** 2 * v[t - 1] + (kappa ** 2 + 2 * phi[t] * kappa) * vl[t - 1]
        v[t] = m[t] + psi * (vl[t] + m[t] ** 2) + vl[t]
        c1[t] = phi[t] * v[t - 1] + kappa * vl[t - 1]
        c2[t] = xi * c1[t - 1]
        c3[t] = xi * c2[t - 1]
        dec[t] = xi * pi[t] / pi[t - 1]
    # thinning
    for t in range(n_lat):
        p = pi[t]
        v[t] = p ** 2 * v[t] + p * (1 - p) * m[t]
        m[t] = p * m[t]
        if t >= 1:
            c1[t] *= pi[t - 1] * p
        if t >= 2:
            c2[t] *= pi[t - 2] * p
        if t >= 3:
            c3[t] *= pi[t - 3] * p
    if aggregation == 1:
        return m, v, c1, dec
    n = n_lat // 2
    am = np.empty(n)
    av = np.empty(n)
    ac = np.full(n, np.nan)
    ad = np.full(n, np.nan)
    for k in range(n):
        o, e = 2 * k, 2 * k + 1
        am[k] = m[o] + m[e]
        av[k] = v[o] + v[e] + 2 * c1[e]
        if k >= 1:
            ac[k] = c2[o] + c1[o] + c3[e] + c2[e]
            ad[k] = dec[o] * dec[o - 1] * (1 + dec[e]) / (1 + dec[o - 1])
    return am, av, ac, ad


@njit(cache=True)
def match_fixed(m, v, c1, dec):
    """Step-wise matching for a fixed start; returns (nu, phi, kappa, psi, status, step)."""
    n = m.shape[0]
    y_nu = np.full(n, np.nan)
    y_phi = np.full(n, np.nan)
    y_kappa = np.full(n, np.nan)
    y_psi = np.empty(n)
    vl_prev = 0.0
    y_psi[0] = (v[0] - m[0]) / m[0] ** 2 if m[0] > 0 else 0.0
    for k in range(1, n):
        d = dec[k]
        nu_k = m[k] - d * m[k - 1]
        if not nu_k > 0:
            return y_nu, y_phi, y_kappa, y_psi, NO_MATCH, k + 1
        phi_k = (c1[k] - d * vl_prev) / (v[k - 1] - vl_prev)
        kappa_k = d - phi_k
        vl_k = phi_k ** 2 * v[k - 1] + (kappa_k ** 2 + 2 * phi_k * kappa_k) * vl_prev
        y_psi[k] = (v[k] - m[k] - vl_k) / (vl_k + m[k] ** 2)
        y_nu[k], y_phi[k], y_kappa[k] = nu_k, phi_k, kappa_k
        vl_prev = vl_k
    return y_nu, y_phi, y_kappa, y_psi, OK, 0


@njit(cache=True)
def filter_lambda(x, nu, phi, kappa, lambda1):
    """Conditional means with non-positive values replaced by ``nu_t``; status BAD_LAMBDA if that fails."""
    n = x.shape[0]
    lam = np.empty(n)
    lam[0] = lambda1
    if not lambda1 > 0:
        return lam, BAD_LAMBDA
    for t in range(1, n):
        cur = nu[t] + phi[t] * x[t - 1] + kappa[t] * lam[t - 1]
        if cur <= 0:
            cur = nu[t]
            if cur <= 0:
                return lam, BAD_LAMBDA
        if not math.isfinite(cur):
            return lam, NOT_FINITE
        lam[t] = cur
    return lam, OK


@njit(cache=True)
def tv_equivalent_fixed(nu, phi, kappa, psi, lambda1, pi, aggregation, x):
    """Conditional means and dispersions of the fully observed equivalent process."""
    m, v, c1, dec = observed_path_fixed(nu, phi, kappa, psi, lambda1, pi, aggregation)
    n = m.shape[0]
    for k in range(n):
        if not (math.isfinite(m[k]) and math.isfinite(v[k])):
            return m, v, NOT_FINITE
    y_nu, y_phi, y_kappa, y_psi, status, _ = match_fixed(m, v, c1, dec)
    if status != OK:
        return m, v, status
    lam, status = filter_lambda(x, y_nu, y_phi, y_kappa, m[0])
    for k in range(n):
        if y_psi[k] < 0:
            y_psi[k] = 0.0
    return lam, y_psi, status
