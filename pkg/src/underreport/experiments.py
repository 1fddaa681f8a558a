"""
Seeded simulation studies.

Each study draws every replicate from its own generator ``rng_for(seed,
study_code, ...)``, so results do not depend on execution order or on the
number of worker processes. A study returns a :class:`StudyResult` holding
the resolved configuration, one row per replicate (or per grid point) and a
summary dictionary; :meth:`StudyResult.write` emits a tab-separated table
and a JSON summary.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .equivalence import predict_naive_bias
from .estimation import DEFAULT_FIT, FitConfig, debias_params, fit, fit_forward, sample_reff_ci, wald_ci
from .exceptions import ConvergenceError, DomainError
from .likelihood import approx_loglik, forward_loglik
from .model import (DEFAULT_PERIOD, CountSeries, ModelParams, ObservationSpec, TimeVaryingParams,
                    inflate_counts, rng_for, seasonal_path, simulate_latent, thin_series)

logger = logging.getLogger(__name__)

STUDIES = ("loglik_agreement", "bias_precision", "coverage", "aggregation_recovery", "identifiability")
_STUDY_CODE = {name: i + 1 for i, name in enumerate(STUDIES)}
METHODS = ("correct", "ignore", "multiplication_factor", "debias")
PARAM_NAMES = ("nu", "phi", "kappa", "psi")

#: generating values of the constant-parameter studies
BENCHMARK = {"nu": 15.0, "phi": 0.4, "kappa": 0.3, "psi": 0.1}

#: half-weekly seasonal truth resembling a rotavirus fit: kappa = 0.41, R_eff,t in about [0.72, 1.02],
#: roughly one in ten cases endemic
ROTAVIRUS_LIKE = {
    "alpha_nu": math.log(80.0), "gamma_nu": 0.3, "delta_nu": 0.1,
    "alpha_phi": math.log(0.505), "gamma_phi": 0.126, "delta_phi": 0.126,
    "kappa": 0.41, "psi": 0.02, "lambda1": 900.0,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved settings of one study.

    Attributes
    ----------
    study : str
        One of :data:`STUDIES`.
    n_replicates : int
    series_length : int
        Latent length for the single-length studies.
    lengths : tuple of int
        Latent lengths for the bias and coverage studies.
    pi_grid : tuple of float
    params : dict
        Fixed generating values; study-specific keys.
    ranges : dict
        ``name -> (low, high)`` sampling ranges (log-likelihood agreement).
    methods : tuple of str
        Estimation methods of the bias study, from :data:`METHODS`.
    n_starts : int
        Optimiser starts per fit.
    seed : int
    n_jobs : int
        Worker processes; 1 runs in-process.
    """

    study: str
    n_replicates: int = 200
    series_length: int = 100
    lengths: Tuple[int, ...] = (416,)
    pi_grid: Tuple[float, ...] = (0.1, 0.25, 0.5, 0.75, 1.0)
    params: Dict[str, float] = field(default_factory=dict)
    ranges: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    methods: Tuple[str, ...] = ("correct", "ignore", "multiplication_factor")
    n_starts: int = 2
    seed: int = 1
    n_jobs: int = 1
    reff_draws: int = 1000

    def __post_init__(self):
        if self.study not in STUDIES:
            raise DomainError(f"unknown study {self.study!r}; choose from {', '.join(STUDIES)}")
        if self.n_replicates < 1:
            raise DomainError("n_replicates must be >= 1")
        if self.series_length < 2 or any(n < 2 for n in self.lengths):
            raise DomainError("series lengths must be >= 2")
        if not self.pi_grid or any(not 0 < p <= 1 for p in self.pi_grid):
            raise DomainError("pi grid values must lie in (0, 1]")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise DomainError(f"unknown methods {sorted(bad)}")
        for name, (lo, hi) in self.ranges.items():
            if not lo <= hi:
                raise DomainError(f"empty range for {name}")
        if self.n_starts < 1 or self.n_jobs < 1:
            raise DomainError("n_starts and n_jobs must be >= 1")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ranges"] = {k: list(v) for k, v in self.ranges.items()}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        for key in ("lengths", "pi_grid", "methods"):
            if key in d:
                d[key] = tuple(d[key])
        if "ranges" in d:
            d["ranges"] = {k: tuple(v) for k, v in d["ranges"].items()}
        return cls(**d)


def default_config(study: str, full_scale: bool = False, **overrides) -> ExperimentConfig:
    """Desk-scale defaults per study; ``full_scale`` restores the original replicate counts and lengths."""
    if study == "loglik_agreement":
        base = dict(n_replicates=1000 if full_scale else 200, series_length=100,
                    ranges={"nu": (3.0, 30.0), "phi": (0.01, 0.99), "psi": (0.001, 0.2),
                            "pi": (0.01, 1.0), "lambda1_factor": (0.5, 2.0)})
    elif study == "bias_precision":
        base = dict(n_replicates=1000 if full_scale else 200,
                    lengths=(208, 416, 832) if full_scale else (416,), params=dict(BENCHMARK))
    elif study == "coverage":
        base = dict(n_replicates=1000 if full_scale else 200, lengths=(208, 416, 832) if full_scale else (208, 832),
                    params=dict(BENCHMARK))
    elif study == "aggregation_recovery":
        base = dict(n_replicates=100 if full_scale else 20, series_length=832, pi_grid=(0.043,),
                    params=dict(ROTAVIRUS_LIKE, aggregation=2))
    elif study == "identifiability":
        base = dict(n_replicates=1, series_length=200, pi_grid=tuple(np.round(np.arange(0.2, 1.01, 0.1), 2)),
                    params={"nu": 10.0, "phi": 0.5, "psi": 0.1, "pi": 0.4})
    else:
        raise DomainError(f"unknown study {study!r}; choose from {', '.join(STUDIES)}")
    base.update(overrides)
    return ExperimentConfig(study=study, **base)


@dataclass
class StudyResult:
    config: ExperimentConfig
    rows: List[dict]
    summary: dict
    runtime_s: float = 0.0

    @property
    def columns(self) -> List[str]:
        cols: List[str] = []
        for row in self.rows:
            for k in row:
                if k not in cols:
                    cols.append(k)
        return cols

    def column(self, name: str, **where) -> np.ndarray:
        """Values of ``name`` over rows matching ``where``."""
        sel = [r for r in self.rows if all(r.get(k) == v for k, v in where.items())]
        return np.array([r.get(name, np.nan) for r in sel], dtype=float)

    def write(self, out_dir: str, version: str = "") -> Tuple[str, str]:
        """Write ``<study>.tsv`` and ``<study>_summary.json`` into ``out_dir``."""
        os.makedirs(out_dir, exist_ok=True)
        name = self.config.study
        table = os.path.join(out_dir, f"{name}.tsv")
        with open(table, "w", newline="") as fh:
            fh.write(f"# underreport {version} study={name} seed={self.config.seed}\n")
            writer = csv.DictWriter(fh, fieldnames=self.columns, delimiter="\t", restval="")
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: _fmt(v) for k, v in row.items()})
        summary = os.path.join(out_dir, f"{name}_summary.json")
        with open(summary, "w") as fh:
            json.dump({"version": version, "config": self.config.to_dict(), "runtime_s": self.runtime_s,
                       "summary": to_jsonable(self.summary), "checks": to_jsonable(acceptance_checks(self))},
                      fh, indent=2)
        return table, summary


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return v


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return float(f"{v:.12g}") if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _map(fn: Callable, tasks: Sequence, n_jobs: int) -> list:
    if n_jobs == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * n_jobs))))


def _fit_cfg(cfg: ExperimentConfig, compute_vcov: bool) -> FitConfig:
    return replace(DEFAULT_FIT, n_starts=cfg.n_starts, compute_vcov=compute_vcov)


# ---------------------------------------------------------------------------
# log-likelihood agreement


def _draw_agreement_params(rng: np.random.Generator, ranges: dict):
    while True:
        nu = rng.uniform(*ranges["nu"])
        phi = rng.uniform(*ranges["phi"])
        psi = rng.uniform(*ranges["psi"])
        if phi ** 2 * (1 + psi) < 1:
            break
    pi = rng.uniform(*ranges["pi"])
    mu = nu / (1 - phi)
    lambda1 = rng.uniform(ranges["lambda1_factor"][0] * mu, ranges["lambda1_factor"][1] * mu)
    return ModelParams(nu, phi, 0.0, psi, lambda1), pi


def _agreement_replicate(task) -> dict:
    cfg, i = task
    rng = rng_for(cfg.seed, _STUDY_CODE["loglik_agreement"], i)
    params, pi = _draw_agreement_params(rng, cfg.ranges)
    if "pi" in cfg.params:
        pi = float(cfg.params["pi"])
    spec = ObservationSpec(pi)
    latent, _ = simulate_latent(params, cfg.series_length, seed=rng)
    obs = thin_series(latent, spec, seed=rng)
    t0 = time.perf_counter()
    ll_fwd = forward_loglik(params, pi, obs)
    t1 = time.perf_counter()
    ll_app = approx_loglik(params, spec, obs)
    t2 = time.perf_counter()
    mu = params.nu / (1 - params.phi)
    return {
        "replicate": i, "nu": params.nu, "phi": params.phi, "psi": params.psi, "pi": pi,
        "lambda1": params.lambda1, "mu_thinned": pi * mu, "phi_sqrt_1_psi": params.phi * math.sqrt(1 + params.psi),
        "loglik_forward": ll_fwd, "loglik_approx": ll_app, "delta": ll_app - ll_fwd,
        "time_forward_s": t1 - t0, "time_approx_s": t2 - t1,
    }


def run_loglik_agreement(cfg: ExperimentConfig) -> StudyResult:
    """Approximate versus exact (forward algorithm) log-likelihood at the true parameters, ``kappa = 0``."""
    start = time.perf_counter()
    rows = _map(_agreement_replicate, [(cfg, i) for i in range(cfg.n_replicates)], cfg.n_jobs)
    delta = np.abs(np.array([r["delta"] for r in rows]))
    near = np.array([r["phi_sqrt_1_psi"] > 0.95 for r in rows])
    central = np.array([r["phi_sqrt_1_psi"] <= 0.8 for r in rows])
    t_fwd = sum(r["time_forward_s"] for r in rows)
    t_app = sum(r["time_approx_s"] for r in rows)
    summary = {
        "n": len(rows),
        "share_below_0.1": float(np.mean(delta < 0.1)),
        "share_below_1": float(np.mean(delta < 1)),
        "median_abs_delta": float(np.median(delta)),
        "median_abs_delta_near_nonstationary": float(np.median(delta[near])) if near.any() else None,
        "median_abs_delta_central": float(np.median(delta[central])) if central.any() else None,
        "n_near_nonstationary": int(near.sum()),
        "runtime_ratio_forward_over_approx": t_fwd / t_app if t_app > 0 else None,
    }
    return StudyResult(cfg, rows, summary, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# bias and precision / coverage


def _truth(cfg: ExperimentConfig) -> ModelParams:
    p = cfg.params
    return ModelParams(p["nu"], p["phi"], p["kappa"], p["psi"], p.get("lambda1"))


def _simulate_thinned(cfg: ExperimentConfig, length: int, pi: float, i: int) -> CountSeries:
    # one latent series per (length, replicate), shared across pi and methods
    rng = rng_for(cfg.seed, _STUDY_CODE[cfg.study], length, i)
    latent, _ = simulate_latent(_truth(cfg), length, seed=rng)
    rng_thin = rng_for(cfg.seed, _STUDY_CODE[cfg.study], length, i, int(round(pi * 1e6)))
    return thin_series(latent, ObservationSpec(pi), seed=rng_thin)


def _estimate_row(base: dict, result) -> dict:
    row = dict(base)
    est = result.estimates
    row.update(nu=est.nu, phi=est.phi, kappa=est.kappa, psi=est.psi, lambda1=est.lambda1,
               r_eff=est.phi / (1 - est.kappa) if est.kappa < 1 else np.nan,
               loglik=result.loglik, converged=result.converged, boundary=result.boundary, failed=False)
    return row


def _failed_row(base: dict, err: Exception) -> dict:
    row = dict(base)
    row.update({n: np.nan for n in (*PARAM_NAMES, "lambda1", "r_eff", "loglik")})
    row.update(converged=False, boundary=False, failed=True, error=str(err))
    return row


def _bias_replicate(task) -> List[dict]:
    cfg, length, pi, i = task
    obs = _simulate_thinned(cfg, length, pi, i)
    fcfg = _fit_cfg(cfg, compute_vcov=False)
    rows = []
    naive = None
    for method in cfg.methods:
        base = {"length": length, "pi": pi, "method": method, "replicate": i}
        try:
            if method == "correct":
                res = fit(obs, ObservationSpec(pi), cfg=fcfg)
            elif method == "ignore":
                res = naive = naive or fit(obs, ObservationSpec(1.0), cfg=fcfg)
            elif method == "multiplication_factor":
                res = fit(inflate_counts(obs, pi), ObservationSpec(1.0), cfg=fcfg)
            else:
                naive = naive or fit(obs, ObservationSpec(1.0), cfg=fcfg)
                params, clipped = debias_params(naive.estimates, pi)
                res = replace(naive, estimates=params, boundary=clipped)
            rows.append(_estimate_row(base, res))
        except (ConvergenceError, DomainError) as err:
            rows.append(_failed_row(base, err))
    return rows


def _reference(truth: ModelParams, pi: float, method: str) -> Optional[ModelParams]:
    if method in ("correct", "debias"):
        return truth
    try:
        return predict_naive_bias(truth, pi, "ignore" if method == "ignore" else "multiplication_factor")
    except DomainError:
        return None


def run_bias_precision(cfg: ExperimentConfig) -> StudyResult:
    """Replicate estimates under correct-pi fitting, ignoring underreporting and multiplication factors.

    The summary lists per ``(length, pi, method)`` the median, mean and
    standard deviation of each estimate together with the reference value:
    the truth for ``correct``/``debias`` and the predicted large-sample limit
    for ``ignore``/``multiplication_factor``.
    """
    start = time.perf_counter()
    truth = _truth(cfg)
    tasks = [(cfg, n, pi, i) for n in cfg.lengths for pi in cfg.pi_grid for i in range(cfg.n_replicates)]
    rows = [r for block in _map(_bias_replicate, tasks, cfg.n_jobs) for r in block]
    cells = []
    for n in cfg.lengths:
        for pi in cfg.pi_grid:
            for method in cfg.methods:
                sel = [r for r in rows if r["length"] == n and r["pi"] == pi and r["method"] == method]
                ok = [r for r in sel if not r["failed"]]
                ref = _reference(truth, pi, method)
                cell = {"length": n, "pi": pi, "method": method, "n": len(sel), "n_failed": len(sel) - len(ok)}
                for name in (*PARAM_NAMES, "r_eff"):
                    vals = np.array([r[name] for r in ok], dtype=float)
                    vals = vals[np.isfinite(vals)]
                    if ref is None:
                        ref_val = np.nan
                    elif name == "r_eff":
                        ref_val = ref.phi / (1 - ref.kappa)
                    else:
                        ref_val = getattr(ref, name)
                    cell[name] = {
                        "median": float(np.median(vals)) if vals.size else np.nan,
                        "mean": float(np.mean(vals)) if vals.size else np.nan,
                        "sd": float(np.std(vals, ddof=1)) if vals.size > 1 else np.nan,
                        "reference": ref_val,
                    }
                kap = np.array([r["kappa"] for r in ok], dtype=float)
                kap = kap[np.isfinite(kap)]
                above = int(np.sum(kap > truth.kappa))
                ties = int(np.sum(kap == truth.kappa))
                cell["kappa_above_truth"] = above
                cell["kappa_sign_test_p"] = (
                    float(stats.binomtest(above, kap.size - ties, 0.5, alternative="greater").pvalue)
                    if kap.size - ties > 0 else np.nan)
                cells.append(cell)
    return StudyResult(cfg, rows, {"truth": dict(cfg.params), "cells": cells}, time.perf_counter() - start)


def _coverage_replicate(task) -> dict:
    cfg, length, pi, i = task
    obs = _simulate_thinned(cfg, length, pi, i)
    base = {"length": length, "pi": pi, "replicate": i}
    truth = _truth(cfg)
    try:
        res = fit(obs, ObservationSpec(pi), cfg=_fit_cfg(cfg, compute_vcov=True))
    except (ConvergenceError, DomainError) as err:
        return _failed_row(base, err)
    row = _estimate_row(base, res)
    row["vcov_usable"] = res.vcov_usable
    if res.vcov_usable:
        ci = wald_ci(res, 0.95)
        for name in PARAM_NAMES:
            _, lo, hi = ci[name]
            row[f"covered_{name}"] = bool(lo <= getattr(truth, name) <= hi)
    return row


def run_coverage(cfg: ExperimentConfig) -> StudyResult:
    """Empirical coverage of 95% Wald intervals per ``(pi, length)`` for the correct-pi fit.

    Replicates whose covariance matrix is unusable carry no intervals; the
    summary reports their number and the coverage among the others.
    """
    start = time.perf_counter()
    tasks = [(cfg, n, pi, i) for n in cfg.lengths for pi in cfg.pi_grid for i in range(cfg.n_replicates)]
    rows = _map(_coverage_replicate, tasks, cfg.n_jobs)
    cells = []
    for n in cfg.lengths:
        for pi in cfg.pi_grid:
            sel = [r for r in rows if r["length"] == n and r["pi"] == pi]
            usable = [r for r in sel if r.get("vcov_usable")]
            cell = {"length": n, "pi": pi, "n": len(sel), "n_usable": len(usable),
                    "n_failed": sum(r["failed"] for r in sel)}
            for name in PARAM_NAMES:
                hits = [r[f"covered_{name}"] for r in usable]
                cell[f"coverage_{name}"] = float(np.mean(hits)) if hits else np.nan
            cells.append(cell)
    return StudyResult(cfg, rows, {"truth": dict(cfg.params), "level": 0.95, "cells": cells},
                       time.perf_counter() - start)


# ---------------------------------------------------------------------------
# aggregation recovery


def seasonal_truth(params: dict, length: int, period: int = DEFAULT_PERIOD) -> TimeVaryingParams:
    """Latent seasonal parameters from a coefficient dictionary such as :data:`ROTAVIRUS_LIKE`."""
    return TimeVaryingParams(
        seasonal_path(params["alpha_nu"], params["gamma_nu"], params["delta_nu"], length, period),
        seasonal_path(params["alpha_phi"], params["gamma_phi"], params["delta_phi"], length, period),
        params["kappa"], params["psi"], params["lambda1"],
    )


def _recovery_replicate(task) -> dict:
    cfg, pi, i = task
    p = cfg.params
    aggregation = int(p.get("aggregation", 2))
    truth = seasonal_truth(p, cfg.series_length)
    spec = ObservationSpec(pi, aggregation)
    rng = rng_for(cfg.seed, _STUDY_CODE["aggregation_recovery"], i)
    latent, _ = simulate_latent(truth, seed=rng)
    obs = thin_series(latent, spec, seed=rng)
    base = {"pi": pi, "aggregation": aggregation, "replicate": i}
    try:
        res = fit(obs, spec, "seasonal", cfg=_fit_cfg(cfg, compute_vcov=True))
    except (ConvergenceError, DomainError) as err:
        row = dict(base)
        row.update(failed=True, error=str(err))
        return row
    est = res.estimates
    r_true = truth.phi / (1 - truth.kappa)
    row = dict(base)
    row.update(res.coefficients)
    row.update(kappa=est.kappa, psi=est.psi, lambda1=est.lambda1, loglik=res.loglik,
               r_eff_min=res.derived["r_eff_range"][0], r_eff_max=res.derived["r_eff_range"][1],
               vcov_usable=res.vcov_usable, failed=False)
    if res.vcov_usable:
        band = sample_reff_ci(res, draws=cfg.reff_draws, level=0.90,
                              seed=int(rng_for(cfg.seed, _STUDY_CODE["aggregation_recovery"], i, 1).integers(2 ** 31)),
                              n_steps=cfg.series_length)
        row["reff_band_coverage"] = float(np.mean((band.lower <= r_true) & (r_true <= band.upper)))
        row["reff_band_width_min"] = float(np.min(band.upper - band.lower))
    return row


def run_aggregation_recovery(cfg: ExperimentConfig) -> StudyResult:
    """Seasonal half-weekly latent series, thinned and summed to weekly counts, refitted aggregation-aware."""
    start = time.perf_counter()
    tasks = [(cfg, pi, i) for pi in cfg.pi_grid for i in range(cfg.n_replicates)]
    rows = _map(_recovery_replicate, tasks, cfg.n_jobs)
    cells = []
    for pi in cfg.pi_grid:
        ok = [r for r in rows if r["pi"] == pi and not r["failed"]]
        kap = np.array([r["kappa"] for r in ok])
        cell = {"pi": pi, "n": sum(r["pi"] == pi for r in rows), "n_failed": sum(r["pi"] == pi and r["failed"] for r in rows),
                "kappa_true": cfg.params["kappa"]}
        if kap.size:
            se = float(np.std(kap, ddof=1) / math.sqrt(kap.size)) if kap.size > 1 else np.nan
            cell.update(kappa_mean=float(kap.mean()), kappa_median=float(np.median(kap)), kappa_mc_se=se,
                        kappa_z=float((kap.mean() - cfg.params["kappa"]) / se) if se and se > 0 else np.nan)
            cov = [r["reff_band_coverage"] for r in ok if "reff_band_coverage" in r]
            cell["reff_band_coverage_mean"] = float(np.mean(cov)) if cov else np.nan
        cells.append(cell)
    return StudyResult(cfg, rows, {"truth": dict(cfg.params), "cells": cells}, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# identifiability


def _identifiability_row(task) -> dict:
    cfg, obs, pi = task
    res = fit_forward(obs, pi, _fit_cfg(cfg, compute_vcov=False))
    est = res.estimates
    return {"pi": pi, "loglik": res.loglik, "nu": est.nu, "phi": est.phi, "psi": est.psi,
            "lambda1": est.lambda1, "converged": res.converged}


def run_identifiability(cfg: ExperimentConfig) -> StudyResult:
    """Maximised exact log-likelihood (``kappa = 0``) of one thinned series across assumed reporting probabilities."""
    start = time.perf_counter()
    p = cfg.params
    truth = ModelParams(p["nu"], p["phi"], 0.0, p["psi"], p.get("lambda1"))
    rng = rng_for(cfg.seed, _STUDY_CODE["identifiability"])
    latent, _ = simulate_latent(truth, cfg.series_length, seed=rng)
    obs = thin_series(latent, ObservationSpec(p["pi"]), seed=rng)
    rows = _map(_identifiability_row, [(cfg, obs, pi) for pi in cfg.pi_grid], cfg.n_jobs)
    ll = np.array([r["loglik"] for r in rows])
    summary = {"true_pi": p["pi"], "loglik_max": float(ll.max()), "loglik_min": float(ll.min()),
               "spread": float(ll.max() - ll.min()), "argmax_pi": float(cfg.pi_grid[int(np.argmax(ll))])}
    return StudyResult(cfg, rows, summary, time.perf_counter() - start)


RUNNERS = {
    "loglik_agreement": run_loglik_agreement,
    "bias_precision": run_bias_precision,
    "coverage": run_coverage,
    "aggregation_recovery": run_aggregation_recovery,
    "identifiability": run_identifiability,
}


def _check(value, low=-math.inf, high=math.inf) -> dict:
    ok = value is not None and math.isfinite(value) and low <= value <= high
    return {"value": value, "low": low if math.isfinite(low) else None,
            "high": high if math.isfinite(high) else None, "pass": bool(ok)}


def _rel(value: float, ref: float) -> float:
    return abs(value - ref) / abs(ref) if ref else math.inf


def acceptance_checks(result: StudyResult) -> Dict[str, dict]:
    """Pass/fail of a study summary against the desk-scale acceptance thresholds.

    Each entry holds the checked ``value``, its bounds and ``pass``. Cells
    outside the scope of a threshold (for instance coverage on short series)
    are not checked.
    """
    s, study = result.summary, result.config.study
    out: Dict[str, dict] = {}
    if study == "loglik_agreement":
        out["share_below_0.1"] = _check(s["share_below_0.1"], 0.65, 0.81)
        out["share_below_1"] = _check(s["share_below_1"], 0.93, 1.0)
        out["runtime_ratio"] = _check(s["runtime_ratio_forward_over_approx"], 10.0)
    elif study == "bias_precision":
        for c in s["cells"]:
            key = f"n{c['length']}_pi{c['pi']:g}_{c['method']}"
            if c["method"] == "correct" and c["pi"] >= 0.25:
                for name in PARAM_NAMES:
                    out[f"{key}_{name}_median_relerr"] = _check(_rel(c[name]["median"], c[name]["reference"]), high=0.10)
            elif c["method"] == "ignore":
                for name in PARAM_NAMES:
                    out[f"{key}_{name}_median_relerr"] = _check(_rel(c[name]["median"], c[name]["reference"]), high=0.15)
            elif c["method"] == "multiplication_factor":
                out[f"{key}_nu_median_relerr"] = _check(_rel(c["nu"]["median"], s["truth"]["nu"]), high=0.10)
                # at pi = 1 the multiplication factor is the identity and no kappa bias is expected
                if c["pi"] < 1:
                    out[f"{key}_kappa_sign_test_p"] = _check(c["kappa_sign_test_p"], high=0.01)
    elif study == "coverage":
        for c in s["cells"]:
            if c["length"] >= 832 and c["pi"] >= 0.5:
                for name in PARAM_NAMES:
                    out[f"n{c['length']}_pi{c['pi']:g}_{name}"] = _check(c[f"coverage_{name}"], 0.90, 0.98)
    elif study == "aggregation_recovery":
        for c in s["cells"]:
            out[f"pi{c['pi']:g}_kappa_z"] = _check(abs(c.get("kappa_z", math.nan)), high=3.0)
    elif study == "identifiability":
        if len(result.rows) > 1:
            out["loglik_spread"] = _check(s["spread"], high=2.0)
    return out


def run_study(cfg: ExperimentConfig) -> StudyResult:
    logger.info("running %s with %d replicates (seed %d)", cfg.study, cfg.n_replicates, cfg.seed)
    return RUNNERS[cfg.study](cfg)
