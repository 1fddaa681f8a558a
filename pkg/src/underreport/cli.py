"""
Command-line interface: ``underreport {simulate,fit,experiment,moments}``.

Settings are resolved in the order built-in defaults < configuration file
(top-level keys, then the section named after the subcommand) < flags given
on the command line. The configuration file is YAML, for example::

    seed: 7
    pi: "2001-01:0.043,2005-01:0.043,2006-01:0.063"
    aggregation: 2
    model: seasonal
    fit:
      data: counts.csv
      pi_grid: [0.02, 0.04, 1.0]
    experiment:
      study: coverage
      n_replicates: 50

Every written file records the resolved configuration and the library
version. Numbers are written with 12 significant digits.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import math
import os
import re
import sys
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import __version__
from .equivalence import EquivalenceTarget, effective_reproduction, invert_moments, predict_naive_bias
from .estimation import DEFAULT_FIT, fit, sample_reff_ci, wald_ci
from .exceptions import ConvergenceError, DataError, DomainError
from .experiments import (BENCHMARK, ROTAVIRUS_LIKE, STUDIES, ExperimentConfig, default_config, run_study,
                          seasonal_truth)
from .experiments import to_jsonable as jsonable
from .likelihood import equivalent_means
from .model import CountSeries, ModelParams, ObservationSpec, simulate_latent, thin_series
from .moments import aggregate_moments, stationary_moments, thin_moments

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


DEFAULTS = {
    "common": {"seed": 1, "out": ".", "pi": "1.0", "aggregation": 1, "model": "constant"},
    "simulate": {"length": 416, "params": None},
    "fit": {"data": None, "pi_grid": None, "step_days": None, "draws": 10000, "level": 0.90,
            "n_starts": DEFAULT_FIT.n_starts, "max_lag": 10},
    "experiment": {"study": None, "full_scale": False},
    "moments": {"params": None, "pi_sweep": None, "max_lag": 5},
}


# ---------------------------------------------------------------------------
# parsing helpers


def parse_key_values(text) -> dict:
    """``"nu=15,phi=0.4"`` (or an already parsed mapping) to ``{"nu": 15.0, "phi": 0.4}``."""
    if text is None:
        return {}
    if isinstance(text, dict):
        return {k: float(v) for k, v in text.items()}
    out = {}
    for item in str(text).split(","):
        if not item.strip():
            continue
        if "=" not in item:
            raise UsageError(f"expected name=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise UsageError(f"not a number in {item!r}") from None
    return out


def parse_float_list(text) -> Optional[List[float]]:
    """Comma list ``"0.1,0.5,1"`` or range ``"start:stop:step"`` (inclusive) of floats."""
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    text = str(text)
    try:
        if text.count(":") == 2:
            a, b, s = (float(v) for v in text.split(":"))
            n = int(math.floor((b - a) / s + 1e-9)) + 1
            return [round(a + i * s, 12) for i in range(n)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse number list {text!r}") from None


_ISO_WEEK = re.compile(r"^(\d{4})-?W(\d{1,2})$")
_YEAR_MONTH = re.compile(r"^(\d{4})-(\d{1,2})$")


def parse_time_label(label: str) -> Tuple[str, float]:
    """Classify a time label and map it to a number (day ordinal for calendar labels)."""
    label = label.strip()
    m = _ISO_WEEK.match(label)
    if m:
        return "date", float(dt.date.fromisocalendar(int(m.group(1)), int(m.group(2)), 1).toordinal())
    m = _YEAR_MONTH.match(label)
    if m:
        return "date", float(dt.date(int(m.group(1)), int(m.group(2)), 1).toordinal())
    try:
        return "date", float(dt.date.fromisoformat(label).toordinal())
    except ValueError:
        pass
    try:
        return "index", float(int(label))
    except ValueError:
        raise ValueError(f"unrecognised time label {label!r}") from None


class PiSpec:
    """Scalar reporting probability or a piecewise-linear path over calendar or index breakpoints."""

    def __init__(self, text):
        self.text = str(text)
        if ":" not in self.text:
            try:
                self.scalar = float(self.text)
            except ValueError:
                raise UsageError(f"cannot parse reporting probability {self.text!r}") from None
            self.points = None
            self._check([self.scalar])
            return
        self.scalar = None
        pts = []
        for item in self.text.split(","):
            try:
                label, value = item.rsplit(":", 1)
                kind, x = parse_time_label(label)
                pts.append((kind, x, float(value)))
            except ValueError as err:
                raise UsageError(f"bad reporting-probability breakpoint {item!r}: {err}") from None
        if len({p[0] for p in pts}) != 1:
            raise UsageError("breakpoints must all be calendar labels or all integer indices")
        xs = [p[1] for p in pts]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise UsageError("breakpoints must be strictly increasing")
        self.kind = pts[0][0]
        self.points = (np.array(xs), np.array([p[2] for p in pts]))
        self._check(self.points[1])

    @staticmethod
    def _check(values):
        if any(not 0 < v <= 1 for v in values):
            raise UsageError("reporting probabilities must lie in (0, 1]")

    def spec(self, data: Optional[CountSeries], aggregation: int) -> ObservationSpec:
        if self.points is None:
            return ObservationSpec(self.scalar, aggregation)
        if data is None or data.index is None:
            raise UsageError("a reporting-probability path needs data with a time index")
        coords = latent_coordinates(data.index, aggregation, self.kind)
        return ObservationSpec(np.interp(coords, *self.points), aggregation)

    def __str__(self):
        return self.text


def latent_coordinates(index: Sequence[str], aggregation: int, kind: str) -> np.ndarray:
    """Time coordinate of every latent step (day ordinals or fractional row indices)."""
    parsed = [parse_time_label(s) for s in index]
    if any(k != kind for k, _ in parsed):
        raise DataError("time index does not match the kind of reporting-probability breakpoints")
    x = np.array([v for _, v in parsed])
    if aggregation == 1:
        return x
    step = np.diff(x).mean() if x.shape[0] > 1 else 1.0
    return np.column_stack([x, x + step / 2]).ravel()


def read_counts(path: str) -> CountSeries:
    """Two-column delimited file with a header: time label, count. Lines starting with ``#`` are skipped."""
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    with open(path, newline="") as fh:
        lines = [(i + 1, line) for i, line in enumerate(fh) if line.strip() and not line.lstrip().startswith("#")]
    if not lines:
        raise DataError(f"{path}: empty file")
    header = lines[0][1]
    delim = "\t" if "\t" in header else (";" if ";" in header else ",")
    head = next(csv.reader([header], delimiter=delim))
    if len(head) != 2:
        raise DataError(f"{path}, line {lines[0][0]}: expected a two-column header, got {len(head)} columns")
    try:
        float(head[1])
    except ValueError:
        pass
    else:
        raise DataError(f"{path}, line {lines[0][0]}: header required (second column is numeric)")
    labels, counts = [], []
    for lineno, line in lines[1:]:
        row = next(csv.reader([line], delimiter=delim))
        if len(row) != 2:
            raise DataError(f"{path}, line {lineno}: expected 2 columns, got {len(row)}")
        try:
            value = float(row[1])
        except ValueError:
            raise DataError(f"{path}, line {lineno}: count {row[1]!r} is not a number") from None
        if not math.isfinite(value) or value < 0 or value != int(value):
            raise DataError(f"{path}, line {lineno}: count {row[1]!r} is not a non-negative integer")
        labels.append(row[0].strip())
        counts.append(int(value))
    if len(counts) < 2:
        raise DataError(f"{path}: need at least two observations")
    return CountSeries(np.array(counts, dtype=np.int64), t0=labels[0], step_label=head[0].strip(), index=labels)


def _header(config: dict) -> str:
    return (f"# underreport {__version__}\n"
            f"# config: {json.dumps(jsonable(config), sort_keys=True)}\n")


def write_table(path: str, columns: Sequence[str], rows, config: dict, delimiter: str = ","):
    with open(path, "w", newline="") as fh:
        fh.write(_header(config))
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([f"{float(v):.12g}" if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path: str, payload: dict, config: dict):
    with open(path, "w") as fh:
        json.dump(jsonable({"version": __version__, "config": config, **payload}), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: dict) -> List[str]:
    """Simulate a latent series and its observed (thinned, optionally aggregated) counterpart."""
    model = cfg["model"]
    length = int(cfg["length"])
    if length < 2:
        raise UsageError("length must be >= 2")
    given = parse_key_values(cfg["params"])
    pi_spec = PiSpec(cfg["pi"])
    if pi_spec.points is not None:
        raise UsageError("simulate takes a scalar reporting probability")
    spec = ObservationSpec(pi_spec.scalar, int(cfg["aggregation"]))
    if model == "constant":
        names = set(BENCHMARK) | {"lambda1"}
        _require_known(given, names)
        p = {**BENCHMARK, **given}
        params = ModelParams(p["nu"], p["phi"], p["kappa"], p["psi"], p.get("lambda1"))
    else:
        _require_known(given, set(ROTAVIRUS_LIKE))
        params = seasonal_truth({**ROTAVIRUS_LIKE, **given}, length)
    cfg = dict(cfg, params={**(BENCHMARK if model == "constant" else ROTAVIRUS_LIKE), **given})
    latent, _ = simulate_latent(params, length, seed=np.random.default_rng([int(cfg["seed"]), 0]))
    observed = thin_series(latent, spec, seed=np.random.default_rng([int(cfg["seed"]), 1]))
    os.makedirs(cfg["out"], exist_ok=True)
    paths = []
    for name, series in (("latent", latent), ("observed", observed)):
        path = os.path.join(cfg["out"], f"{name}.csv")
        write_table(path, ["index", "count"], ((i + 1, int(v)) for i, v in enumerate(series.values)), cfg)
        paths.append(path)
    return paths


def _require_known(given: dict, names: set):
    unknown = set(given) - names
    if unknown:
        raise UsageError(f"unknown parameter(s) {sorted(unknown)}; expected some of {sorted(names)}")


def _pearson_acf(data: CountSeries, lam: np.ndarray, psi: np.ndarray, max_lag: int) -> np.ndarray:
    r = (data.values - lam) / np.sqrt(lam + psi * lam ** 2)
    r = r - r.mean()
    denom = np.sum(r ** 2)
    return np.array([np.sum(r[d:] * r[:-d]) / denom for d in range(1, max_lag + 1)])


def _fit_one(data, pi_spec, cfg, fit_cfg, step_days):
    spec = pi_spec.spec(data, int(cfg["aggregation"]))
    return spec, fit(data, spec, cfg["model"], fit_cfg, step_days=step_days)


def cmd_fit(cfg: dict) -> List[str]:
    """Fit the model to a count file; writes the fit, fitted values, residual ACF, R_eff band and a pi table."""
    if not cfg.get("data"):
        raise UsageError("fit needs --data")
    data = read_counts(cfg["data"])
    aggregation = int(cfg["aggregation"])
    step_days = float(cfg["step_days"]) if cfg["step_days"] is not None else 7.0 / aggregation
    fit_cfg = replace(DEFAULT_FIT, n_starts=int(cfg["n_starts"]))
    pi_spec = PiSpec(cfg["pi"])
    spec, result = _fit_one(data, pi_spec, cfg, fit_cfg, step_days)
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    paths = []

    payload = {"fit": result.to_dict()}
    if result.vcov_usable:
        payload["wald_95"] = {k: list(v) for k, v in wald_ci(result, 0.95).items()}
    path = os.path.join(out, "fit.json")
    write_json(path, payload, cfg)
    paths.append(path)

    lam, psi = equivalent_means(result.estimates, spec, data)
    path = os.path.join(out, "fitted.csv")
    write_table(path, ["index", "observed", "fitted", "pearson_residual"],
                ((lab, int(x), float(m), float((x - m) / math.sqrt(m + s * m * m)))
                 for lab, x, m, s in zip(data.index, data.values, lam, psi)), cfg)
    paths.append(path)

    acf = _pearson_acf(data, lam, psi, int(cfg["max_lag"]))
    path = os.path.join(out, "residual_acf.csv")
    write_table(path, ["lag", "acf"], ((d + 1, float(a)) for d, a in enumerate(acf)), cfg)
    paths.append(path)

    if result.vcov_usable:
        n_steps = aggregation * len(data) if cfg["model"] == "seasonal" else 1
        band = sample_reff_ci(result, draws=int(cfg["draws"]), level=float(cfg["level"]), seed=int(cfg["seed"]),
                              n_steps=n_steps, period=fit_cfg.period)
        path = os.path.join(out, "r_eff.csv")
        write_table(path, ["step", "r_eff", "lower", "upper"],
                    ((t + 1, float(p), float(lo), float(hi))
                     for t, (p, lo, hi) in enumerate(zip(band.point, band.lower, band.upper))), cfg)
        paths.append(path)
    else:
        logger.warning("covariance matrix unusable; no Wald intervals or R_eff band written")

    grid = parse_float_list(cfg["pi_grid"])
    if grid:
        rows = []
        for pi in grid:
            try:
                _, r = _fit_one(data, PiSpec(pi), cfg, replace(fit_cfg, compute_vcov=False), step_days)
            except (ConvergenceError, DomainError) as err:
                logger.warning("fit at pi=%s failed: %s", pi, err)
                continue
            nat = r.natural()
            rr = r.derived.get("r_eff_range", [r.derived.get("r_eff")] * 2)
            rows.append([pi, r.loglik, *[nat[n] for n in r.names], rr[0], rr[1],
                         r.derived["serial_interval"], r.derived["endemic_fraction"]])
        path = os.path.join(out, "pi_grid.csv")
        write_table(path, ["pi", "loglik", *result.names, "r_eff_min", "r_eff_max", "serial_interval_days",
                           "endemic_fraction"], rows, cfg)
        paths.append(path)
    return paths


def cmd_experiment(cfg: dict) -> List[str]:
    """Run one simulation study and write its table and summary."""
    study = cfg.get("study")
    if study not in STUDIES:
        raise UsageError(f"unknown study {study!r}; choose from {', '.join(STUDIES)}")
    overrides = {k: v for k, v in cfg.items() if k in ExperimentConfig.__dataclass_fields__ and k != "study"}
    overrides["seed"] = int(cfg["seed"])
    try:
        ecfg = default_config(study, full_scale=bool(cfg.get("full_scale")), **overrides)
    except TypeError as err:
        raise UsageError(str(err)) from None
    except DomainError as err:
        raise UsageError(str(err)) from None
    result = run_study(ExperimentConfig.from_dict(ecfg.to_dict()))
    return list(result.write(cfg["out"], __version__))


def moments_table(params: ModelParams, pis: Sequence[float], aggregation: int, max_lag: int):
    """Observed moments, the equivalent fully observed process (the limit of fits that ignore
    underreporting) and, without aggregation, the limit of multiplication-factor fits, per reporting probability."""
    columns = ["pi", "mean", "variance", "acf_lag1", "decay", *[f"acf_lag{d}" for d in range(2, max_lag + 1)],
               "nu_Y", "phi_Y", "kappa_Y", "psi_Y", "r_eff_Y"]
    if aggregation == 1:
        columns += ["mf_nu", "mf_phi", "mf_kappa", "mf_psi", "mf_r_eff"]
    rows = []
    latent = stationary_moments(params)
    for pi in pis:
        m = thin_moments(latent, pi)
        if aggregation == 2:
            m = aggregate_moments(m)
        row = [pi, m.mu, m.sigma2, m.eta_prime, m.xi_prime, *[float(m.acf(d)) for d in range(2, max_lag + 1)]]
        try:
            y = invert_moments(EquivalenceTarget(m, 1.0))
            row += [y.nu, y.phi, y.kappa, y.psi, float(effective_reproduction(y).r_eff) if y.kappa < 1 else np.nan]
        except DomainError:
            row += [np.nan] * 5
        if aggregation == 1:
            try:
                nb = predict_naive_bias(params, pi, "multiplication_factor")
                row += [nb.nu, nb.phi, nb.kappa, nb.psi, nb.phi / (1 - nb.kappa)]
            except DomainError:
                row += [np.nan] * 5
        rows.append(row)
    return columns, rows


def cmd_moments(cfg: dict) -> List[str]:
    """Print (and with ``--out``, write) moments and equivalent processes for a pi sweep."""
    given = parse_key_values(cfg["params"])
    _require_known(given, set(BENCHMARK))
    p = {**BENCHMARK, **given}
    params = ModelParams(p["nu"], p["phi"], p["kappa"], p["psi"])
    cfg = dict(cfg, params=p)
    pis = parse_float_list(cfg["pi_sweep"])
    if pis is None:
        pi_spec = PiSpec(cfg["pi"])
        if pi_spec.points is not None:
            raise UsageError("moments takes scalar reporting probabilities")
        pis = [pi_spec.scalar]
    PiSpec._check(pis)
    columns, rows = moments_table(params, pis, int(cfg["aggregation"]), int(cfg["max_lag"]))
    w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([f"{float(v):.12g}" for v in row])
    if cfg.get("out_given"):
        os.makedirs(cfg["out"], exist_ok=True)
        path = os.path.join(cfg["out"], "moments.csv")
        write_table(path, columns, rows, cfg)
        return [path]
    return []


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "experiment": cmd_experiment, "moments": cmd_moments}


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="underreport",
                                     description="Fit endemic-epidemic count models to underreported, aggregated counts.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--seed", type=int, help="random seed (default 1)")
    common.add_argument("--out", help="output directory (default .)")
    common.add_argument("--pi", help='reporting probability: "0.043" or "2001-01:0.043,2005-01:0.043,2006-01:0.063"')
    common.add_argument("--aggregation", type=int, choices=(1, 2), help="latent steps per observation")
    common.add_argument("--model", choices=("constant", "seasonal"))
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate latent and observed series")
    p.add_argument("--length", type=int, help="latent length (default 416)")
    p.add_argument("--params", help='e.g. "nu=15,phi=0.4,kappa=0.3,psi=0.1"')

    p = sub.add_parser("fit", parents=[common], help="fit a count file")
    p.add_argument("--data", help="two-column count file with header")
    p.add_argument("--pi-grid", dest="pi_grid", help='extra fits over "0.02:1:0.02" or "0.1,0.5,1"')
    p.add_argument("--step-days", dest="step_days", type=float, help="latent step in days (default 7 / aggregation)")
    p.add_argument("--draws", type=int, help="parameter draws for the R_eff band (default 10000)")
    p.add_argument("--level", type=float, help="level of the R_eff band (default 0.90)")
    p.add_argument("--n-starts", dest="n_starts", type=int, help="optimiser starts")
    p.add_argument("--max-lag", dest="max_lag", type=int, help="residual ACF lags (default 10)")

    p = sub.add_parser("experiment", parents=[common], help="run a simulation study")
    p.add_argument("--study", help=" | ".join(STUDIES))
    p.add_argument("--replicates", dest="n_replicates", type=int)
    p.add_argument("--jobs", dest="n_jobs", type=int)
    p.add_argument("--full-scale", dest="full_scale", action="store_true", default=None)

    p = sub.add_parser("moments", parents=[common], help="moments and equivalent processes")
    p.add_argument("--params", help='e.g. "nu=15,phi=0.4,kappa=0.3,psi=0.1"')
    p.add_argument("--pi-sweep", dest="pi_sweep", help='e.g. "0.1:1:0.1"')
    p.add_argument("--max-lag", dest="max_lag", type=int)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, configuration file and explicit flags."""
    command = args.command
    cfg = {**DEFAULTS["common"], **DEFAULTS[command]}
    out_given = args.out is not None
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = yaml.safe_load(fh) or {}
        except OSError as err:
            raise UsageError(f"cannot read config: {err}") from None
        except yaml.YAMLError as err:
            raise UsageError(f"invalid config file: {err}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a mapping")
        section = loaded.get(command, {}) or {}
        top = {k: v for k, v in loaded.items() if k not in COMMANDS}
        for key, value in {**top, **section}.items():
            if key not in cfg and not (command == "experiment" and key in ExperimentConfig.__dataclass_fields__):
                raise UsageError(f"unknown config key {key!r} for {command}")
            cfg[key] = value
        out_given = out_given or "out" in top or "out" in section
    for key, value in vars(args).items():
        if key in ("command", "config", "verbose") or value is None:
            continue
        cfg[key] = value
    cfg["pi"] = str(cfg["pi"])
    if cfg["model"] not in ("constant", "seasonal"):
        raise UsageError(f"unknown model {cfg['model']!r}")
    if int(cfg["aggregation"]) not in (1, 2):
        raise UsageError("aggregation must be 1 or 2")
    cfg["command"] = command
    if command == "moments":
        cfg["out_given"] = out_given
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        paths = COMMANDS[args.command](cfg)
    except UsageError as err:
        print(f"underreport {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as err:
        print(f"underreport {args.command}: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, DomainError, FloatingPointError, np.linalg.LinAlgError) as err:
        print(f"underreport {args.command}: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    for path in paths:
        logger.info("wrote %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
