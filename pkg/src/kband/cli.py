"""Command-line surface: band, estimate, simulate, coverage.

Configuration precedence is flags > --config JSON file > built-in defaults
(the defaults reproduce the simulation-study settings).  All outputs are
written atomically (temp file + rename) so no command leaves partial output
behind, and every command is deterministic given (input, flags, seed).

Exit codes: 0 success, 2 infeasible band, 3 input/validation error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from array import array
from dataclasses import dataclass

import numpy as np

from . import hermite, livuong
from .bandsolver import BandProblem, build_band
from .calib import Calibration
from .hermite import HermiteBasis
from .restriction import Dataset, FrequencyGrid, build_tables
from .simlab import ExperimentConfig, SimulationModel, draw_sample, run_coverage_study

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_INPUT = 3


class InputError(Exception):
    """User-facing input or validation problem (exit code 3)."""


# ---------------------------------------------------------------------------
# dataset ingestion

def ingest_csv(path) -> Dataset:
    """Read a two-column y1,y2 CSV (header required unless both columns are
    bare numbers).  Rejects malformed or non-finite rows with their line
    number.  Streams in one pass."""
    if not os.path.exists(path):
        raise InputError(f"input file not found: {path}")
    y1 = array("d")
    y2 = array("d")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        idx = (0, 1)
        for lineno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if lineno == 1:
                names = [c.strip().lower() for c in row]
                if "y1" in names and "y2" in names:
                    idx = (names.index("y1"), names.index("y2"))
                    continue
                try:
                    float(row[0]), float(row[1])
                except (ValueError, IndexError):
                    raise InputError(
                        f"{path}:1: expected a y1,y2 header or two numeric columns"
                    ) from None
            if len(row) < 2:
                raise InputError(f"{path}:{lineno}: expected two columns, got {len(row)}")
            try:
                a = float(row[idx[0]])
                b = float(row[idx[1]])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
            if not (math.isfinite(a) and math.isfinite(b)):
                raise InputError(f"{path}:{lineno}: non-finite value")
            y1.append(a)
            y2.append(b)
    if len(y1) < 2:
        raise InputError(f"{path}: need at least 2 observations, got {len(y1)}")
    return Dataset(y1=np.frombuffer(y1, dtype=float),
                   y2=np.frombuffer(y2, dtype=float))


# ---------------------------------------------------------------------------
# records and serialization

@dataclass
class BandRecord:
    """Serialized confidence band plus its provenance."""

    x: list
    lower: list
    upper: list
    eta: float
    q: int
    M: float
    alpha: float
    n: int
    seed: int
    critical_mode: str
    feasible: bool
    schema_version: int = SCHEMA_VERSION

    CSV_COLUMNS = ("schema_version", "x", "lower", "upper", "eta", "q", "M",
                   "alpha", "n", "seed", "critical_mode", "feasible")

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_COLUMNS)
        for xi, lo, hi in zip(self.x, self.lower, self.upper):
            writer.writerow([self.schema_version, repr(xi), repr(lo), repr(hi),
                             repr(self.eta), self.q, repr(self.M),
                             repr(self.alpha), self.n, self.seed,
                             self.critical_mode, int(self.feasible)])
        return buf.getvalue()

    def to_json_text(self) -> str:
        payload = {
            "schema_version": self.schema_version,
            "eta": self.eta, "q": self.q, "M": self.M, "alpha": self.alpha,
            "n": self.n, "seed": self.seed, "critical_mode": self.critical_mode,
            "feasible": self.feasible,
            "x": _jsonable(self.x), "lower": _jsonable(self.lower),
            "upper": _jsonable(self.upper),
        }
        return json.dumps(payload, indent=None, separators=(",", ":"),
                          allow_nan=False) + "\n"

    @classmethod
    def from_csv_text(cls, text) -> "BandRecord":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != cls.CSV_COLUMNS:
            raise InputError("unrecognized band CSV header")
        if not rows[1:]:
            raise InputError("band CSV has no data rows")
        first = rows[1]
        return cls(
            x=[float(r[1]) for r in rows[1:]],
            lower=[float(r[2]) for r in rows[1:]],
            upper=[float(r[3]) for r in rows[1:]],
            eta=float(first[4]), q=int(first[5]), M=float(first[6]),
            alpha=float(first[7]), n=int(first[8]), seed=int(first[9]),
            critical_mode=first[10], feasible=bool(int(first[11])),
            schema_version=int(first[0]),
        )

    @classmethod
    def from_json_text(cls, text) -> "BandRecord":
        payload = json.loads(text)
        return cls(
            x=_unjsonable(payload["x"]), lower=_unjsonable(payload["lower"]),
            upper=_unjsonable(payload["upper"]), eta=payload["eta"],
            q=payload["q"], M=payload["M"], alpha=payload["alpha"],
            n=payload["n"], seed=payload["seed"],
            critical_mode=payload["critical_mode"], feasible=payload["feasible"],
            schema_version=payload["schema_version"],
        )


def _jsonable(values):
    return [None if (isinstance(v, float) and not math.isfinite(v)) else float(v)
            for v in values]


def _unjsonable(values):
    return [float("nan") if v is None else float(v) for v in values]


COVERAGE_CSV_COLUMNS = ("schema_version", "model", "target", "q", "M", "n",
                        "alpha", "reps", "seed", "coverage", "avg_length",
                        "bias", "stochastic_length", "infeasible")


def coverage_csv_text(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COVERAGE_CSV_COLUMNS)
    for rep in reports:
        d = rep.to_dict()
        writer.writerow([SCHEMA_VERSION, d["model"], d["target"], d["q"],
                         repr(d["M"]), d["n"], repr(d["alpha"]), d["reps"],
                         d["seed"], repr(d["coverage"]), repr(d["avg_length"]),
                         repr(d["bias"]), repr(d["stochastic_length"]),
                         d["infeasible"]])
    return buf.getvalue()


def coverage_json_text(reports) -> str:
    payload = {"schema_version": SCHEMA_VERSION,
               "reports": [r.to_dict() for r in reports]}
    return json.dumps(payload, separators=(",", ":")) + "\n"


def write_atomic(path, text):
    """Write text to path via a temp file in the same directory + rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".kband-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# flag handling

_DEFAULTS = {
    "q": 7, "M": None, "T": 5.0, "L": 50, "alpha": 0.05, "x_grid": 101,
    "interval": None, "critical_value": "conservative", "reps": None,
    "seed": 0, "threads": None, "format": "csv", "model": 1, "n": 250,
    "params": None, "sigma_u1": 0.5, "sigma_u2": 0.5,
    "alt_model": None, "alt_params": None,
    "tau_max": 10.0, "tau_steps": 2001, "bandwidth": None,
}


def _merge_config(args) -> dict:
    cfg = dict(_DEFAULTS)
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except FileNotFoundError:
            raise InputError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config file {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise InputError("config file must hold a JSON object")
    for key, val in file_cfg.items():
        key = key.replace("-", "_")
        if key not in cfg:
            raise InputError(f"unknown config key {key!r}")
        cfg[key] = val
    for key in cfg:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            cfg[key] = flag_val
    for passthrough in ("input", "output", "command"):
        cfg[passthrough] = getattr(args, passthrough, None)
    return cfg


def _validate_common(cfg):
    if not 0.0 < cfg["alpha"] < 0.5:
        raise InputError(f"--alpha must be in (0, 1/2), got {cfg['alpha']}")
    if cfg["q"] < 1 or cfg["q"] > hermite.MAX_DEGREE:
        raise InputError(f"--q must be in [1, {hermite.MAX_DEGREE}]")
    if cfg["M"] is not None and cfg["M"] <= 0:
        raise InputError("--M must be positive")
    if cfg["T"] <= 0:
        raise InputError("--T must be positive")
    if cfg["L"] < 1:
        raise InputError("--L must be a positive integer")
    if cfg["x_grid"] < 2:
        raise InputError("--x-grid needs at least 2 points")
    if cfg["critical_value"] not in ("conservative", "bootstrap"):
        raise InputError("--critical-value must be conservative or bootstrap")
    if cfg["format"] not in ("csv", "json"):
        raise InputError("--format must be csv or json")
    if cfg["reps"] is not None and cfg["reps"] < 1:
        raise InputError("--reps must be positive")


def _threads(cfg) -> int | None:
    if cfg["threads"] is not None:
        return int(cfg["threads"])
    env = os.environ.get("KBAND_THREADS")
    return int(env) if env else None


def _parse_interval(text):
    try:
        lo, hi = (float(part) for part in str(text).split(","))
    except ValueError:
        raise InputError(f"--interval expects 'LO,HI', got {text!r}") from None
    if not lo < hi:
        raise InputError("--interval must satisfy LO < HI")
    return lo, hi


def _model_from_cfg(cfg, key_model="model", key_params="params") -> SimulationModel:
    number = cfg[key_model]
    if number not in (1, 2, 3):
        raise InputError("--model must be 1 (normal), 2 (skew normal) or 3 (t)")
    base = SimulationModel.preset(number)
    params = cfg[key_params]
    if params is not None:
        if isinstance(params, str):
            params = tuple(float(p) for p in params.split(","))
        else:
            params = tuple(float(p) for p in params)
        base = SimulationModel(base.latent, params,
                               sigma_u1=cfg["sigma_u1"], sigma_u2=cfg["sigma_u2"])
    elif cfg["sigma_u1"] != 0.5 or cfg["sigma_u2"] != 0.5:
        base = SimulationModel(base.latent, base.params,
                               sigma_u1=cfg["sigma_u1"], sigma_u2=cfg["sigma_u2"])
    return base


# ---------------------------------------------------------------------------
# commands

def cmd_band(cfg) -> int:
    _validate_common(cfg)
    if not cfg["input"]:
        raise InputError("band requires --input CSV")
    if not cfg["output"]:
        raise InputError("band requires --output")
    data = ingest_csv(cfg["input"])
    mval = 15.0 if cfg["M"] is None else float(cfg["M"])
    grid = FrequencyGrid.regular(cfg["T"], cfg["L"])
    calib = Calibration.from_data(cfg["q"], mval, cfg["alpha"], grid, data)
    basis = HermiteBasis(cfg["q"])
    bootstrap = cfg["critical_value"] == "bootstrap"
    tables = build_tables(data, basis, grid, retain_observations=bootstrap)

    if cfg["interval"] is not None:
        interval = _parse_interval(cfg["interval"])
    else:
        # Cov(Y1, Y2) estimates the latent variance under independent errors.
        latent_var = float(np.cov(data.y1, data.y2)[0, 1])
        if latent_var <= 0:
            raise InputError(
                "could not derive an evaluation interval from the data "
                "(non-positive covariance); pass --interval LO,HI"
            )
        center = float(np.mean(data.y1))
        half = 2.0 * math.sqrt(latent_var)
        interval = (center - half, center + half)

    kwargs = {}
    if bootstrap and cfg["reps"] is not None:
        kwargs["bootstrap_reps_final"] = int(cfg["reps"])
        kwargs["bootstrap_reps_search"] = max(100, int(cfg["reps"]) // 4)
    problem = BandProblem.for_interval(
        tables, calib, interval, x_points=int(cfg["x_grid"]),
        critical_mode=cfg["critical_value"], rng_seed=int(cfg["seed"]), **kwargs)

    seeds = []
    try:
        cf = livuong.estimate_charfn(data, tau_max=cfg["tau_max"],
                                     steps=int(cfg["tau_steps"]))
        h = livuong.amise_bandwidth(cf, data.n)
        dens = livuong.estimate_density(cf, h, np.linspace(interval[0] - 2,
                                                           interval[1] + 2, 201))
        seeds.append(hermite.project_density(dens, cfg["q"]))
    except ValueError:
        pass

    band = build_band(problem, seeds)
    record = BandRecord(
        x=[float(v) for v in band.x],
        lower=[float(v) for v in band.lower],
        upper=[float(v) for v in band.upper],
        eta=float(band.eta), q=int(cfg["q"]), M=mval, alpha=float(cfg["alpha"]),
        n=data.n, seed=int(cfg["seed"]), critical_mode=cfg["critical_value"],
        feasible=bool(band.feasible),
    )
    text = record.to_csv_text() if cfg["format"] == "csv" else record.to_json_text()
    write_atomic(cfg["output"], text)
    return EXIT_OK if band.feasible else EXIT_INFEASIBLE


def cmd_estimate(cfg) -> int:
    _validate_common(cfg)
    if not cfg["input"]:
        raise InputError("estimate requires --input CSV")
    if not cfg["output"]:
        raise InputError("estimate requires --output")
    data = ingest_csv(cfg["input"])
    cf = livuong.estimate_charfn(data, tau_max=cfg["tau_max"],
                                 steps=int(cfg["tau_steps"]))
    h = cfg["bandwidth"]
    if h is None:
        h = livuong.amise_bandwidth(cf, data.n)
    if cfg["interval"] is not None:
        lo, hi = _parse_interval(cfg["interval"])
    else:
        lo, hi = float(data.y1.min()), float(data.y1.max())
    x_grid = np.linspace(lo, hi, int(cfg["x_grid"]))
    dens = livuong.estimate_density(cf, float(h), x_grid)
    if cfg["format"] == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("schema_version", "x", "f_hat", "h", "n", "seed"))
        for xi, fi in zip(dens.x, dens.f_hat):
            writer.writerow([SCHEMA_VERSION, repr(float(xi)), repr(float(fi)),
                             repr(dens.h), data.n, int(cfg["seed"])])
        text = buf.getvalue()
    else:
        text = json.dumps({
            "schema_version": SCHEMA_VERSION, "h": dens.h, "n": data.n,
            "seed": int(cfg["seed"]),
            "x": [float(v) for v in dens.x],
            "f_hat": [float(v) for v in dens.f_hat],
        }, separators=(",", ":")) + "\n"
    write_atomic(cfg["output"], text)
    return EXIT_OK


def cmd_simulate(cfg) -> int:
    _validate_common(cfg)
    if not cfg["output"]:
        raise InputError("simulate requires --output")
    if cfg["format"] != "csv":
        raise InputError("simulate writes CSV datasets; use --format csv")
    if cfg["n"] < 1:
        raise InputError("--n must be positive")
    model = _model_from_cfg(cfg)
    data = draw_sample(model, int(cfg["n"]), int(cfg["seed"]))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("y1", "y2"))
    for a, b in zip(data.y1, data.y2):
        writer.writerow([repr(float(a)), repr(float(b))])
    write_atomic(cfg["output"], buf.getvalue())
    return EXIT_OK


def cmd_coverage(cfg) -> int:
    _validate_common(cfg)
    if not cfg["output"]:
        raise InputError("coverage requires --output")
    if cfg["n"] < 2:
        raise InputError("--n must be at least 2")
    model = _model_from_cfg(cfg)
    reps = 100 if cfg["reps"] is None else int(cfg["reps"])
    config = ExperimentConfig(
        model=model, n=int(cfg["n"]), q=int(cfg["q"]),
        M=None if cfg["M"] is None else float(cfg["M"]),
        T=float(cfg["T"]), L=int(cfg["L"]), alpha=float(cfg["alpha"]),
        reps=reps, seed=int(cfg["seed"]), x_points=int(cfg["x_grid"]),
        critical_mode=cfg["critical_value"], workers=_threads(cfg),
    )
    alternatives = []
    if cfg["alt_params"] is not None or cfg["alt_model"] is not None:
        alt_cfg = dict(cfg)
        if cfg["alt_model"] is not None:
            alt_cfg["model"] = cfg["alt_model"]
        alt_cfg["params"] = cfg["alt_params"]
        alternatives.append(_model_from_cfg(alt_cfg))
    reports = run_coverage_study(config, alternatives)
    text = (coverage_csv_text(reports) if cfg["format"] == "csv"
            else coverage_json_text(reports))
    write_atomic(cfg["output"], text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kband",
        description="Confidence bands for a latent density observed through "
                    "two noisy measurements",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON file with default flag values")
        p.add_argument("--q", type=int, help="sieve dimension (default 7)")
        p.add_argument("--M", type=float, help="smoothness bound")
        p.add_argument("--T", type=float, help="frequency bound (default 5)")
        p.add_argument("--L", type=int, help="number of frequencies (default 50)")
        p.add_argument("--alpha", type=float, help="level in (0, 1/2), default 0.05")
        p.add_argument("--x-grid", dest="x_grid", type=int,
                       help="number of evaluation points (default 101)")
        p.add_argument("--interval", help="evaluation interval 'LO,HI'")
        p.add_argument("--critical-value", dest="critical_value",
                       choices=("conservative", "bootstrap"))
        p.add_argument("--reps", type=int,
                       help="bootstrap draws (band) or MC replications (coverage)")
        p.add_argument("--seed", type=int, help="random seed (default 0)")
        p.add_argument("--threads", type=int,
                       help="worker processes (default: KBAND_THREADS or all cores)")
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--input", help="input dataset CSV")
        p.add_argument("--output", help="output path")

    band = sub.add_parser("band", help="construct a confidence band from data")
    add_common(band)
    band.add_argument("--tau-max", dest="tau_max", type=float)
    band.add_argument("--tau-steps", dest="tau_steps", type=int)

    est = sub.add_parser("estimate", help="point-estimate the latent density")
    add_common(est)
    est.add_argument("--tau-max", dest="tau_max", type=float)
    est.add_argument("--tau-steps", dest="tau_steps", type=int)
    est.add_argument("--bandwidth", type=float, help="override the plug-in bandwidth")

    sim = sub.add_parser("simulate", help="draw a synthetic dataset")
    add_common(sim)
    sim.add_argument("--model", type=int, help="latent family preset 1|2|3")
    sim.add_argument("--n", type=int, help="sample size")
    sim.add_argument("--params", help="latent parameters 'a,b[,c]'")
    sim.add_argument("--sigma-u1", dest="sigma_u1", type=float)
    sim.add_argument("--sigma-u2", dest="sigma_u2", type=float)

    cov = sub.add_parser("coverage", help="Monte Carlo coverage study")
    add_common(cov)
    cov.add_argument("--model", type=int, help="latent family preset 1|2|3")
    cov.add_argument("--n", type=int, help="sample size")
    cov.add_argument("--params", help="latent parameters 'a,b[,c]'")
    cov.add_argument("--sigma-u1", dest="sigma_u1", type=float)
    cov.add_argument("--sigma-u2", dest="sigma_u2", type=float)
    cov.add_argument("--alt-model", dest="alt_model", type=int,
                     help="alternative latent family for power")
    cov.add_argument("--alt-params", dest="alt_params",
                     help="alternative latent parameters 'a,b[,c]'")
    return parser


_COMMANDS = {
    "band": cmd_band,
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "coverage": cmd_coverage,
}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args)
        return _COMMANDS[args.command](cfg)
    except InputError as exc:
        print(f"kband: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, OSError) as exc:
        print(f"kband: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
