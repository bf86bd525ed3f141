"""Monte Carlo harness: data generation, coverage studies, length tables.

Three latent families are supported (normal, skew normal, Student t), each
observed through two independent Gaussian measurement errors.  A coverage
study repeatedly simulates a dataset, builds the confidence band, and records
whether a target density (the truth, or an alternative for power curves) lies
inside the band at every evaluation point.  Replications are independent and
run on a process pool with per-replication seeds spawned from the study seed,
so results are reproducible regardless of worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, ndtr

from . import hermite, livuong
from .bandsolver import BandProblem, build_band
from .calib import Calibration, sieve_bias_bound
from .hermite import HermiteBasis
from .restriction import Dataset, FrequencyGrid, build_tables

#: Default smoothness bounds per latent family, as used in the length tables.
DEFAULT_SMOOTHNESS = {"normal": 15.0, "skew_normal": 25.0, "student_t": 35.0}


@dataclass(frozen=True)
class SimulationModel:
    """Latent law plus the two measurement-error standard deviations."""

    latent: str  # "normal" | "skew_normal" | "student_t"
    params: tuple
    sigma_u1: float = 0.5
    sigma_u2: float = 0.5

    def __post_init__(self):
        if self.latent not in ("normal", "skew_normal", "student_t"):
            raise ValueError(f"unknown latent family {self.latent!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.latent == "normal":
            if len(self.params) != 2 or self.params[1] <= 0:
                raise ValueError("normal latent needs (location, scale > 0)")
        elif self.latent == "skew_normal":
            if len(self.params) != 3 or self.params[1] <= 0:
                raise ValueError("skew normal needs (location, scale > 0, shape)")
        else:
            if len(self.params) != 1 or self.params[0] <= 2:
                raise ValueError("student t needs degrees of freedom > 2")
        if self.sigma_u1 <= 0 or self.sigma_u2 <= 0:
            raise ValueError("error standard deviations must be positive")

    @classmethod
    def normal(cls, location=0.0, scale=1.0, **kw) -> "SimulationModel":
        return cls("normal", (location, scale), **kw)

    @classmethod
    def skew_normal(cls, location=0.0, scale=1.0, shape=1.0, **kw) -> "SimulationModel":
        return cls("skew_normal", (location, scale, shape), **kw)

    @classmethod
    def student_t(cls, df=5.0, **kw) -> "SimulationModel":
        return cls("student_t", (df,), **kw)

    @classmethod
    def preset(cls, number: int) -> "SimulationModel":
        """The three study presets: 1 normal, 2 skew normal, 3 Student t."""
        if number == 1:
            return cls.normal()
        if number == 2:
            return cls.skew_normal()
        if number == 3:
            return cls.student_t()
        raise ValueError("preset number must be 1, 2, or 3")

    def label(self) -> str:
        return f"{self.latent}({', '.join(f'{p:g}' for p in self.params)})"

    def latent_mean(self) -> float:
        if self.latent == "normal":
            return self.params[0]
        if self.latent == "skew_normal":
            loc, scale, shape = self.params
            d = shape / math.sqrt(1.0 + shape * shape)
            return loc + scale * d * math.sqrt(2.0 / math.pi)
        return 0.0

    def latent_var(self) -> float:
        if self.latent == "normal":
            return self.params[1] ** 2
        if self.latent == "skew_normal":
            _, scale, shape = self.params
            d = shape / math.sqrt(1.0 + shape * shape)
            return scale * scale * (1.0 - 2.0 * d * d / math.pi)
        df = self.params[0]
        return df / (df - 2.0)

    def interval(self) -> tuple[float, float]:
        """Evaluation interval: latent mean +- 2 latent standard deviations."""
        m, s = self.latent_mean(), math.sqrt(self.latent_var())
        return (m - 2.0 * s, m + 2.0 * s)

    def default_smoothness(self) -> float:
        return DEFAULT_SMOOTHNESS[self.latent]

    def pdf(self, x):
        return true_density(self, x)


def true_density(model: SimulationModel, x):
    """Latent probability density at x."""
    x = np.asarray(x, dtype=float)
    if model.latent == "normal":
        loc, scale = model.params
        z = (x - loc) / scale
        out = np.exp(-0.5 * z * z) / (scale * math.sqrt(2.0 * math.pi))
    elif model.latent == "skew_normal":
        loc, scale, shape = model.params
        z = (x - loc) / scale
        out = (2.0 / scale
               * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
               * ndtr(shape * z))
    else:
        df = model.params[0]
        lognorm = (gammaln((df + 1.0) / 2.0) - gammaln(df / 2.0)
                   - 0.5 * math.log(df * math.pi))
        out = np.exp(lognorm - (df + 1.0) / 2.0 * np.log1p(x * x / df))
    return float(out) if out.ndim == 0 else out


def draw_latent(model: SimulationModel, n, rng) -> np.ndarray:
    if model.latent == "normal":
        loc, scale = model.params
        return loc + scale * rng.standard_normal(n)
    if model.latent == "skew_normal":
        loc, scale, shape = model.params
        d = shape / math.sqrt(1.0 + shape * shape)
        z0 = np.abs(rng.standard_normal(n))
        z1 = rng.standard_normal(n)
        return loc + scale * (d * z0 + math.sqrt(1.0 - d * d) * z1)
    df = model.params[0]
    z = rng.standard_normal(n)
    if float(df).is_integer():
        chi2 = np.sum(rng.standard_normal((int(df), n)) ** 2, axis=0)
    else:
        chi2 = 2.0 * rng.standard_gamma(df / 2.0, n)
    return z / np.sqrt(chi2 / df)


def draw_sample(model: SimulationModel, n, seed) -> Dataset:
    """Draw n paired measurements Y1 = X + U1, Y2 = X + U2."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    x = draw_latent(model, n, rng)
    u1 = model.sigma_u1 * rng.standard_normal(n)
    u2 = model.sigma_u2 * rng.standard_normal(n)
    return Dataset(y1=x + u1, y2=x + u2)


@dataclass(frozen=True)
class ExperimentConfig:
    """One coverage-study cell."""

    model: SimulationModel
    n: int
    q: int = 7
    M: float | None = None  # None resolves to the family default
    T: float = 5.0
    L: int = 50
    alpha: float = 0.05
    reps: int = 100
    seed: int = 0
    x_points: int = 101
    critical_mode: str = "conservative"
    lv_seed: bool = False  # include the point-estimate projection as a solver seed
    solve_stride: int = 2  # exact envelope solves every stride-th grid point
    workers: int | None = None

    def smoothness(self) -> float:
        return self.model.default_smoothness() if self.M is None else float(self.M)

    def resolved_workers(self) -> int:
        if self.workers is not None:
            return max(1, int(self.workers))
        env = os.environ.get("KBAND_THREADS")
        if env:
            return max(1, int(env))
        return os.cpu_count() or 1


@dataclass(frozen=True)
class CoverageReport:
    """Aggregated outcome of one (configuration, target) pair."""

    model: str
    target: str
    q: int
    M: float
    n: int
    alpha: float
    reps: int
    seed: int
    coverage: float
    avg_length: float
    bias: float  # total bias contribution to the band width, 2 * eta
    infeasible: int

    @property
    def stochastic_length(self) -> float:
        return self.avg_length - self.bias

    def to_dict(self) -> dict:
        return {
            "model": self.model, "target": self.target, "q": self.q,
            "M": self.M, "n": self.n, "alpha": self.alpha, "reps": self.reps,
            "seed": self.seed, "coverage": self.coverage,
            "avg_length": self.avg_length, "bias": self.bias,
            "stochastic_length": self.stochastic_length,
            "infeasible": self.infeasible,
        }


def simulate_band(config: ExperimentConfig, rep_seed, solver_seed=0):
    """Draw one dataset under the config and build its confidence band."""
    mval = config.smoothness()
    data = draw_sample(config.model, config.n, rep_seed)
    grid = FrequencyGrid.regular(config.T, config.L)
    calib = Calibration.from_data(config.q, mval, config.alpha, grid, data)
    basis = HermiteBasis(config.q)
    tables = build_tables(data, basis, grid,
                          retain_observations=(config.critical_mode == "bootstrap"))
    problem = BandProblem.for_interval(
        tables, calib, config.model.interval(), x_points=config.x_points,
        critical_mode=config.critical_mode, rng_seed=solver_seed,
        solve_stride=config.solve_stride)
    seeds = [hermite.project_density(config.model.pdf, config.q)]
    if config.lv_seed:
        try:
            cf = livuong.estimate_charfn(data, tau_max=10.0, steps=501)
            h = livuong.amise_bandwidth(cf, data.n)
            dens = livuong.estimate_density(cf, h, np.linspace(-10, 10, 401))
            seeds.append(hermite.project_density(dens, config.q))
        except ValueError:
            pass  # unusable point estimate; remaining seeds suffice
    return build_band(problem, seeds)


def _replication(args):
    config, targets, rep_seed, solver_seed = args
    band = simulate_band(config, rep_seed, solver_seed)
    covered = []
    for target in targets:
        covered.append(band.contains(true_density(target, band.x)))
    return band.feasible, band.average_length(), covered


def run_coverage_study(config: ExperimentConfig, alternatives=()) -> list[CoverageReport]:
    """Coverage of the truth and of each alternative, sharing one band sweep.

    The first report targets the data-generating density; one more report
    follows per alternative.  Band lengths are averaged over feasible
    replications; an infeasible band counts as non-coverage for every target.
    """
    targets = [config.model, *alternatives]
    seed_seq = np.random.SeedSequence(config.seed)
    children = seed_seq.spawn(config.reps)
    jobs = [(config, targets, children[i], int(children[i].generate_state(1)[0]))
            for i in range(config.reps)]
    workers = config.resolved_workers()
    if workers > 1 and config.reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replication, jobs, chunksize=4))
    else:
        results = [_replication(job) for job in jobs]

    feasible_flags = np.array([r[0] for r in results], dtype=bool)
    lengths = np.array([r[1] for r in results], dtype=float)
    infeasible = int((~feasible_flags).sum())
    avg_length = float(np.mean(lengths[feasible_flags])) if feasible_flags.any() else float("nan")
    bias = 2.0 * float(sieve_bias_bound(config.q, config.smoothness()))

    reports = []
    for k, target in enumerate(targets):
        covered = np.array([r[2][k] for r in results], dtype=bool)
        reports.append(CoverageReport(
            model=config.model.label(),
            target="truth" if k == 0 else target.label(),
            q=config.q, M=config.smoothness(), n=config.n, alpha=config.alpha,
            reps=config.reps, seed=config.seed,
            coverage=float(covered.mean()),
            avg_length=avg_length, bias=bias, infeasible=infeasible,
        ))
    return reports


def run_coverage(config: ExperimentConfig, alternative=None) -> CoverageReport:
    """Coverage frequency of a single target density (truth by default)."""
    if alternative is None:
        return run_coverage_study(config)[0]
    return run_coverage_study(config, [alternative])[1]


def run_length_table(configs) -> list[CoverageReport]:
    """Length decomposition rows (coverage of the truth) for several cells."""
    return [run_coverage_study(cfg)[0] for cfg in configs]
