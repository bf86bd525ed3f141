"""Uniform confidence bands for a latent density from two noisy measurements.

The model is Y1 = X + U1, Y2 = X + U2 with everything unobserved but the
pair (Y1, Y2).  The package inverts a family of studentized frequency-domain
moment inequalities over a Hermite sieve to produce a band that covers the
latent density uniformly on an interval, plus a classical characteristic-
function point estimator and a Monte Carlo harness.
"""

from .bandsolver import (
    BandProblem,
    ConfidenceBand,
    InfeasibleBandError,
    build_band,
    constraint_violation,
    solve_envelope,
    test_statistic,
)
from .calib import (
    Calibration,
    bootstrap_critical_value,
    coefficient_tail_sum,
    conservative_critical_value,
    moment_slack,
    sieve_bias_bound,
)
from .hermite import COEFF_BOUND, HermiteBasis, phi, project_density, psi, psi_derivative
from .livuong import (
    CharFnEstimate,
    DensityEstimate,
    amise_bandwidth,
    estimate_charfn,
    estimate_density,
)
from .restriction import (
    Dataset,
    FrequencyGrid,
    MomentTables,
    build_tables,
    moment_imag,
    moment_real,
    projected_moments,
)
from .simlab import (
    CoverageReport,
    ExperimentConfig,
    SimulationModel,
    draw_sample,
    run_coverage,
    run_coverage_study,
    run_length_table,
    simulate_band,
    true_density,
)

__version__ = "0.1.0"

__all__ = [
    "BandProblem", "ConfidenceBand", "InfeasibleBandError", "build_band",
    "constraint_violation", "solve_envelope", "test_statistic",
    "Calibration", "bootstrap_critical_value", "coefficient_tail_sum",
    "conservative_critical_value", "moment_slack", "sieve_bias_bound",
    "COEFF_BOUND", "HermiteBasis", "phi", "project_density", "psi",
    "psi_derivative",
    "CharFnEstimate", "DensityEstimate", "amise_bandwidth",
    "estimate_charfn", "estimate_density",
    "Dataset", "FrequencyGrid", "MomentTables", "build_tables",
    "moment_imag", "moment_real", "projected_moments",
    "CoverageReport", "ExperimentConfig", "SimulationModel", "draw_sample",
    "run_coverage", "run_coverage_study", "run_length_table", "simulate_band",
    "true_density",
]
