"""Tuning levels and critical values for the moment-inequality band.

Given a sieve dimension q and a smoothness bound M on the candidate density
class, the truncation-error tolerances are plain formulas:

    D(q)     = sum_{j > q} (2j + 1)^(-3)
    eta      = COEFF_BOUND / sqrt(2q + 3) * sqrt(M D(q))
    delta    = (1 / sqrt(2 pi)) * sqrt(M D(q)) * (E_n|Y1| / sqrt(2q + 3) + 1)

eta bounds the uniform sieve approximation error of any density in the class;
delta slacks the per-frequency moment equalities and is the same at every
frequency.  Two critical values are provided: a closed-form conservative one
and a multiplier-bootstrap one that needs per-observation moment storage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .hermite import COEFF_BOUND, SQRT_2PI
from .restriction import FrequencyGrid, MomentTables

#: Floor applied under the square root of projected moment variances.
VARIANCE_FLOOR = 1e-12

_TERM_CUTOFF = 1e-15


def coefficient_tail_sum(q) -> float:
    """D(q): sum of (2j + 1)^(-3) over j > q, to absolute error below 1e-14.

    Terms are accumulated until they drop under 1e-15; the remainder is the
    midpoint-rule continuation (1/2) * integral of x^(-3) from the even
    boundary after the last included odd index.
    """
    if q < 0 or q != int(q):
        raise ValueError("q must be a nonnegative integer")
    total = 0.0
    j = int(q) + 1
    while True:
        term = (2.0 * j + 1.0) ** -3
        if term < _TERM_CUTOFF:
            total += 0.25 * (2.0 * j) ** -2
            return total
        total += term
        j += 1


def sieve_bias_bound(q, M) -> float:
    """Uniform truncation-error bound eta implied by (q, M)."""
    if M <= 0:
        raise ValueError("smoothness bound M must be positive")
    return COEFF_BOUND / np.sqrt(2.0 * q + 3.0) * np.sqrt(M * coefficient_tail_sum(q))


def moment_slack(q, M, mean_abs_y1) -> float:
    """Frequency-uniform tolerance delta for the moment inequalities.

    The leading constant is replaced by one for slackness, which also covers
    estimating E|Y1| by its sample mean.
    """
    if M <= 0:
        raise ValueError("smoothness bound M must be positive")
    if mean_abs_y1 < 0:
        raise ValueError("mean_abs_y1 must be nonnegative")
    d = coefficient_tail_sum(q)
    return (1.0 / SQRT_2PI) * np.sqrt(M * d) * (mean_abs_y1 / np.sqrt(2.0 * q + 3.0) + 1.0)


def normal_quantile(p) -> float:
    """Standard normal quantile (scipy's ndtri, good far beyond 1e-9)."""
    if not 0.0 < p < 1.0:
        raise ValueError("quantile level must be in (0, 1)")
    return float(ndtri(p))


def conservative_critical_value(alpha, L, n) -> float:
    """Closed-form critical value dominating the bootstrap one.

    c(alpha) = z / (1 - z^2 / n) with z the (1 - alpha / (4L)) normal
    quantile.  Errors out when n is too small for the requested (alpha, L),
    i.e. the denominator is not positive.
    """
    if not 0.0 < alpha < 0.5:
        raise ValueError("alpha must be in (0, 1/2)")
    if L < 1 or n < 1:
        raise ValueError("L and n must be positive")
    z = normal_quantile(1.0 - alpha / (4.0 * L))
    denom = 1.0 - z * z / n
    if denom <= 0.0:
        raise ValueError(
            f"sample size n={n} too small for alpha={alpha}, L={L} "
            f"(needs n > {z * z:.1f})"
        )
    return z / denom


@dataclass(frozen=True)
class Calibration:
    """All tuning levels of a band problem, fixed before seeing the solver."""

    q: int
    M: float
    alpha: float
    grid: FrequencyGrid
    eta: float
    delta: np.ndarray  # (L,), equal entries under the frequency-uniform rule
    box_bound: float = COEFF_BOUND
    tail_sum: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.5:
            raise ValueError("alpha must be in (0, 1/2)")
        delta = np.atleast_1d(np.asarray(self.delta, dtype=float))
        if delta.size == 1:
            delta = np.full(self.grid.L, float(delta[0]))
        if delta.size != self.grid.L:
            raise ValueError("delta must have one entry per frequency")
        if (delta <= 0).any():
            raise ValueError("delta entries must be positive")
        object.__setattr__(self, "delta", delta)

    @classmethod
    def from_mean_abs(cls, q, M, alpha, grid, mean_abs_y1) -> "Calibration":
        d = coefficient_tail_sum(q)
        eta = sieve_bias_bound(q, M)
        delta = moment_slack(q, M, mean_abs_y1)
        return cls(q=int(q), M=float(M), alpha=float(alpha), grid=grid,
                   eta=float(eta), delta=np.full(grid.L, delta), tail_sum=d)

    @classmethod
    def from_data(cls, q, M, alpha, grid, data) -> "Calibration":
        return cls.from_mean_abs(q, M, alpha, grid, float(np.mean(np.abs(data.y1))))


def bootstrap_critical_value(theta, tables: MomentTables, reps=2000, alpha=0.05,
                             rng_seed=0) -> float:
    """Multiplier-bootstrap critical value at a fixed coefficient vector.

    Draws i.i.d. standard normal multipliers, recenters the retained
    per-observation moment projections, and returns the empirical
    (1 - alpha) quantile of the resulting maximum statistic.  Deterministic
    given ``rng_seed``.
    """
    if reps < 100:
        raise ValueError("need at least 100 bootstrap replications")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if tables.obs_r is None or tables.obs_i is None:
        raise ValueError(
            "tables lack per-observation storage; build them with "
            "retain_observations=True for the bootstrap critical value"
        )
    theta = np.asarray(theta, dtype=float)
    n = tables.n
    rows = []
    for obs, mean, cov in ((tables.obs_r, tables.mean_r, tables.cov_r),
                           (tables.obs_i, tables.mean_i, tables.cov_i)):
        centered = obs @ theta - (mean @ theta)[:, None]  # (L, n)
        quad = np.einsum("lij,i,j->l", cov, theta, theta)
        sd = np.sqrt(np.maximum(quad, VARIANCE_FLOOR))
        rows.append(centered / (sd[:, None] * np.sqrt(n)))
    Z = np.vstack(rows)  # (2L, n); statistic per draw = max |Z @ eps|
    rng = np.random.default_rng(rng_seed)
    stats = np.empty(reps)
    chunk = max(1, min(reps, int(2e7 // max(n, 1))))
    for start in range(0, reps, chunk):
        eps = rng.standard_normal((min(chunk, reps - start), n))
        stats[start:start + eps.shape[0]] = np.abs(eps @ Z.T).max(axis=1)
    return float(np.quantile(stats, 1.0 - alpha))
