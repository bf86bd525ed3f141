"""Frequency-domain moment functions of the repeated-measurement model.

For a pair of noisy measurements (Y1, Y2) of a latent variable with candidate
characteristic function phi, the model implies

    E[(i Y1 phi(t) - phi'(t)) exp(i t Y2)] = 0   for every real t.

With phi built from Hermite basis elements (phi_j = i^j sqrt(2 pi) psi_j) the
real and imaginary parts of the integrand have closed trigonometric forms that
need no numerical integration.  This module evaluates those per-observation
moment functions and reduces a dataset to per-frequency empirical means and
covariances over the stacked basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hermite
from .hermite import SQRT_2PI


@dataclass(frozen=True)
class Dataset:
    """Paired observations of the two measurements."""

    y1: np.ndarray
    y2: np.ndarray

    def __post_init__(self):
        y1 = np.atleast_1d(np.asarray(self.y1, dtype=float))
        y2 = np.atleast_1d(np.asarray(self.y2, dtype=float))
        if y1.ndim != 1 or y2.ndim != 1 or y1.shape != y2.shape:
            raise ValueError("y1 and y2 must be one-dimensional and equally long")
        if y1.size < 1:
            raise ValueError("dataset is empty")
        if not (np.isfinite(y1).all() and np.isfinite(y2).all()):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y2", y2)

    @property
    def n(self) -> int:
        return self.y1.size

    @classmethod
    def from_pairs(cls, pairs) -> "Dataset":
        arr = np.asarray(list(pairs), dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("expected an iterable of (y1, y2) pairs")
        return cls(arr[:, 0], arr[:, 1])


@dataclass(frozen=True)
class FrequencyGrid:
    """Finite grid of frequencies inside [-T, T]."""

    T: float
    t: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.t, dtype=float))
        if self.T <= 0:
            raise ValueError("frequency bound T must be positive")
        if t.size < 1:
            raise ValueError("frequency grid is empty")
        if np.abs(t).max() > self.T + 1e-12:
            raise ValueError("grid points must lie in [-T, T]")
        if t.size > 1 and not (np.diff(t) > 0).all():
            raise ValueError("grid points must be strictly increasing")
        object.__setattr__(self, "t", t)

    @property
    def L(self) -> int:
        return self.t.size

    @classmethod
    def regular(cls, T=5.0, L=50) -> "FrequencyGrid":
        """L equally spaced points on [-T, T].

        For even L the points are shifted by half a step so that exact zero is
        excluded while the grid stays symmetric; odd L uses the endpoints and
        includes zero.
        """
        if L < 1:
            raise ValueError("L must be positive")
        if L % 2 == 0:
            step = 2.0 * T / L
            t = -T + (np.arange(L) + 0.5) * step
        else:
            t = np.linspace(-T, T, L)
        return cls(T=float(T), t=t)


def _basis_parts(q, t):
    """Real/imag parts of i^j psi_j(t) and i^j psi_j'(t), stacked over j <= q.

    Returns (re_a, im_a, re_b, im_b), each of shape (q + 1,).
    """
    p = hermite.psi_table(q, float(t))
    d = hermite.psi_derivative_table(q, float(t))
    re_a = np.zeros(q + 1)
    im_a = np.zeros(q + 1)
    re_b = np.zeros(q + 1)
    im_b = np.zeros(q + 1)
    j = np.arange(q + 1)
    re_a[j % 4 == 0] = p[j % 4 == 0]
    re_a[j % 4 == 2] = -p[j % 4 == 2]
    im_a[j % 4 == 1] = p[j % 4 == 1]
    im_a[j % 4 == 3] = -p[j % 4 == 3]
    re_b[j % 4 == 0] = d[j % 4 == 0]
    re_b[j % 4 == 2] = -d[j % 4 == 2]
    im_b[j % 4 == 1] = d[j % 4 == 1]
    im_b[j % 4 == 3] = -d[j % 4 == 3]
    return re_a, im_a, re_b, im_b


def moment_rows(q, t, y1, y2):
    """Per-observation moment functions for all degrees j <= q at frequency t.

    Returns (R, I), each of shape (n, q + 1):

        R[i, j] = Re[(i y1_i phi_j(t) - phi_j'(t)) exp(i t y2_i)]
        I[i, j] = Im[(i y1_i phi_j(t) - phi_j'(t)) exp(i t y2_i)]

    expanded into real trigonometric arithmetic (no complex numbers, no
    integrals).
    """
    y1 = np.atleast_1d(np.asarray(y1, dtype=float))
    y2 = np.atleast_1d(np.asarray(y2, dtype=float))
    re_a, im_a, re_b, im_b = _basis_parts(q, t)
    ct = np.cos(t * y2)[:, None]
    st = np.sin(t * y2)[:, None]
    u = y1[:, None] * re_a[None, :] - im_b[None, :]
    v = y1[:, None] * im_a[None, :] + re_b[None, :]
    rows_r = -SQRT_2PI * (ct * v + st * u)
    rows_i = SQRT_2PI * (ct * u - st * v)
    return rows_r, rows_i


def moment_real(j, t, y1, y2):
    """Real part of the moment integrand for basis degree j at frequency t."""
    rows_r, _ = moment_rows(j, t, y1, y2)
    out = rows_r[:, j]
    return float(out[0]) if np.ndim(y1) == 0 and np.ndim(y2) == 0 else out


def moment_imag(j, t, y1, y2):
    """Imaginary part of the moment integrand for degree j at frequency t."""
    _, rows_i = moment_rows(j, t, y1, y2)
    out = rows_i[:, j]
    return float(out[0]) if np.ndim(y1) == 0 and np.ndim(y2) == 0 else out


@dataclass(frozen=True)
class MomentTables:
    """Per-frequency empirical means and covariances of the stacked moments.

    Covariances use the 1/n divisor (the empirical variance operator).  When
    built with ``retain_observations=True`` the raw per-observation moment
    matrices are kept for multiplier-bootstrap critical values.
    """

    t: np.ndarray
    n: int
    mean_r: np.ndarray  # (L, q + 1)
    mean_i: np.ndarray
    cov_r: np.ndarray  # (L, q + 1, q + 1)
    cov_i: np.ndarray
    obs_r: np.ndarray | None = None  # (L, n, q + 1) when retained
    obs_i: np.ndarray | None = None

    @property
    def L(self) -> int:
        return self.t.size

    @property
    def q(self) -> int:
        return self.mean_r.shape[1] - 1


def build_tables(data, basis, grid, q=None, retain_observations=False) -> MomentTables:
    """Reduce a dataset to per-frequency moment means and covariances.

    Basis values are evaluated once per frequency and broadcast over the
    observations.
    """
    if q is None:
        q = basis.q_max
    if q > basis.q_max:
        raise ValueError(f"q={q} exceeds basis.q_max={basis.q_max}")
    if data.n < 2:
        raise ValueError("need at least two observations for covariances")
    L = grid.L
    mean_r = np.empty((L, q + 1))
    mean_i = np.empty((L, q + 1))
    cov_r = np.empty((L, q + 1, q + 1))
    cov_i = np.empty((L, q + 1, q + 1))
    obs_r = np.empty((L, data.n, q + 1)) if retain_observations else None
    obs_i = np.empty((L, data.n, q + 1)) if retain_observations else None
    for l, t in enumerate(grid.t):
        rows_r, rows_i = moment_rows(q, t, data.y1, data.y2)
        mean_r[l] = rows_r.mean(axis=0)
        mean_i[l] = rows_i.mean(axis=0)
        cr = rows_r - mean_r[l]
        ci = rows_i - mean_i[l]
        cov_r[l] = cr.T @ cr / data.n
        cov_i[l] = ci.T @ ci / data.n
        if retain_observations:
            obs_r[l] = rows_r
            obs_i[l] = rows_i
    return MomentTables(
        t=grid.t.copy(), n=data.n,
        mean_r=mean_r, mean_i=mean_i, cov_r=cov_r, cov_i=cov_i,
        obs_r=obs_r, obs_i=obs_i,
    )


def projected_moments(data, theta, grid):
    """Means and standard deviations of the moments projected onto theta.

    Works frequency by frequency in O(n) without forming the stacked moment
    matrices, which makes it cheap even for millions of observations.
    Returns (mean_r, mean_i, sd_r, sd_i), each of shape (L,); the standard
    deviations use the 1/n divisor, matching ``build_tables``.
    """
    theta = np.asarray(theta, dtype=float)
    q = theta.size - 1
    L = grid.L
    mean_r = np.empty(L)
    mean_i = np.empty(L)
    sd_r = np.empty(L)
    sd_i = np.empty(L)
    y1, y2 = data.y1, data.y2
    for l, t in enumerate(grid.t):
        re_a, im_a, re_b, im_b = _basis_parts(q, t)
        # theta-aggregated basis values: the moments are linear in psi
        ra, ia = theta @ re_a, theta @ im_a
        rb, ib = theta @ re_b, theta @ im_b
        ct, st = np.cos(t * y2), np.sin(t * y2)
        u = y1 * ra - ib
        v = y1 * ia + rb
        zr = -SQRT_2PI * (ct * v + st * u)
        zi = SQRT_2PI * (ct * u - st * v)
        mean_r[l] = zr.mean()
        mean_i[l] = zi.mean()
        sd_r[l] = zr.std()
        sd_i[l] = zi.std()
    return mean_r, mean_i, sd_r, sd_i
