"""Point estimation of the latent density from the two noisy measurements.

The latent characteristic function is estimated by exponentiating the
cumulative integral of i * E_n[Y1 e^{i tau Y2}] / E_n[e^{i tau Y2}] from zero,
the error characteristic function by division, and the density by a
regularized Fourier inversion

    f_hat(x) = (1 / 2 pi) * integral e^{-i t x} K_ft(t h) phi_hat(t) dt

over |t| <= 1/h.  The smoothing kernel is fixed through its Fourier transform
K_ft(t) = (1 - t^2)^3 on [-1, 1].  The bandwidth h minimizes a plug-in
estimate of the asymptotically dominant part of the mean integrated squared
error.  Besides serving as a standalone estimator, the projected density seeds
the band solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .restriction import Dataset

#: Empirical characteristic functions below this are treated as vanishing.
DENOMINATOR_FLOOR = 1e-3

#: Second moment of the smoothing kernel, = -K_ft''(0) for (1 - t^2)^3.
KERNEL_SECOND_MOMENT = 6.0


def kernel_ft(t):
    """Fourier transform of the smoothing kernel: (1 - t^2)^3 on [-1, 1]."""
    t = np.asarray(t, dtype=float)
    out = np.where(np.abs(t) <= 1.0, (1.0 - t * t) ** 3, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CharFnEstimate:
    """Latent and first-error characteristic functions on a symmetric grid.

    ``tau_cut`` is the largest |tau| the estimate can be trusted at: beyond
    it the empirical characteristic function of Y2 dropped under the
    denominator floor and values are NaN.
    """

    tau: np.ndarray
    phi_x: np.ndarray
    phi_u1: np.ndarray
    tau_cut: float

    def interp_phi_x(self, t):
        t = np.asarray(t, dtype=float)
        re = np.interp(t, self.tau, np.nan_to_num(self.phi_x.real))
        im = np.interp(t, self.tau, np.nan_to_num(self.phi_x.imag))
        return re + 1j * im

    def interp_phi_u1(self, t):
        t = np.asarray(t, dtype=float)
        re = np.interp(t, self.tau, np.nan_to_num(self.phi_u1.real))
        im = np.interp(t, self.tau, np.nan_to_num(self.phi_u1.imag))
        return re + 1j * im


@dataclass(frozen=True)
class DensityEstimate:
    x: np.ndarray
    f_hat: np.ndarray
    h: float
    max_imag_residue: float = 0.0

    def __call__(self, x):
        return np.interp(np.asarray(x, dtype=float), self.x, self.f_hat,
                         left=0.0, right=0.0)


def _cumulative_trapezoid_from_zero(values, grid):
    """Cumulative trapezoid integral anchored at the grid point closest to 0."""
    i0 = int(np.argmin(np.abs(grid)))
    steps = np.diff(grid)
    seg = 0.5 * (values[1:] + values[:-1]) * steps
    out = np.empty_like(values)
    out[i0] = 0.0
    if i0 + 1 < grid.size:
        out[i0 + 1:] = np.cumsum(seg[i0:])
    if i0 > 0:
        out[:i0] = -np.cumsum(seg[:i0][::-1])[::-1]
    return out


def estimate_charfn(data: Dataset, tau_max=10.0, steps=2001) -> CharFnEstimate:
    """Estimate the latent and first-error characteristic functions.

    The frequency grid has ``steps`` points on [-tau_max, tau_max]; ``steps``
    must be odd so that zero is a grid point (the cumulative integral is
    anchored there, making phi_x(0) = 1 exact).  Frequencies past the first
    point where |E_n[e^{i tau Y2}]| < DENOMINATOR_FLOOR are truncated to NaN.
    """
    if steps < 3 or steps % 2 == 0:
        raise ValueError("steps must be an odd integer >= 3")
    if tau_max <= 0:
        raise ValueError("tau_max must be positive")
    tau = np.linspace(-tau_max, tau_max, steps)
    y1, y2 = data.y1, data.y2
    # E_n[e^{i tau Y2}] and E_n[Y1 e^{i tau Y2}], chunked over tau to bound memory
    e_y2 = np.empty(steps, dtype=complex)
    e_y1y2 = np.empty(steps, dtype=complex)
    chunk = max(1, int(5e6 // max(data.n, 1)))
    for start in range(0, steps, chunk):
        block = tau[start:start + chunk]
        ph = np.exp(1j * block[:, None] * y2[None, :])
        e_y2[start:start + block.size] = ph.mean(axis=1)
        e_y1y2[start:start + block.size] = (ph * y1[None, :]).mean(axis=1)

    integrand = 1j * e_y1y2 / e_y2
    log_phi = _cumulative_trapezoid_from_zero(integrand, tau)
    phi_x = np.exp(log_phi)
    i0 = int(np.argmin(np.abs(tau)))
    phi_x[i0] = 1.0 + 0.0j

    small = np.abs(e_y2) < DENOMINATOR_FLOOR
    tau_cut = tau_max
    if small.any():
        tau_cut = float(np.abs(tau[small]).min())
        dead = np.abs(tau) >= tau_cut
        phi_x[dead] = np.nan

    e_y1_only = np.empty(steps, dtype=complex)
    for start in range(0, steps, chunk):
        block = tau[start:start + chunk]
        e_y1_only[start:start + block.size] = np.exp(
            1j * block[:, None] * y1[None, :]).mean(axis=1)
    phi_u1 = e_y1_only / phi_x
    return CharFnEstimate(tau=tau, phi_x=phi_x, phi_u1=phi_u1, tau_cut=tau_cut)


def default_h_grid(lo=0.05, hi=2.0, count=40) -> np.ndarray:
    return np.geomspace(lo, hi, count)


def amise_bandwidth(estimate: CharFnEstimate, n, h_grid=None, quad_points=401) -> float:
    """Bandwidth minimizing the plug-in asymptotic MISE.

    AMISE(h) = (1 / (2 pi n h)) * int |K_ft(t)|^2 / |phi_u1(t/h)|^2 dt
             + (1 / (8 pi h)) * KERNEL_SECOND_MOMENT
               * int t^4 |phi_x(t/h)|^2 |K_ft(t)|^2 / |phi_u1(t/h)|^2 dt,

    both integrals over [-1, 1] (the kernel's support).  Candidates whose
    required frequency range 1/h leaves the trustworthy part of the estimate,
    or hits the denominator floor, are invalid; if every candidate is invalid
    a ValueError advises using larger bandwidths.
    """
    if h_grid is None:
        h_grid = default_h_grid()
    h_grid = np.asarray(h_grid, dtype=float)
    t = np.linspace(-1.0, 1.0, quad_points)
    k2 = kernel_ft(t) ** 2
    best_h, best_val = None, np.inf
    for h in h_grid:
        if 1.0 / h > estimate.tau_cut or 1.0 / h > estimate.tau.max():
            continue
        pu = estimate.interp_phi_u1(t / h)
        pu2 = np.abs(pu) ** 2
        if (np.sqrt(pu2) < DENOMINATOR_FLOOR).any():
            continue
        px2 = np.abs(estimate.interp_phi_x(t / h)) ** 2
        term1 = np.trapezoid(k2 / pu2, t) / (2.0 * np.pi * n * h)
        term2 = (KERNEL_SECOND_MOMENT / (8.0 * np.pi * h)
                 * np.trapezoid(t ** 4 * px2 * k2 / pu2, t))
        val = term1 + term2
        if val < best_val:
            best_h, best_val = float(h), val
    if best_h is None:
        raise ValueError(
            "no valid bandwidth candidate: the required frequency range hits "
            "the vanishing-denominator floor everywhere; try larger h values"
        )
    return best_h


def estimate_density(estimate: CharFnEstimate, h, x_grid, quad_points=1001) -> DensityEstimate:
    """Regularized Fourier inversion of the estimated characteristic function."""
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    x_grid = np.atleast_1d(np.asarray(x_grid, dtype=float))
    t = np.linspace(-1.0 / h, 1.0 / h, quad_points)
    weights = kernel_ft(t * h) * estimate.interp_phi_x(t)
    kernel = np.exp(-1j * np.outer(x_grid, t)) * weights[None, :]
    vals = np.trapezoid(kernel, t, axis=1) / (2.0 * np.pi)
    residue = float(np.abs(vals.imag).max())
    return DensityEstimate(x=x_grid, f_hat=vals.real, h=float(h),
                           max_imag_residue=residue)
