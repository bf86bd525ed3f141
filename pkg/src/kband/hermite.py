"""Hermite orthonormal basis: evaluation, derivatives, Fourier images, projections.

The basis functions are

    psi_j(x) = (2^j j! sqrt(pi))^(-1/2) * exp(-x^2/2) * H_j(x),

with H_j the physicists' Hermite polynomials.  All evaluation goes through the
normalized three-term recurrence

    psi_{j+1}(x) = x sqrt(2/(j+1)) psi_j(x) - sqrt(j/(j+1)) psi_{j-1}(x),

which is stable for every degree this package uses (factorial-based formulas
overflow near j = 20).  The functions are eigenfunctions of the Fourier
transform: F[psi_j](t) = i^j sqrt(2 pi) psi_j(t), and their derivatives follow

    psi_j'(x) = sqrt(j/2) psi_{j-1}(x) - sqrt((j+1)/2) psi_{j+1}(x).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SQRT_2PI = float(np.sqrt(2.0 * np.pi))

#: Uniform bound on sup_x |psi_j(x)| over all degrees; also the half-width of
#: the coefficient box for density projections.
COEFF_BOUND = float(1.086435 * np.pi ** -0.25)

#: Degrees above this are rejected: no use case, and it guards the recurrence.
MAX_DEGREE = 200


def _check_degree(j) -> int:
    if j != int(j) or j < 0:
        raise ValueError(f"degree must be a nonnegative integer, got {j!r}")
    if j > MAX_DEGREE:
        raise ValueError(f"degree {j} exceeds supported maximum {MAX_DEGREE}")
    return int(j)


def _raw_table(q_max: int, x: np.ndarray) -> np.ndarray:
    """Recurrence without the degree cap (internals may need q_max + 1)."""
    out = np.empty((q_max + 1,) + x.shape)
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * x * x)
    if q_max >= 1:
        out[1] = np.sqrt(2.0) * x * out[0]
    for j in range(1, q_max):
        out[j + 1] = (
            np.sqrt(2.0 / (j + 1)) * x * out[j]
            - np.sqrt(j / (j + 1.0)) * out[j - 1]
        )
    return out


def psi_table(q_max, x) -> np.ndarray:
    """Evaluate psi_0 .. psi_q_max at x; shape (q_max + 1,) + shape(x)."""
    q_max = _check_degree(q_max)
    return _raw_table(q_max, np.asarray(x, dtype=float))


def psi(j, x):
    """psi_j(x), vectorized over x."""
    j = _check_degree(j)
    x = np.asarray(x, dtype=float)
    val = _raw_table(j, x)[j]
    return float(val) if x.ndim == 0 else val


def psi_derivative_table(q_max, x) -> np.ndarray:
    """psi_j'(x) for j = 0 .. q_max via the ladder relation."""
    q_max = _check_degree(q_max)
    x = np.asarray(x, dtype=float)
    tab = _raw_table(q_max + 1, x)
    out = np.empty((q_max + 1,) + x.shape)
    for j in range(q_max + 1):
        lower = np.sqrt(j / 2.0) * tab[j - 1] if j >= 1 else 0.0
        out[j] = lower - np.sqrt((j + 1) / 2.0) * tab[j + 1]
    return out


def psi_derivative(j, x):
    """psi_j'(x), vectorized over x."""
    j = _check_degree(j)
    x = np.asarray(x, dtype=float)
    val = psi_derivative_table(j, x)[j]
    return float(val) if x.ndim == 0 else val


def phi(j, t):
    """Fourier image F[psi_j](t) = i^j sqrt(2 pi) psi_j(t), complex-valued."""
    j = _check_degree(j)
    return (1j ** j) * SQRT_2PI * psi(j, t)


@dataclass(frozen=True)
class HermiteBasis:
    """Stateless evaluator for the basis up to a fixed maximum degree."""

    q_max: int

    def __post_init__(self):
        _check_degree(self.q_max)

    def row(self, x) -> np.ndarray:
        """(psi_0(x), ..., psi_q_max(x))."""
        return psi_table(self.q_max, x)

    def derivative_row(self, x) -> np.ndarray:
        return psi_derivative_table(self.q_max, x)


def project_density(f, q, radius=10.0, nodes=4001, box_tol=1e-6) -> np.ndarray:
    """Projection coefficients (<f, psi_0>, ..., <f, psi_q>) by trapezoid rule.

    The default window [-10, 10] with 4001 nodes is plenty for the density
    families this package targets.  For a probability density every
    coefficient must lie in [-COEFF_BOUND, COEFF_BOUND]; exceeding the box by
    more than `box_tol` signals an invalid input or a too-narrow window and
    raises ValueError.
    """
    q = _check_degree(q)
    x = np.linspace(-radius, radius, nodes)
    vals = np.asarray(f(x), dtype=float)
    if vals.shape != x.shape:
        vals = np.array([float(f(xi)) for xi in x])
    theta = np.trapezoid(_raw_table(q, x) * vals, x, axis=1)
    excess = np.abs(theta).max() - COEFF_BOUND
    if excess > box_tol:
        raise ValueError(
            f"projection leaves the coefficient box by {excess:.2e}; "
            "input is not a density or the quadrature window is too narrow"
        )
    return theta
