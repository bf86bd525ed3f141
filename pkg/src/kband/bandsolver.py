"""Envelope solver for the moment-inequality confidence band.

The band at a point x is [min, max] of psi(x)' theta over coefficient vectors
theta that (i) stay in the coefficient box, (ii) keep the sieve density above
-eta on a fine grid, (iii) reproduce a unit characteristic function at zero
within tolerance, (iv) pass the studentized moment test T(theta) <= c, and
(v) represent a member of the smoothness class: densities f with the
fourth-order functional bounded by M have coefficient sequences satisfying
sum_j theta_j^2 (2j+1)^4 <= M, so candidate vectors must stay inside that
ellipsoid.  Without (v) the program ranges over arbitrarily rough candidates
and the band inflates several-fold.

Constraint (iv) is reverse-convex: rewritten per frequency it reads
|a' theta| <= delta + (c / sqrt(n)) * sqrt(theta' V theta), a linear form
bounded by a constant plus a norm.  The feasible set is therefore nonconvex
and we use multi-start local search.  The workhorse replaces the norm with a
supporting hyperplane at the current iterate, which yields a linear program
whose feasible set is contained in the true one (the norm dominates its
tangents), so every LP solution is genuinely feasible and the objective
improves monotonically.  The convex ellipsoid (v) enters through its exact
per-coordinate bounds plus cutting planes added at violating iterates.  A
penalized pattern search acts as a derivative-free fallback, and every
reported optimum is re-verified against the exact constraints.
Grid-enumeration tests bound the optimality gap at toy scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csc_matrix

try:  # fast path: scipy's HiGHS bindings without the linprog parsing layer
    from scipy.optimize._highspy._highs_wrapper import _highs_wrapper
except ImportError:  # pragma: no cover - layout varies across scipy versions
    _highs_wrapper = None

from . import hermite
from .calib import Calibration, VARIANCE_FLOOR, bootstrap_critical_value, \
    conservative_critical_value
from .hermite import SQRT_2PI
from .restriction import MomentTables

#: Safety margin subtracted from LP right-hand sides so solver tolerance
#: cannot push iterates outside the exact feasible set.
_LP_MARGIN = 3e-7

#: Acceptance threshold on the exact violation of any point we keep.
_ACCEPT_TOL = 1e-10

_RESEED_EVERY = 25


class InfeasibleBandError(RuntimeError):
    """No coefficient vector satisfies the constraint system."""


_HIGHS_OPTS = {"presolve": False, "output_flag": False, "log_to_console": False}
_BIG = 1e20
_NO_INT = np.empty(0, dtype=np.uint8)


def _solve_lp(obj, A_ub, b_ub, lb, ub):
    """Minimize obj' x subject to A_ub x <= b_ub, lb <= x <= ub.

    Returns the solution vector or None.  Uses scipy's HiGHS bindings
    directly when available (the public linprog wrapper spends comparable
    time on input validation as on these solve sizes).
    """
    if _highs_wrapper is not None:
        Ac = csc_matrix(A_ub)
        res = _highs_wrapper(np.ascontiguousarray(obj, dtype=float),
                             Ac.indptr, Ac.indices, Ac.data,
                             np.full(b_ub.size, -_BIG), b_ub,
                             lb, ub, _NO_INT, _HIGHS_OPTS)
        x = res.get("x")
        if x is None or "Optimal" not in str(res.get("status")):
            return None
        return np.asarray(x, dtype=float)
    res = linprog(obj, A_ub=A_ub, b_ub=b_ub, bounds=list(zip(lb, ub)),
                  method="highs", options={"presolve": False})
    return res.x if res.success else None


def test_statistic(theta, tables: MomentTables, calib: Calibration) -> float:
    """Scaled maximum studentized deviation from the slacked moments.

    sqrt(n) * max over frequencies and real/imaginary parts of
    (|mean' theta| - delta) / sqrt(theta' V theta), with the variance floored
    at VARIANCE_FLOOR so degenerate directions stay finite.
    """
    theta = np.asarray(theta, dtype=float)
    out = -np.inf
    for mean, cov in ((tables.mean_r, tables.cov_r), (tables.mean_i, tables.cov_i)):
        num = np.abs(mean @ theta) - calib.delta
        quad = np.einsum("lij,i,j->l", cov, theta, theta)
        sd = np.sqrt(np.maximum(quad, VARIANCE_FLOOR))
        out = max(out, float((num / sd).max()))
    return float(np.sqrt(tables.n) * out)


@dataclass(frozen=True)
class ConfidenceBand:
    """Evaluated band: lower/upper already include the +-eta enlargement."""

    x: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    eta: float
    feasible: bool

    def contains(self, values) -> bool:
        """Whether a curve sampled on ``x`` lies inside the band everywhere."""
        if not self.feasible:
            return False
        v = np.asarray(values, dtype=float)
        return bool((v >= self.lower).all() and (v <= self.upper).all())

    def average_length(self) -> float:
        if not self.feasible:
            return float("nan")
        return float(np.mean(self.upper - self.lower))


@dataclass(frozen=True)
class BandProblem:
    """Inputs of one band construction.

    ``charfn_tol`` picks the tolerance of the unit-characteristic-function
    constraint: "scaled" uses sqrt(2 pi) * eta (the tolerance implied by the
    Fourier-side truncation bound, the default), "plain" uses eta.
    """

    tables: MomentTables
    calib: Calibration
    x_grid: np.ndarray
    density_floor_grid: np.ndarray
    critical_mode: str = "conservative"
    charfn_tol: str = "scaled"
    smoothness_constraint: bool = True
    bootstrap_reps_search: int = 500
    bootstrap_reps_final: int = 2000
    rng_seed: int = 0
    n_random_starts: int = 6
    solver_tol: float = 1e-6  # objective improvement threshold of the descent
    solve_stride: int = 1  # optimize every stride-th grid point exactly

    def __post_init__(self):
        object.__setattr__(self, "x_grid", np.atleast_1d(np.asarray(self.x_grid, float)))
        object.__setattr__(self, "density_floor_grid",
                           np.atleast_1d(np.asarray(self.density_floor_grid, float)))
        if self.critical_mode not in ("conservative", "bootstrap"):
            raise ValueError("critical_mode must be 'conservative' or 'bootstrap'")
        if self.charfn_tol not in ("scaled", "plain"):
            raise ValueError("charfn_tol must be 'scaled' or 'plain'")
        if self.critical_mode == "bootstrap" and self.tables.obs_r is None:
            raise ValueError("bootstrap mode needs tables built with retain_observations=True")

    @classmethod
    def for_interval(cls, tables, calib, interval, x_points=101,
                     floor_oversample=4, **kwargs) -> "BandProblem":
        lo, hi = float(interval[0]), float(interval[1])
        if not lo < hi:
            raise ValueError("interval must satisfy lo < hi")
        x_grid = np.linspace(lo, hi, int(x_points))
        floor_grid = np.linspace(lo, hi, floor_oversample * (int(x_points) - 1) + 1)
        return cls(tables=tables, calib=calib, x_grid=x_grid,
                   density_floor_grid=floor_grid, **kwargs)

    def critical_value(self, theta=None, final=True) -> float:
        if self.critical_mode == "conservative":
            return conservative_critical_value(self.calib.alpha, self.calib.grid.L,
                                               self.tables.n)
        if theta is None:
            raise ValueError("bootstrap critical value needs theta")
        reps = self.bootstrap_reps_final if final else self.bootstrap_reps_search
        return bootstrap_critical_value(theta, self.tables, reps=reps,
                                        alpha=self.calib.alpha, rng_seed=self.rng_seed)

    def charfn_tolerance(self) -> float:
        return SQRT_2PI * self.calib.eta if self.charfn_tol == "scaled" else self.calib.eta


class _Context:
    """Precomputed arrays shared by every subproblem of one band."""

    def __init__(self, problem: BandProblem):
        tables, calib = problem.tables, problem.calib
        q = tables.q
        self.problem = problem
        self.q1 = q + 1
        self.n = tables.n
        self.sqrt_n = np.sqrt(tables.n)
        self.A = np.vstack([tables.mean_r, tables.mean_i])           # (2L, q1)
        self.V = np.concatenate([tables.cov_r, tables.cov_i])        # (2L, q1, q1)
        self.delta = np.concatenate([calib.delta, calib.delta])      # (2L,)
        self.eta = calib.eta
        self.box = calib.box_bound
        self.F = hermite.psi_table(q, problem.density_floor_grid).T  # (nf, q1)
        self.PX = hermite.psi_table(q, problem.x_grid).T             # (nx, q1)
        pattern = np.real(1j ** np.arange(self.q1))
        self.w = SQRT_2PI * hermite.psi_table(q, 0.0) * pattern      # (q1,)
        self.cf_tol = problem.charfn_tolerance()
        # PSD factors of the covariances: quad forms via one matmul per call
        eigvals, eigvecs = np.linalg.eigh(self.V)
        root = np.sqrt(np.clip(eigvals, 0.0, None))
        self.VT = np.swapaxes(eigvecs * root[:, None, :], 1, 2)      # (2L, q1, q1)
        # Smoothness ellipsoid sum_j theta_j^2 (2j+1)^4 <= M; its exact
        # per-coordinate consequences tighten the variable bounds.
        self.smooth_w = (2.0 * np.arange(self.q1) + 1.0) ** 4
        if problem.smoothness_constraint:
            self.smooth_M = float(calib.M)
            coord = np.sqrt(self.smooth_M / self.smooth_w)
            self.coord_bound = np.minimum(self.box, coord)
        else:
            self.smooth_M = np.inf
            self.coord_bound = np.full(self.q1, self.box)
        self.lb = -self.coord_bound + 1e-10
        self.ub = self.coord_bound - 1e-10
        self._cuts: list[np.ndarray] = []  # tangent rows (theta' row <= 2M)
        self._improve_tol = problem.solver_tol
        if problem.critical_mode == "conservative":
            c = problem.critical_value()
            self.c_search = lambda theta: c
            self.c_final = lambda theta: c
        else:
            self.c_search = lambda theta: problem.critical_value(theta, final=False)
            self.c_final = lambda theta: problem.critical_value(theta, final=True)

    # -- exact constraint system ------------------------------------------

    def violation(self, theta, c) -> float:
        """Maximum constraint violation at theta; <= 0 means feasible.

        The moment-test constraint enters in moment units,
        |a' theta| - delta - (c / sqrt(n)) sd(theta), which is equivalent to
        T(theta) <= c; the smoothness ellipsoid enters through the gap of the
        weighted norm sqrt(sum theta^2 (2j+1)^4) from sqrt(M).
        """
        theta = np.asarray(theta, dtype=float)
        v_box = float(np.abs(theta).max() - self.box)
        v_floor = float((-(self.F @ theta) - self.eta).max())
        v_cf = float(abs(self.w @ theta - 1.0) - self.cf_tol)
        sd = np.sqrt(np.maximum(self._quad(theta), VARIANCE_FLOOR))
        v_mom = float((np.abs(self.A @ theta) - self.delta - (c / self.sqrt_n) * sd).max())
        v = max(v_box, v_floor, v_cf, v_mom)
        if np.isfinite(self.smooth_M):
            v_smooth = float(np.sqrt(self.smooth_w @ (theta * theta))
                             - np.sqrt(self.smooth_M))
            v = max(v, v_smooth)
        return v

    def _quad(self, theta) -> np.ndarray:
        """theta' V theta for every (frequency, part) row."""
        proj = self.VT @ theta
        return np.einsum("li,li->l", proj, proj)

    def _smooth_cut_if_violated(self, theta, rel_tol=0.25) -> bool:
        """Add a tangent plane of the smoothness ellipsoid at a gross violator.

        Small overshoots are cheaper to repair by the exact-check pull-back
        than by piling up cutting planes, so only violations beyond
        ``rel_tol`` grow the cut collection; the pool keeps the most recent
        tangents only, which is where the search currently lives.
        """
        if not np.isfinite(self.smooth_M):
            return False
        val = float(self.smooth_w @ (theta * theta))
        if val <= self.smooth_M * (1.0 + rel_tol):
            return False
        surface = theta * np.sqrt(self.smooth_M / val)
        self._cuts.append(2.0 * self.smooth_w * surface)
        if len(self._cuts) > 96:
            del self._cuts[0]
        return True

    # -- LP machinery -------------------------------------------------------

    def _linearized_rows(self, theta_k, c, floor_idx=None, moment_idx=None):
        """Inequality rows of the tangent LP at theta_k.

        The norm sqrt(theta' V theta) (floored) is replaced by its supporting
        hyperplane at theta_k, an underestimate, so the LP feasible set is a
        subset of the exact one up to the accumulated ellipsoid cuts (outer
        tangents of a convex set, resolved by the exact recheck).  Passing
        ``floor_idx`` / ``moment_idx`` restricts the density-floor and moment
        blocks to active subsets; callers must re-add any row the solution
        then violates.
        """
        quad = self._quad(theta_k)
        g = np.sqrt(np.maximum(quad, VARIANCE_FLOOR))
        S = (self.V @ theta_k) / g[:, None]
        S[quad <= VARIANCE_FLOOR] = 0.0
        kappa = c / self.sqrt_n
        rhs = self.delta + kappa * (g - S @ theta_k)
        A = self.A
        if moment_idx is not None:
            A, S, rhs = A[moment_idx], S[moment_idx], rhs[moment_idx]
        floor_block = self.F if floor_idx is None else self.F[floor_idx]
        blocks = [
            A - kappa * S,
            -A - kappa * S,
            -floor_block,
            self.w[None, :],
            -self.w[None, :],
        ]
        parts = [
            rhs, rhs,
            np.full(floor_block.shape[0], self.eta),
            [1.0 + self.cf_tol, self.cf_tol - 1.0],
        ]
        if self._cuts:
            blocks.append(np.array(self._cuts))
            parts.append(np.full(len(self._cuts), 2.0 * self.smooth_M))
        if np.isfinite(self.smooth_M):
            # supporting plane of the ellipsoid at the radial projection of
            # theta_k; keeps the LP step's overshoot second-order
            val = float(self.smooth_w @ (theta_k * theta_k))
            if val > 0.25 * self.smooth_M:
                surface = theta_k * np.sqrt(self.smooth_M / val)
                blocks.append((2.0 * self.smooth_w * surface)[None, :])
                parts.append([2.0 * self.smooth_M])
        return np.vstack(blocks), np.concatenate(parts)

    def project_start(self, start) -> np.ndarray:
        """Clip a start into the coordinate bounds and the ellipsoid."""
        theta = np.clip(np.asarray(start, dtype=float),
                        -self.coord_bound + 1e-9, self.coord_bound - 1e-9)
        if np.isfinite(self.smooth_M):
            val = float(self.smooth_w @ (theta * theta))
            if val > self.smooth_M:
                theta = theta * np.sqrt(self.smooth_M / val) * (1.0 - 1e-9)
        return theta

    def find_feasible(self, start, c_fun, max_iter=25):
        """Drive a (possibly infeasible) start into the exact feasible set.

        Iterates a max-margin LP (minimize a free slack shared by all rows)
        around successive linearization points; falls back to a pattern
        descent on the violation when the LP path stalls.  Returns a feasible
        theta or None.
        """
        theta = self.project_start(start)
        best, best_v = theta, self.violation(theta, c_fun(theta))
        if best_v <= _ACCEPT_TOL:
            return best
        for _ in range(max_iter):
            c = c_fun(theta)
            A_ub, b_ub = self._linearized_rows(theta, c)
            cols = np.hstack([A_ub, -np.ones((A_ub.shape[0], 1))])
            obj = np.zeros(self.q1 + 1)
            obj[-1] = 1.0
            sol = _solve_lp(obj, cols, b_ub,
                            np.append(self.lb, -_BIG), np.append(self.ub, _BIG))
            if sol is None:
                break
            cand = sol[:-1]
            if self._smooth_cut_if_violated(cand):
                theta = self.project_start(cand)
                continue
            v = self.violation(cand, c_fun(cand))
            if v < best_v:
                best, best_v = cand, v
            if v <= _ACCEPT_TOL:
                return cand
            if sol[-1] > best_v - 1e-12:
                break  # slack no longer shrinking
            theta = cand
        theta, v = self._pattern_descent(best, c_fun, objective=None)
        if v <= _ACCEPT_TOL:
            return theta
        return None

    def improve(self, theta, objective, c_fun, max_iter=30):
        """Monotone descent of a linear objective from a feasible theta.

        The density-floor block enters the LP through an active subset of
        rows, regrown whenever a solution violates a dropped row.
        """
        theta = np.asarray(theta, dtype=float)
        best, best_val = theta, float(objective @ theta)
        active_floor = np.flatnonzero(self.F @ best + self.eta < 0.1)
        g0 = np.sqrt(np.maximum(self._quad(best), VARIANCE_FLOOR))
        kappa0 = c_fun(best) / self.sqrt_n
        slack = self.delta + kappa0 * g0 - np.abs(self.A @ best)
        keep = max(24, int(np.count_nonzero(slack < 0.05)))
        active_mom = np.sort(np.argsort(slack)[:keep])
        for _ in range(max_iter):
            c = c_fun(best)
            A_ub, b_ub = self._linearized_rows(best, c, floor_idx=active_floor,
                                               moment_idx=active_mom)
            cand = _solve_lp(objective, A_ub, b_ub - _LP_MARGIN, self.lb, self.ub)
            if cand is None:
                break
            # grow the working description where this solution escaped it;
            # the candidate itself is still repaired and used this iteration
            grew = self._smooth_cut_if_violated(cand)
            missing = np.flatnonzero(-(self.F @ cand) - self.eta > -1e-9)
            new_rows = np.setdiff1d(missing, active_floor)
            if new_rows.size:
                active_floor = np.union1d(active_floor, new_rows)
                grew = True
            g_cand = np.sqrt(np.maximum(self._quad(cand), VARIANCE_FLOOR))
            mom_gap = np.abs(self.A @ cand) - self.delta - (c / self.sqrt_n) * g_cand
            new_mom = np.setdiff1d(np.flatnonzero(mom_gap > -1e-9), active_mom)
            if new_mom.size:
                active_mom = np.union1d(active_mom, new_mom)
                grew = True
            if self.violation(cand, c_fun(cand)) > _ACCEPT_TOL:
                cand = self._pull_back(cand, best, c_fun)
                if cand is None:
                    if grew:
                        continue
                    break
            val = float(objective @ cand)
            improved = val < best_val - self._improve_tol
            if val < best_val:
                best, best_val = cand, val
            if not improved and not grew:
                break
        return best, best_val

    def _pull_back(self, cand, anchor, c_fun, rounds=40):
        """Bisect toward a feasible anchor until the exact check passes."""
        if np.isfinite(self.smooth_M):
            # ellipsoid-only overshoot repairs radially in one step
            val = float(self.smooth_w @ (cand * cand))
            if val > self.smooth_M:
                scaled = cand * np.sqrt(self.smooth_M / val) * (1.0 - 1e-12)
                if self.violation(scaled, c_fun(scaled)) <= _ACCEPT_TOL:
                    return scaled
        lo, hi = 0.0, 1.0  # 0 = cand, 1 = anchor
        point = None
        for _ in range(rounds):
            mid = 0.5 * (lo + hi)
            trial = (1.0 - mid) * cand + mid * anchor
            if self.violation(trial, c_fun(trial)) <= _ACCEPT_TOL:
                point, hi = trial, mid
            else:
                lo = mid
            if hi - lo < 1e-9:
                break
        return point

    def _pattern_descent(self, theta, c_fun, objective, mu=1e4, rounds=3):
        """Penalized coordinate search: objective + mu * violation^2.

        With ``objective=None`` it descends the violation alone (feasibility
        restoration).  Deterministic, bounded work; used as a fallback when
        the LP path cannot certify a point.
        """
        theta = np.clip(np.asarray(theta, dtype=float), -self.coord_bound,
                        self.coord_bound)

        def merit(th, mu_now):
            v = max(0.0, self.violation(th, c_fun(th)))
            base = float(objective @ th) if objective is not None else 0.0
            return base + mu_now * v * v, v

        best = theta.copy()
        best_m, best_v = merit(best, mu)
        for _ in range(rounds):
            for h in (0.1, 0.03, 0.01, 3e-3, 1e-3, 3e-4, 1e-4):
                moved = True
                while moved:
                    moved = False
                    for k in range(self.q1):
                        for sgn in (1.0, -1.0):
                            cand = best.copy()
                            cand[k] = np.clip(cand[k] + sgn * h,
                                              -self.coord_bound[k], self.coord_bound[k])
                            m, v = merit(cand, mu)
                            if m < best_m - 1e-15:
                                best, best_m, best_v = cand, m, v
                                moved = True
            mu *= 10.0
            best_m, best_v = merit(best, mu)
        return best, best_v


def _default_starts(ctx: _Context, seeds):
    """User seeds, the unit-charfn axis point, then random in-bounds points."""
    starts = [np.asarray(s, dtype=float) for s in seeds]
    axis = np.zeros(ctx.q1)
    axis[0] = 1.0 / ctx.w[0]
    starts.append(axis)
    rng = np.random.default_rng(ctx.problem.rng_seed)
    randoms = rng.uniform(-1.0, 1.0, size=(ctx.problem.n_random_starts, ctx.q1))
    randoms = randoms * ctx.coord_bound[None, :]
    return starts, [r for r in randoms]


def _feasible_pool(ctx: _Context, seeds) -> list[np.ndarray]:
    primary, randoms = _default_starts(ctx, seeds)
    pool = []
    for start in primary:
        th = ctx.find_feasible(start, ctx.c_search)
        if th is not None:
            pool.append(th)
    if not pool:
        for start in randoms:
            th = ctx.find_feasible(start, ctx.c_search)
            if th is not None:
                pool.append(th)
                if len(pool) >= 3:
                    break
    return pool


def solve_envelope(problem: BandProblem, x, direction, seeds=()):
    """Optimize psi(x)' theta over the feasible set from multiple starts.

    ``direction`` is "min" or "max".  Returns (value, theta) with theta
    verified against the exact constraints; raises InfeasibleBandError when
    no start reaches the feasible set.
    """
    if direction not in ("min", "max"):
        raise ValueError("direction must be 'min' or 'max'")
    ctx = _Context(problem)
    pool = _feasible_pool(ctx, seeds)
    if not pool:
        raise InfeasibleBandError("no feasible coefficient vector found from any start")
    sign = 1.0 if direction == "min" else -1.0
    objective = sign * hermite.psi_table(problem.tables.q, float(x))
    best_theta, best_val = None, np.inf
    for th in pool:
        cand, val = ctx.improve(th, objective, ctx.c_search)
        if val < best_val:
            best_theta, best_val = cand, val
    if problem.critical_mode == "bootstrap":
        best_theta = _revalidate_final(ctx, best_theta)
        if best_theta is None:
            raise InfeasibleBandError("no point survives the final bootstrap check")
        best_val = float(objective @ best_theta)
    return sign * best_val, best_theta


def _revalidate_final(ctx: _Context, theta):
    """Re-check a search-stage point under the final critical value."""
    if theta is None:
        return None
    if ctx.violation(theta, ctx.c_final(theta)) <= _ACCEPT_TOL:
        return theta
    return ctx.find_feasible(theta, ctx.c_final)


def build_band(problem: BandProblem, seeds=()) -> ConfidenceBand:
    """Construct the confidence band over the problem's evaluation grid.

    Each grid point warm-starts from its neighbor's optimum; every few points
    the solver re-seeds from the global feasible pool to escape local basins.
    All feasible points ever accepted are finally swept into the envelopes, so
    the reported band is at least as wide as anything the search certified.
    With ``solve_stride`` > 1 only every stride-th point is optimized
    directly; the skipped points take the certified-point envelope, whose gap
    is second order in the grid spacing.
    """
    ctx = _Context(problem)
    x_grid = problem.x_grid
    nx = x_grid.size
    pool = _feasible_pool(ctx, seeds)
    if not pool:
        nan = np.full(nx, np.nan)
        return ConfidenceBand(x=x_grid.copy(), lower=nan, upper=nan.copy(),
                              eta=ctx.eta, feasible=False)

    stride = max(1, int(problem.solve_stride))
    lower_core = np.full(nx, np.inf)
    upper_core = np.full(nx, -np.inf)
    certified = list(pool)
    warm = {"min": None, "max": None}
    for ix in range(nx):
        if ix % stride and ix != nx - 1:
            continue
        for direction, sign, store in (("min", 1.0, lower_core), ("max", -1.0, upper_core)):
            objective = sign * ctx.PX[ix]
            starts = []
            if warm[direction] is not None:
                starts.append(warm[direction])
            if ix % _RESEED_EVERY == 0 or not starts:
                starts.extend(pool[:2])
            best_theta, best_val = None, np.inf
            for th in starts:
                cand, val = ctx.improve(th, objective, ctx.c_search)
                if val < best_val:
                    best_theta, best_val = cand, val
            warm[direction] = best_theta
            certified.append(best_theta)
            store[ix] = sign * best_val

    if problem.critical_mode == "bootstrap":
        kept = [th for th in (_revalidate_final(ctx, t) for t in certified)
                if th is not None]
        if not kept:
            nan = np.full(nx, np.nan)
            return ConfidenceBand(x=x_grid.copy(), lower=nan, upper=nan.copy(),
                                  eta=ctx.eta, feasible=False)
        vals = ctx.PX @ np.array(kept).T
        lower_core = vals.min(axis=1)
        upper_core = vals.max(axis=1)
    else:
        vals = ctx.PX @ np.array(certified).T
        lower_core = np.minimum(lower_core, vals.min(axis=1))
        upper_core = np.maximum(upper_core, vals.max(axis=1))

    return ConfidenceBand(
        x=x_grid.copy(),
        lower=lower_core - ctx.eta,
        upper=upper_core + ctx.eta,
        eta=ctx.eta,
        feasible=True,
    )


def constraint_violation(theta, problem: BandProblem) -> float:
    """Exact maximum violation of the full constraint system (0 if feasible).

    Bootstrap mode evaluates the final-stage critical value, so the number
    reported here is the one the band construction must satisfy.
    """
    ctx = _Context(problem)
    theta = np.asarray(theta, dtype=float)
    c = ctx.c_final(theta)
    return max(0.0, ctx.violation(theta, c))
