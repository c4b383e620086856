"""Mean-variance allocation on the unit simplex.

QMAP:  minimize w'Aw + b'w - q c'w  subject to  w >= 0, sum(w) = 1
MAP:   maximize c'k  subject to  k'Ak + b'k <= d,  k >= 0, sum(k) = m

QMAP is solved by accelerated projected gradient with a fixed 1/L step.
Convergence is certified by the Frank-Wolfe gap, which bounds the
distance of the objective from its optimum on the simplex.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import Allocation, AllocationProblem

DEFAULT_Q_GRID = tuple(float(q) for q in range(0, 1501, 25)) + (
    1750.0, 2000.0, 3000.0, 4000.0, 5000.0, 7500.0, 10_000.0, 15_000.0, 20_000.0,
)


class SolverFailure(RuntimeError):
    pass


class InfeasibleBound(ValueError):
    """The variance cap is below the minimum achievable variance."""


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 50_000
    tolerance: float = 1e-10
    lipschitz_floor: float = 1e-300

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")


@dataclass(frozen=True)
class QMAPSolution:
    weights: np.ndarray
    objective: float
    gap: float
    iterations: int
    converged: bool


def project_simplex(v, total: float = 1.0) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) = total} by sort and threshold."""
    v = np.asarray(v, dtype=float)
    if v.size == 1:
        return np.array([float(total)])
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / idx > 0)[-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def qmap_objective(problem: AllocationProblem, q: float, w) -> float:
    w = np.asarray(w, dtype=float)
    return float(w @ problem.a_matrix @ w + (problem.b_vector - q * problem.c_vector) @ w)


def lipschitz_bound(a: np.ndarray, floor: float = 1e-300) -> float:
    # Gershgorin bound on lambda_max(A); the gradient of w'Aw is 2Aw.
    return max(2.0 * float(np.max(np.sum(np.abs(a), axis=1))), floor)


def solve_qmap(
    problem: AllocationProblem,
    q: float,
    cfg: SolverConfig = SolverConfig(),
    w0: Optional[np.ndarray] = None,
) -> QMAPSolution:
    if not q >= 0:
        raise ValueError(f"q must be nonnegative, got {q}")
    a = problem.a_matrix
    lin = problem.b_vector - q * problem.c_vector
    n = problem.n
    if n == 1:
        w = np.ones(1)
        return QMAPSolution(w, qmap_objective(problem, q, w), 0.0, 0, True)

    step = 1.0 / lipschitz_bound(a, cfg.lipschitz_floor)
    x = np.full(n, 1.0 / n) if w0 is None else project_simplex(w0)
    y = x.copy()
    t = 1.0
    f = float(x @ (a @ x) + lin @ x)
    best_x, best_f = x, f
    stopped = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        g = 2.0 * (a @ y) + lin
        # projection ignores a constant shift; removing it keeps the
        # weights' low digits when step * |g| is large
        g -= g.min()
        x_new = project_simplex(y - step * g)
        f_new = float(x_new @ (a @ x_new) + lin @ x_new)
        gap = fw_gap(a, lin, x_new)
        if f_new <= best_f:
            best_x, best_f = x_new, f_new
        if gap <= cfg.tolerance * (1.0 + abs(f_new)):
            stopped = True
            break
        if np.array_equal(x_new, x) and np.array_equal(y, x):
            # fixed point of the plain projected step: nothing left to resolve
            stopped = True
            break
        if f_new > f:
            # adaptive restart: drop momentum when the objective goes up
            t = 1.0
            y = x_new
        else:
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        x, f = x_new, f_new
    w = np.maximum(best_x, 0.0)
    w = w / w.sum()
    gap = fw_gap(a, lin, w)
    obj = qmap_objective(problem, q, w)
    converged = stopped or gap <= cfg.tolerance * (1.0 + abs(obj))
    return QMAPSolution(w, obj, gap, it, converged)


def fw_gap(a: np.ndarray, lin: np.ndarray, w: np.ndarray) -> float:
    """Frank-Wolfe gap: an upper bound on objective minus optimum."""
    g = 2.0 * (a @ w) + lin
    return float(w @ (g - g.min()))


def qmap_grid_oracle(problem: AllocationProblem, q: float, resolution: int = 2000):
    """Best QMAP objective over simplex points with spacing 1/resolution.

    Enumerates the grid; only sensible for n <= 4.
    """
    n = problem.n
    if n > 4:
        raise ValueError(f"grid oracle supports at most 4 ads, got {n}")
    if n == 1:
        w = np.ones(1)
        return w, qmap_objective(problem, q, w)
    a = problem.a_matrix
    lin = problem.b_vector - q * problem.c_vector
    r = resolution
    best_f, best_w = math.inf, None
    # vectorize over the last free coordinate
    for head in itertools.product(range(r + 1), repeat=n - 2):
        rest = r - sum(head)
        if rest < 0:
            continue
        last = np.arange(rest + 1)
        pts = np.empty((last.size, n))
        pts[:, : n - 2] = np.array(head, dtype=float)
        pts[:, n - 2] = last
        pts[:, n - 1] = rest - last
        pts /= r
        vals = np.einsum("ij,jk,ik->i", pts, a, pts) + pts @ lin
        j = int(np.argmin(vals))
        if vals[j] < best_f:
            best_f, best_w = float(vals[j]), pts[j].copy()
    return best_w, best_f


@dataclass(frozen=True)
class FrontierPoint:
    q: float
    weights: np.ndarray
    est_revenue: float
    est_variance: float
    converged: bool


def scaled_moments(problem: AllocationProblem, w, m: Optional[int] = None):
    """Revenue and variance of spreading m calls in proportion ``w``."""
    m = problem.m if m is None else m
    w = np.asarray(w, dtype=float)
    rev = m * float(problem.c_vector @ w)
    var = m * m * float(w @ problem.a_matrix @ w) + m * float(problem.b_vector @ w)
    return rev, var


def trace_frontier(
    problem: AllocationProblem,
    q_grid: Sequence[float] = DEFAULT_Q_GRID,
    cfg: SolverConfig = SolverConfig(),
    warm_start: bool = True,
) -> list:
    if len(q_grid) == 0:
        raise ValueError("q_grid is empty")
    if any(b < a for a, b in zip(q_grid, q_grid[1:])):
        raise ValueError("q_grid must be sorted ascending")
    points = []
    w_prev = None
    for q in q_grid:
        sol = solve_qmap(problem, q, cfg, w0=w_prev if warm_start else None)
        if not sol.converged:
            raise SolverFailure(f"QMAP did not converge at q={q} (gap {sol.gap:g})")
        rev, var = scaled_moments(problem, sol.weights)
        points.append(FrontierPoint(float(q), sol.weights, rev, var, sol.converged))
        w_prev = sol.weights
    return points


def solve_map(
    problem: AllocationProblem,
    d: float,
    cfg: SolverConfig = SolverConfig(),
    rel_tol: float = 1e-6,
    max_bisections: int = 200,
) -> np.ndarray:
    """Largest-revenue frontier weights whose m-scale variance is at most ``d``.

    Bisects on q: a larger q never lowers revenue nor variance along the
    frontier. Raises :class:`InfeasibleBound` when even q = 0 exceeds ``d``.
    """
    if not d >= 0:
        raise ValueError("d must be >= 0")

    def solve(q, w0=None):
        sol = solve_qmap(problem, q, cfg, w0=w0)
        if not sol.converged:
            raise SolverFailure(f"QMAP did not converge at q={q}")
        return sol.weights, scaled_moments(problem, sol.weights)[1]

    w_lo, var_lo = solve(0.0)
    if var_lo > d * (1 + 1e-12):
        raise InfeasibleBound(f"minimum achievable variance {var_lo:g} exceeds bound {d:g}")

    # the revenue-maximizing end of the frontier: every weight on argmax c
    c = problem.c_vector
    top = np.flatnonzero(c >= c.max() * (1 - 1e-15))
    q_lo, q_hi = 0.0, 1.0
    while True:
        w_hi, var_hi = solve(q_hi, w_lo)
        if var_hi > d:
            break
        q_lo, w_lo = q_hi, w_hi
        if w_hi[top].sum() >= 1.0 - 1e-12 or q_hi > 1e300:
            return w_hi
        q_hi *= 2.0

    for _ in range(max_bisections):
        if q_hi - q_lo <= rel_tol * q_hi:
            break
        q_mid = 0.5 * (q_lo + q_hi)
        w_mid, var_mid = solve(q_mid, w_lo)
        if var_mid <= d:
            q_lo, w_lo = q_mid, w_mid
        else:
            q_hi = q_mid
    return w_lo


def round_allocation(weights, m: int) -> np.ndarray:
    """Largest-remainder rounding of m * weights; ties go to the lower index."""
    w = np.maximum(np.asarray(weights, dtype=float), 0.0)
    w = w / w.sum()
    raw = m * w
    counts = np.floor(raw).astype(np.int64)
    short = int(m - counts.sum())
    if short > 0:
        rem = raw - counts
        order = sorted(range(w.size), key=lambda i: (-rem[i], i))
        for i in order[:short]:
            counts[i] += 1
    return counts


def make_allocation(weights, m: int) -> Allocation:
    counts = round_allocation(weights, m)
    w = np.maximum(np.asarray(weights, dtype=float), 0.0)
    return Allocation(w / w.sum(), counts)
