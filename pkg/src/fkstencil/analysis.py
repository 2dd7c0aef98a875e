"""Error norms, refinement studies and a Monte Carlo Feynman-Kac oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .core import ConfigurationError, Grid, ProblemSpec, SolutionField


@dataclass
class ErrorReport:
    M1: int
    M2: int
    N: int
    err_linf: float
    err_l2: Optional[float] = None
    rate_linf: Optional[float] = None
    rate_l2: Optional[float] = None
    h: Optional[float] = None
    seconds: Optional[float] = None


def error_norms(numeric: SolutionField, problem: ProblemSpec, grid: Grid, t: float = 0.0):
    """Max-norm and discrete L2 error over all nodes, boundary included."""
    if problem.exact is None:
        raise ConfigurationError(f"problem {problem.name!r} has no exact solution")
    X, Y = grid.mesh()
    err = np.abs(numeric.values - problem.exact(X, Y, t))
    linf = float(err.max())
    l2 = float(math.sqrt(grid.h1 * grid.h2 * float(np.sum(err * err))))
    return linf, l2


def observed_rate(err_a: float, err_b: float, h_a: float, h_b: float) -> Optional[float]:
    if err_a is None or err_b is None or not (0 < err_a < math.inf and 0 < err_b < math.inf):
        return None
    return math.log(err_a / err_b) / math.log(h_a / h_b)


def convergence_rates(reports: Sequence[ErrorReport]) -> list:
    """Attach rates between consecutive refinement rows (first row has none)."""
    if len(reports) < 2:
        raise ValueError("need at least two refinement levels")
    hs = [r.h if r.h is not None else 1.0 / r.M1 for r in reports]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("mesh sizes must strictly decrease")
    out = [replace(reports[0], rate_linf=None, rate_l2=None)]
    for prev, cur, ha, hb in zip(reports, reports[1:], hs, hs[1:]):
        out.append(
            replace(
                cur,
                rate_linf=observed_rate(prev.err_linf, cur.err_linf, ha, hb),
                rate_l2=observed_rate(prev.err_l2, cur.err_l2, ha, hb),
            )
        )
    return out


# -- Monte Carlo oracle -----------------------------------------------------------


@dataclass
class OracleEstimate:
    mean: float
    std_error: float
    paths: int
    seed: int
    exact: Optional[float] = None

    @property
    def z_score(self) -> Optional[float]:
        if self.exact is None:
            return None
        if self.std_error == 0:
            return 0.0 if self.mean == self.exact else math.inf
        return (self.mean - self.exact) / self.std_error


def _normals(rng: np.random.Generator, size) -> np.ndarray:
    # inverse-CDF transform of open-interval uniforms
    u = (rng.integers(0, 2**53, size=size, dtype=np.int64) + 0.5) / 2.0**53
    return ndtri(u)


# Discrete-monitoring correction for a killed diffusion: the walls are moved
# inward by this many standard deviations of the normal increment.
SHIFT_BETA = 0.5826


def _half_angle(rho):
    """``cos`` and ``sin`` of ``arcsin(rho) / 2`` without trigonometric calls."""
    rho = np.clip(rho, -1.0, 1.0)
    q = np.sqrt(1.0 - rho * rho)
    return np.sqrt(0.5 * (1.0 + q)), np.copysign(np.sqrt(0.5 * (1.0 - q)), rho)


def _absorb(nx, ny, sig1, sig2, sqdt, d, final):
    """Absorption mask and wall-projected exit points for one sub-step."""
    sx = 0.0 if final else SHIFT_BETA * sig1 * sqdt
    sy = 0.0 if final else SHIFT_BETA * sig2 * sqdt
    gaps = np.stack(np.broadcast_arrays(nx - d.x0 - sx, d.xM1 - sx - nx, ny - d.y0 - sy, d.yM2 - sy - ny))
    out = gaps.min(axis=0) < 0
    wall = np.argmin(gaps[:, out], axis=0)
    bx = np.clip(nx[out], d.x0, d.xM1)
    by = np.clip(ny[out], d.y0, d.yM2)
    bx = np.where(wall == 0, d.x0, np.where(wall == 1, d.xM1, bx))
    by = np.where(wall == 2, d.y0, np.where(wall == 3, d.yM2, by))
    return out, bx, by


def mc_oracle(problem: ProblemSpec, x: float, y: float, t: float, paths: int = 100_000,
              substeps: int = 200, seed: int = 0) -> OracleEstimate:
    """Euler-Maruyama estimate of the Feynman-Kac expectation at ``(x, y, t)``.

    Under Dirichlet conditions a path is absorbed at the first sub-step
    ending outside the domain shrunk by ``SHIFT_BETA * sigma * sqrt(dt)``
    per wall, and is paid the boundary data at its projection onto the
    nearest violated wall. The shrink removes the leading-order bias of
    checking for exits only at sub-step ends. Neumann paths are mirrored and
    periodic paths wrapped after every sub-step. Discounting uses
    left-endpoint rates. Normals come from a Philox stream keyed by
    ``seed``.
    """
    if paths < 1 or substeps < 1:
        raise ValueError("paths and substeps must be at least 1")
    if not t < problem.T:
        raise ValueError("t must be before the horizon")
    d = problem.domain
    kind = problem.boundary_kind
    rng = np.random.Generator(np.random.Philox(key=seed))
    dt = (problem.T - t) / substeps
    sq = math.sqrt(dt)

    X = np.full(paths, float(x))
    Y = np.full(paths, float(y))
    logdisc = np.zeros(paths)
    payoff = np.zeros(paths)
    alive = np.ones(paths, dtype=bool)

    for m in range(substeps):
        tm = t + m * dt
        dW = _normals(rng, (2, paths))
        if kind == "dirichlet":
            idx = np.nonzero(alive)[0]
            if idx.size == 0:
                break
        else:
            idx = slice(None)  # nobody is absorbed
        xa, ya = X[idx], Y[idx]
        c = problem.coefficients(xa, ya, np.full(xa.shape, tm)).broadcast(xa.shape)
        ct, st = _half_angle(c.rho)
        w1, w2 = dW[0, idx] * sq, dW[1, idx] * sq
        nx = xa + c.b1 * dt + c.sigma1 * (ct * w1 + st * w2)
        ny = ya + c.b2 * dt + c.sigma2 * (st * w1 + ct * w2)
        logdisc[idx] -= c.r * dt

        if kind == "dirichlet":
            out, bx, by = _absorb(nx, ny, c.sigma1, c.sigma2, sq, d, m == substeps - 1)
            if np.any(out):
                k = idx[out]
                payoff[k] = np.exp(logdisc[k]) * problem.boundary_values(bx, by, tm + dt)
                alive[k] = False
        elif kind == "neumann":
            nx = np.where(nx < d.x0, 2 * d.x0 - nx, np.where(nx > d.xM1, 2 * d.xM1 - nx, nx))
            ny = np.where(ny < d.y0, 2 * d.y0 - ny, np.where(ny > d.yM2, 2 * d.yM2 - ny, ny))
            nx = np.clip(nx, d.x0, d.xM1)
            ny = np.clip(ny, d.y0, d.yM2)
        else:
            nx = nx - d.Lx * np.floor((nx - d.x0) / d.Lx)
            ny = ny - d.Ly * np.floor((ny - d.y0) / d.Ly)
            nx = np.where((nx >= d.xM1) | (nx < d.x0), d.x0, nx)
            ny = np.where((ny >= d.yM2) | (ny < d.y0), d.y0, ny)
        X[idx], Y[idx] = nx, ny

    if np.any(alive):
        payoff[alive] = np.exp(logdisc[alive]) * np.asarray(
            problem.terminal(X[alive], Y[alive]), dtype=float
        )
    mean = float(payoff.mean())
    # shifting by one sample keeps constant payoffs at exactly zero spread
    std_error = float((payoff - payoff[0]).std(ddof=1) / math.sqrt(paths)) if paths > 1 else 0.0
    exact = float(problem.exact(x, y, t)) if problem.exact is not None else None
    return OracleEstimate(mean, std_error, paths, seed, exact)


# -- refinement studies --------------------------------------------------------------


@dataclass
class StudyResult:
    problem: str
    scheme: str
    rows: list = field(default_factory=list)


def refinement_study(problem: ProblemSpec, scheme: str, levels: Iterable, **solve_options) -> StudyResult:
    """Solve on each ``(M, N)`` pair and tabulate errors with rates."""
    import time

    from .core import make_grid
    from .schemes import solve

    rows = []
    for M, N in levels:
        grid = make_grid(problem.domain, M, M, N, problem.T)
        start = time.perf_counter()
        res = solve(problem, grid, scheme, **solve_options)
        linf, l2 = error_norms(res.field, problem, grid)
        rows.append(ErrorReport(M, M, N, linf, l2, h=grid.h1, seconds=time.perf_counter() - start))
    if len(rows) >= 2:
        rows = convergence_rates(rows)
    return StudyResult(problem.name, scheme, rows)
