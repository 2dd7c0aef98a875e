"""Explicit linear-interpolation semi-Lagrangian (LISL) baseline.

The diffusion is split along the two columns of the rotation factorization
of A, each handled by a centered second difference of length ``k`` along
that column; the drift rides on the second pair of points. Off-grid values
come from bilinear interpolation of the next level. Points that leave the
domain are resolved either with the exact solution (``exact``) or by
bilinear extrapolation from a clamped boundary cell (``extrap``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    CoefficientSample,
    ConfigurationError,
    Grid,
    ProblemSpec,
    SolutionField,
    evaluate_coefficients,
)
from .interp import bilinear_eval

MODES = ("exact", "extrap")


@dataclass(frozen=True)
class LislConfig:
    k: float
    boundary_mode: str = "exact"
    theta_scheme: float = 0.0
    P: int = 2

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("stencil length k must be positive")
        if self.boundary_mode not in MODES:
            raise ValueError(f"boundary_mode must be one of {MODES}")
        if self.theta_scheme != 0.0:
            raise ConfigurationError("only the explicit variant (theta = 0) is implemented")
        if self.P != 2:
            raise ConfigurationError("only the two-direction decomposition is implemented")

    @classmethod
    def for_grid(cls, grid: Grid, mode: str = "exact", k: Optional[float] = None,
                 boundary_mode: Optional[str] = None) -> "LislConfig":
        """Default configuration ``k = sqrt(h)`` for a grid."""
        if k is None:
            k = math.sqrt(max(grid.h1, grid.h2))
        return cls(k=k, boundary_mode=boundary_mode or mode)


def lisl_directions(coeffs: CoefficientSample):
    """Two columns ``A_1, A_2`` (each a pair of arrays) with A_1A_1^T + A_2A_2^T = AA^T."""
    rho = np.asarray(coeffs.rho, dtype=float)
    theta = 0.5 * np.arcsin(np.clip(rho, -1.0, 1.0))
    s1 = np.asarray(coeffs.sigma1, dtype=float)
    s2 = np.asarray(coeffs.sigma2, dtype=float)
    ct, st = np.cos(theta), np.sin(theta)
    return 2, ((s1 * ct, s2 * st), (s1 * st, s2 * ct))


def stencil_points(x, y, coeffs: CoefficientSample, k: float):
    """The four off-node points of the operator, order: +A1, -A1, +A2+drift, -A2+drift."""
    _, (a1, a2) = lisl_directions(coeffs)
    k2 = k * k
    b1 = np.asarray(coeffs.b1, dtype=float)
    b2 = np.asarray(coeffs.b2, dtype=float)
    px = np.stack(np.broadcast_arrays(x + k * a1[0], x - k * a1[0], x + k * a2[0] + k2 * b1, x - k * a2[0] + k2 * b1))
    py = np.stack(np.broadcast_arrays(y + k * a1[1], y - k * a1[1], y + k * a2[1] + k2 * b2, y - k * a2[1] + k2 * b2))
    return px, py


def lisl_operator(evaluate, node, coeffs: CoefficientSample, config: LislConfig, t: float = 0.0):
    """Directional second-difference operator applied to ``evaluate(x, y)``.

    Returns an approximation of ``1/2 Tr(AA^T D^2 phi) + b . grad phi`` at
    ``node``.
    """
    x, y = (np.asarray(v, dtype=float) for v in node)
    px, py = stencil_points(x, y, coeffs, config.k)
    v = evaluate(px, py)
    centre = evaluate(x, y)
    k2 = config.k * config.k
    return ((v[0] - 2 * centre + v[1]) + (v[2] - 2 * centre + v[3])) / (2 * k2)


def cfl_check(problem: ProblemSpec, grid: Grid, config: LislConfig, samples_per_level: int = 1):
    """Evaluate ``(1 - theta) dt (P / k^2 + r_max) <= 1`` on the grid nodes.

    Returns ``(passed, worst)`` where ``worst`` is the largest left-hand side.
    """
    X, Y = grid.mesh()
    rmax = 0.0
    levels = np.linspace(0, grid.N, min(grid.N + 1, 11)).round().astype(int)
    for n in levels:
        c = evaluate_coefficients(problem, X, Y, grid.t(n)).broadcast(X.shape)
        rmax = max(rmax, float(np.max(c.r)))
    worst = cfl_value(grid.dt, config.P, config.k, rmax, config.theta_scheme)
    return worst <= 1.0, worst


def cfl_value(dt: float, P: int, k: float, r_max: float, theta: float = 0.0) -> float:
    return (1.0 - theta) * dt * (P / (k * k) + r_max)


def extrapolate(values: np.ndarray, grid: Grid, x, y):
    """Bilinear formula of the nearest boundary cell, evaluated outside the domain."""
    d = grid.domain
    fx = (np.asarray(x, dtype=float) - d.x0) / grid.h1
    fy = (np.asarray(y, dtype=float) - d.y0) / grid.h2
    i = np.clip(np.floor(fx).astype(np.int64), 0, grid.M1 - 1)
    j = np.clip(np.floor(fy).astype(np.int64), 0, grid.M2 - 1)
    px, py = fx - i, fy - j
    return (
        (1 - px) * (1 - py) * values[i, j]
        + px * (1 - py) * values[i + 1, j]
        + (1 - px) * py * values[i, j + 1]
        + px * py * values[i + 1, j + 1]
    )


def make_evaluator(problem: ProblemSpec, grid: Grid, config: LislConfig, field: SolutionField, t: float):
    """Point evaluator of the level at time ``t`` honoring ``config.boundary_mode``."""
    if config.boundary_mode == "exact" and problem.exact is None:
        raise ConfigurationError("exact boundary mode needs a problem with an exact solution")
    d = grid.domain
    values = field.values

    def evaluate(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = d.contains(x, y, tol=0.0)
        out = np.empty(np.broadcast_shapes(x.shape, y.shape))
        x, y, inside = np.broadcast_arrays(x, y, inside)
        if np.any(inside):
            out[inside] = bilinear_eval(values, grid, x[inside], y[inside])
        outside = ~inside
        if np.any(outside):
            if config.boundary_mode == "exact":
                out[outside] = problem.exact(x[outside], y[outside], t)
            else:
                out[outside] = extrapolate(values, grid, x[outside], y[outside])
        return out

    return evaluate


def lisl_step(problem: ProblemSpec, grid: Grid, config: LislConfig, next: SolutionField, n: int) -> SolutionField:
    """One explicit backward step ``U^n = U^{n+1} + dt (L_k U^{n+1} - r U^{n+1})``."""
    if problem.boundary_kind != "dirichlet":
        raise ConfigurationError("LISL is implemented for Dirichlet problems only")
    t1 = grid.t(n + 1)
    X, Y = grid.mesh()
    Xi, Yi = X[1:-1, 1:-1], Y[1:-1, 1:-1]
    c = evaluate_coefficients(problem, Xi, Yi, t1).broadcast(Xi.shape)
    evaluate = make_evaluator(problem, grid, config, next, t1)
    Lk = lisl_operator(evaluate, (Xi, Yi), c, config, t1)
    u1 = next.values[1:-1, 1:-1]
    out = np.empty(grid.shape)
    out[1:-1, 1:-1] = u1 + grid.dt * (Lk - c.r * u1)
    mask = np.ones(grid.shape, dtype=bool)
    mask[1:-1, 1:-1] = False
    out[mask] = problem.boundary_values(X[mask], Y[mask], grid.t(n))
    return SolutionField(out, n)


def lisl_grid(domain, M: int, T: float = 1.0, dt_ratio: float = 0.25) -> Grid:
    """Grid with ``h = 1/M`` and ``dt = dt_ratio * h`` (so ``N = M / dt_ratio``)."""
    from .core import make_grid

    N = int(round(M / dt_ratio * T / max(domain.Lx, domain.Ly)))
    return make_grid(domain, M, M, N, T)
