"""Bilinear (space) and trilinear (space-time) interpolation on the grid.

Both operators are convex combinations of nodal values, so they preserve
positivity and do not expand the max norm. Each is available as an evaluator
and as a stencil generator returning ``StencilEntry`` records.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DomainError, Grid, ProblemSpec, SolutionField

LEVEL_N = "n"
LEVEL_NEXT = "n+1"
LEVEL_BOUNDARY = "boundary"


@dataclass(frozen=True)
class StencilEntry:
    i: int
    j: int
    level: str
    weight: float
    point: Optional[tuple] = None  # (x, y) of a boundary entry
    time: Optional[float] = None  # time at which boundary data is taken


def cell_coordinates(grid: Grid, x, y):
    """Owning cell indices and local coordinates in ``[0, 1]``.

    A point on a grid line belongs to the cell below/left of it; indices are
    clamped to ``[0, M - 1]``.
    """
    d = grid.domain
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not np.all(d.contains(x, y)):
        raise DomainError("interpolation point outside the closed domain")
    fx = (np.clip(x, d.x0, d.xM1) - d.x0) / grid.h1
    fy = (np.clip(y, d.y0, d.yM2) - d.y0) / grid.h2
    i = np.clip(np.ceil(fx).astype(np.int64) - 1, 0, grid.M1 - 1)
    j = np.clip(np.ceil(fy).astype(np.int64) - 1, 0, grid.M2 - 1)
    return i, j, fx - i, fy - j


def bilinear_weights(grid: Grid, x, y):
    """Corner indices and weights, each of shape ``(4,) + shape(x)``.

    Corner order: (i, j), (i+1, j), (i, j+1), (i+1, j+1).
    """
    i, j, px, py = cell_coordinates(grid, x, y)
    ii = np.stack([i, i + 1, i, i + 1])
    jj = np.stack([j, j, j + 1, j + 1])
    w = np.stack([(1 - px) * (1 - py), px * (1 - py), (1 - px) * py, px * py])
    return ii, jj, w


def bilinear_eval(field, grid: Grid, x, y):
    """Interpolated values of ``field`` (a ``SolutionField`` or array) at points."""
    values = field.values if isinstance(field, SolutionField) else np.asarray(field)
    ii, jj, w = bilinear_weights(grid, x, y)
    out = np.sum(w * values[ii, jj], axis=0)
    return float(out) if out.ndim == 0 else out


def bilinear_stencil(grid: Grid, point, level: str = LEVEL_NEXT) -> list:
    ii, jj, w = bilinear_weights(grid, point[0], point[1])
    return [StencilEntry(int(a), int(b), level, float(c)) for a, b, c in zip(ii, jj, w)]


def _on_boundary(grid: Grid, i: int, j: int) -> bool:
    return i == 0 or j == 0 or i == grid.M1 or j == grid.M2


def trilinear_stencil(
    grid: Grid, point, tau: float, n: int, problem: Optional[ProblemSpec] = None
) -> list:
    """Space-time stencil at ``(point, tau)`` with ``t_n < tau < t_{n+1}``.

    Level ``n`` gets time weight ``(t_{n+1} - tau)/dt``, level ``n+1`` the
    rest. If ``problem`` has Dirichlet data, corners on the boundary are
    emitted as boundary entries carrying the node coordinates and the level's
    time.
    """
    tn, tn1 = grid.t(n), grid.t(n + 1)
    if not tn < tau < tn1:
        raise ValueError(f"tau={tau} not strictly between t_n={tn} and t_n+1={tn1}")
    a = (tn1 - tau) / grid.dt
    dirichlet = problem is not None and problem.boundary_kind == "dirichlet"
    entries = []
    for level, tw, tl in ((LEVEL_N, a, tn), (LEVEL_NEXT, 1.0 - a, tn1)):
        for e in bilinear_stencil(grid, point, level):
            if dirichlet and _on_boundary(grid, e.i, e.j):
                entries.append(
                    StencilEntry(e.i, e.j, LEVEL_BOUNDARY, tw * e.weight, grid.node_coords(e.i, e.j), tl)
                )
            else:
                entries.append(StencilEntry(e.i, e.j, level, tw * e.weight))
    return entries


def trilinear_eval(field_n, field_next, grid: Grid, x, y, tau, n: int):
    """Space-time interpolation between the two levels at times ``tau``."""
    a = (grid.t(n + 1) - np.asarray(tau, dtype=float)) / grid.dt
    return a * bilinear_eval(field_n, grid, x, y) + (1.0 - a) * bilinear_eval(field_next, grid, x, y)


def evaluate_stencil(entries, field_n, field_next, problem: Optional[ProblemSpec] = None) -> float:
    """Dot product of a stencil with the level values (for checks)."""
    get = lambda f: f.values if isinstance(f, SolutionField) else np.asarray(f)  # noqa: E731
    vn, vnext = get(field_n), get(field_next)
    total = 0.0
    for e in entries:
        if e.level == LEVEL_N:
            total += e.weight * vn[e.i, e.j]
        elif e.level == LEVEL_NEXT:
            total += e.weight * vnext[e.i, e.j]
        else:
            total += e.weight * float(problem.boundary_values(e.point[0], e.point[1], e.time))
    return total

