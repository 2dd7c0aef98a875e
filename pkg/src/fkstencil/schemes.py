"""Backward time stepping for the expectation-based wide-stencil schemes.

Four step engines are provided:

``alg1``  Dirichlet, each branch stopped at its own exit time, adaptive weights.
``alg2``  Dirichlet, all branches stopped at the earliest exit time; nodes whose
          branches stop early couple implicitly through space-time
          interpolation and are solved as one M-matrix system per step.
``alg3``  Homogeneous Neumann, specular reflection of the branch endpoints.
``alg4``  Periodic, endpoints wrapped into the fundamental cell.

Every update is a nonnegative combination of previous-level values and
boundary data with total weight at most one, so all schemes preserve
positivity and are stable in the max norm without a time-step restriction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from .core import (
    ConfigurationError,
    Domain,
    Grid,
    NumericalError,
    ProblemSpec,
    SolutionField,
    evaluate_coefficients,
)
from .interp import bilinear_eval, bilinear_weights
from .kinematics import branch_set, branch_spreads, branch_weights, uniform_stop

logger = logging.getLogger(__name__)


@dataclass
class StepReport:
    level: int
    boundary_stopped: int = 0
    system_size: int = 0
    iterations: int = 0
    residual: float = 0.0


@dataclass
class SparseSystem:
    """``T F = b`` over the implicitly coupled nodes of one uniform-stopping step.

    ``nodes`` holds the ``(i, j)`` grid indices of the unknowns, row by row.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    nodes: np.ndarray

    @property
    def size(self) -> int:
        return self.rhs.shape[0]

    def m_matrix_violations(self) -> list:
        """Human-readable list of broken M-matrix conditions (empty if none)."""
        T = self.matrix.tocsr()
        diag = T.diagonal()
        off = T - sp.diags(diag)
        problems = []
        if np.any(diag <= 0):
            problems.append("nonpositive diagonal entry")
        if off.nnz and off.data.max(initial=-np.inf) > 0:
            problems.append("positive off-diagonal entry")
        offsum = np.asarray(abs(off).sum(axis=1)).ravel()
        if np.any(diag <= offsum):
            problems.append("row not strictly diagonally dominant")
        return problems

    def is_m_matrix(self) -> bool:
        return not self.m_matrix_violations()


# the contraction factor, not the system size, sets the sweep count; small
# systems still need room to reach 1e-12
MIN_SWEEPS = 100


def solve_m_matrix(system: SparseSystem, tol: float = 1e-12, max_iters: Optional[int] = None,
                   return_info: bool = False):
    """Gauss-Seidel solve of a strictly diagonally dominant M-matrix system.

    Iterates forward sweeps until the relative max-norm residual drops below
    ``tol``. Strict diagonal dominance guarantees convergence.

    Raises
    ------
    NumericalError
        If ``max_iters`` sweeps (default ``10 * size``, at least
        ``MIN_SWEEPS``) do not reach ``tol``.
    """
    T = system.matrix.tocsr()
    b = np.asarray(system.rhs, dtype=float)
    m = b.shape[0]
    if max_iters is None:
        max_iters = max(10 * m, MIN_SWEEPS)
    x = np.zeros(m)
    if m == 0:
        return (x, 0, 0.0) if return_info else x
    lower = sp.tril(T, format="csr")
    upper = sp.triu(T, k=1, format="csr")
    bnorm = np.max(np.abs(b))
    if bnorm == 0.0:
        return (x, 0, 0.0) if return_info else x
    resid = np.inf
    for it in range(1, max_iters + 1):
        x = spsolve_triangular(lower, b - upper @ x, lower=True)
        resid = np.max(np.abs(b - T @ x)) / bnorm
        if resid <= tol:
            return (x, it, resid) if return_info else x
    raise NumericalError(
        f"Gauss-Seidel did not converge in {max_iters} sweeps (relative residual {resid:.3e})"
    )


# -- geometric helpers ------------------------------------------------------------


def reflect(point, domain: Domain):
    """Mirror a point back into the domain, independently per axis.

    Works on scalars or arrays. A point still outside after one mirror means
    the displacement exceeded the domain size, which is an error.
    """
    x = np.asarray(point[0], dtype=float)
    y = np.asarray(point[1], dtype=float)
    rx = np.where(x < domain.x0, 2 * domain.x0 - x, np.where(x > domain.xM1, 2 * domain.xM1 - x, x))
    ry = np.where(y < domain.y0, 2 * domain.y0 - y, np.where(y > domain.yM2, 2 * domain.yM2 - y, y))
    if not np.all(domain.contains(rx, ry, tol=0.0)):
        raise ValueError("point overshoots the domain by more than one reflection")
    if rx.ndim == 0:
        return float(rx), float(ry)
    return rx, ry


def wrap(point, domain: Domain):
    """Positive-modulo wrap into ``[x0, x0 + Lx) x [y0, y0 + Ly)``."""
    x = np.asarray(point[0], dtype=float)
    y = np.asarray(point[1], dtype=float)
    wx = domain.x0 + np.mod(x - domain.x0, domain.Lx)
    wy = domain.y0 + np.mod(y - domain.y0, domain.Ly)
    # mod can round up to the period for tiny negative operands
    wx = np.where(wx >= domain.xM1, domain.x0, wx)
    wy = np.where(wy >= domain.yM2, domain.y0, wy)
    if wx.ndim == 0:
        return float(wx), float(wy)
    return wx, wy


def proposed_endpoints(X, Y, coeffs, dt: float):
    """Full-step branch endpoints (no stopping), shape ``(4,) + X.shape``."""
    cx, cy = branch_spreads(coeffs)
    sq = np.sqrt(dt)
    return X + coeffs.b1 * dt + cx * sq, Y + coeffs.b2 * dt + cy * sq


def _interior_mesh(grid: Grid):
    X, Y = grid.mesh()
    return X[1:-1, 1:-1], Y[1:-1, 1:-1]


def _boundary_mask(grid: Grid) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=bool)
    mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
    return mask


def _fill_dirichlet_boundary(values: np.ndarray, problem: ProblemSpec, grid: Grid, t: float):
    X, Y = grid.mesh()
    mask = _boundary_mask(grid)
    values[mask] = problem.boundary_values(X[mask], Y[mask], t)


def _require(problem: ProblemSpec, kind: str, what: str):
    if problem.boundary_kind != kind:
        raise ConfigurationError(f"{what} needs a {kind} problem, got {problem.boundary_kind}")


# -- Dirichlet: non-uniform stopping -----------------------------------------------


def step_nonuniform(problem: ProblemSpec, grid: Grid, next: SolutionField, n: int,
                    report: Optional[StepReport] = None) -> SolutionField:
    """One backward step with per-branch stopping times and adaptive weights."""
    _require(problem, "dirichlet", "step_nonuniform")
    tn, dt = grid.t(n), grid.dt
    X, Y = _interior_mesh(grid)
    c = evaluate_coefficients(problem, X, Y, tn).broadcast(X.shape)
    bset = branch_set((X, Y), c, grid.domain, dt)
    w = branch_weights(bset.tauhat)

    ex = bset.exited
    U = np.empty(bset.tauhat.shape)
    U[~ex] = bilinear_eval(next, grid, bset.X[~ex], bset.Y[~ex])
    U[ex] = problem.boundary_values(bset.X[ex], bset.Y[ex], tn + bset.tauhat[ex])

    out = np.empty(grid.shape)
    out[1:-1, 1:-1] = np.sum(w / (1.0 + c.r * bset.tauhat) * U, axis=0)
    _fill_dirichlet_boundary(out, problem, grid, tn)
    if report is not None:
        report.boundary_stopped = int(ex.sum())
    return SolutionField(out, n)


# -- Dirichlet: uniform stopping ---------------------------------------------------


def assemble_uniform(problem: ProblemSpec, grid: Grid, next: SolutionField, n: int):
    """Explicit part and implicit system of one uniform-stopping step.

    Returns ``(values, system, boundary_stopped)`` where ``values`` holds the
    level-``n`` field with boundary nodes and explicitly updated nodes filled
    in, and ``system`` couples the remaining interior nodes.
    """
    _require(problem, "dirichlet", "step_uniform")
    tn, dt = grid.t(n), grid.dt
    X, Y = _interior_mesh(grid)
    c = evaluate_coefficients(problem, X, Y, tn).broadcast(X.shape)
    bset = branch_set((X, Y), c, grid.domain, dt)
    tau = np.min(bset.tauhat, axis=0)
    implicit = tau < dt

    values = np.zeros(grid.shape)
    _fill_dirichlet_boundary(values, problem, grid, tn)
    inner = values[1:-1, 1:-1]

    # nodes all of whose branches reach t_{n+1}
    e = ~implicit
    ex = bset.exited[:, e]
    U = np.empty(ex.shape)
    U[~ex] = bilinear_eval(next, grid, bset.X[:, e][~ex], bset.Y[:, e][~ex])
    U[ex] = problem.boundary_values(bset.X[:, e][ex], bset.Y[:, e][ex], tn + dt)
    inner[e] = U.sum(axis=0) / (4.0 * (1.0 + c.r[e] * dt))

    # implicitly coupled nodes
    ii_nodes, jj_nodes = np.nonzero(implicit)
    ii_nodes, jj_nodes = ii_nodes + 1, jj_nodes + 1
    m = ii_nodes.size
    rowof = np.full(grid.shape, -1, dtype=np.int64)
    rowof[ii_nodes, jj_nodes] = np.arange(m)

    sub = _subset(bset, implicit)
    tau_i, Xk, Yk, hit = uniform_stop(sub, grid.domain)
    r_i = c.r[implicit]
    disc = 1.0 / (4.0 * (1.0 + r_i * tau_i))
    a = (dt - tau_i) / dt

    rhs = np.zeros(m)
    if np.any(hit):
        fb = np.zeros(hit.shape)
        fb[hit] = problem.boundary_values(Xk[hit], Yk[hit], (tn + np.broadcast_to(tau_i, hit.shape))[hit])
        rhs += np.sum(fb, axis=0) * disc

    ci, cj, cw = bilinear_weights(grid, Xk, Yk)  # (4 corners, 4 branches, m)
    coef = cw * (~hit)[None] * disc
    rhs += np.sum((1.0 - a) * coef * next.values[ci, cj], axis=(0, 1))
    coef_n = a * coef
    cols = rowof[ci, cj]
    known = cols < 0
    rhs += np.sum(np.where(known, coef_n * values[ci, cj], 0.0), axis=(0, 1))

    rows = np.broadcast_to(np.arange(m), cols.shape)
    sel = (~known) & (coef_n != 0.0)
    coupling = sp.coo_matrix((coef_n[sel], (rows[sel], cols[sel])), shape=(m, m))
    T = (sp.identity(m, format="csr") - coupling.tocsr()).tocsr()
    T.sum_duplicates()
    system = SparseSystem(T, rhs, np.column_stack([ii_nodes, jj_nodes]))
    return values, system, int(bset.exited.sum())


def _subset(bset, mask):
    from .kinematics import BranchSet

    pick = lambda v: np.asarray(v)[..., mask] if np.ndim(v) else v  # noqa: E731
    return BranchSet(
        X=bset.X[:, mask],
        Y=bset.Y[:, mask],
        tauhat=bset.tauhat[:, mask],
        exited=bset.exited[:, mask],
        rotation=None,
        cx=bset.cx[:, mask],
        cy=bset.cy[:, mask],
        origin=(bset.origin[0][mask], bset.origin[1][mask]),
        drift=(pick(bset.drift[0]), pick(bset.drift[1])),
    )


def step_uniform(problem: ProblemSpec, grid: Grid, next: SolutionField, n: int,
                 report: Optional[StepReport] = None, tol: float = 1e-12) -> SolutionField:
    """One backward step with all four branches stopped at their earliest exit."""
    values, system, stopped = assemble_uniform(problem, grid, next, n)
    violations = system.m_matrix_violations()
    if violations:
        raise NumericalError(f"level {n}: assembled system is not an M-matrix ({', '.join(violations)})")
    F, iters, resid = solve_m_matrix(system, tol=tol, return_info=True)
    values[system.nodes[:, 0], system.nodes[:, 1]] = F
    if report is not None:
        report.boundary_stopped = stopped
        report.system_size = system.size
        report.iterations = iters
        report.residual = resid
    return SolutionField(values, n)


# -- Neumann: reflection -----------------------------------------------------------


def neumann_copy(values: np.ndarray) -> np.ndarray:
    """Copy the first interior row/column onto the boundary (x-edges first)."""
    values[0, :] = values[1, :]
    values[-1, :] = values[-2, :]
    values[:, 0] = values[:, 1]
    values[:, -1] = values[:, -2]
    return values


def step_reflective(problem: ProblemSpec, grid: Grid, next: SolutionField, n: int,
                    report: Optional[StepReport] = None) -> SolutionField:
    """One backward step with specular reflection at the walls."""
    _require(problem, "neumann", "step_reflective")
    tn, dt = grid.t(n), grid.dt
    X, Y = _interior_mesh(grid)
    c = evaluate_coefficients(problem, X, Y, tn).broadcast(X.shape)
    px, py = proposed_endpoints(X, Y, c, dt)
    if report is not None:
        d = grid.domain
        report.boundary_stopped = int(np.sum((px < d.x0) | (px > d.xM1) | (py < d.y0) | (py > d.yM2)))
    qx, qy = reflect((px, py), grid.domain)
    U = bilinear_eval(next, grid, qx, qy)
    out = np.empty(grid.shape)
    out[1:-1, 1:-1] = U.sum(axis=0) / (4.0 * (1.0 + c.r * dt))
    return SolutionField(neumann_copy(out), n)


# -- periodic: wrapping -------------------------------------------------------------


def step_periodic(problem: ProblemSpec, grid: Grid, next: SolutionField, n: int,
                  report: Optional[StepReport] = None) -> SolutionField:
    """One backward step on the torus; every node, seam included, is updated."""
    _require(problem, "periodic", "step_periodic")
    tn, dt = grid.t(n), grid.dt
    X, Y = grid.mesh()
    c = evaluate_coefficients(problem, X, Y, tn).broadcast(X.shape)
    px, py = proposed_endpoints(X, Y, c, dt)
    qx, qy = wrap((px, py), grid.domain)
    U = bilinear_eval(next, grid, qx, qy)
    return SolutionField(U.sum(axis=0) / (4.0 * (1.0 + c.r * dt)), n)


# -- driver --------------------------------------------------------------------------


STEPPERS = {
    "alg1": (step_nonuniform, "dirichlet"),
    "alg2": (step_uniform, "dirichlet"),
    "alg3": (step_reflective, "neumann"),
    "alg4": (step_periodic, "periodic"),
}

SCHEME_BOUNDARY = {
    **{k: v[1] for k, v in STEPPERS.items()},
    "lisl-exact": "dirichlet",
    "lisl-extrap": "dirichlet",
}


@dataclass
class SolveResult:
    field: SolutionField
    reports: list = field(default_factory=list)
    levels: Optional[list] = None


def check_compatible(problem: ProblemSpec, scheme: str):
    if scheme not in SCHEME_BOUNDARY:
        raise ConfigurationError(
            f"unknown scheme {scheme!r}; valid: {', '.join(SCHEME_BOUNDARY)}"
        )
    need = SCHEME_BOUNDARY[scheme]
    if problem.boundary_kind != need:
        raise ConfigurationError(
            f"scheme {scheme} requires {need} boundary conditions, "
            f"problem {problem.name!r} is {problem.boundary_kind}"
        )


def terminal_field(problem: ProblemSpec, grid: Grid) -> SolutionField:
    X, Y = grid.mesh()
    vals = np.broadcast_to(np.asarray(problem.terminal(X, Y), dtype=float), grid.shape).copy()
    return SolutionField(vals, grid.N)


def solve(problem: ProblemSpec, grid: Grid, scheme: str, *, history: bool = False,
          step: Optional[Callable] = None, **options) -> SolveResult:
    """March from ``t = T`` back to ``t = 0`` with the named scheme.

    Parameters
    ----------
    scheme : {'alg1', 'alg2', 'alg3', 'alg4', 'lisl-exact', 'lisl-extrap'}
    history : bool
        Keep every time level in ``SolveResult.levels`` (index = level).
    options
        Passed to the LISL stepper (``k``, ``boundary_mode``).
    """
    check_compatible(problem, scheme)
    if scheme.startswith("lisl"):
        from .lisl import LislConfig, lisl_step, cfl_check

        config = LislConfig.for_grid(grid, mode="exact" if scheme == "lisl-exact" else "extrap", **options)
        ok, margin = cfl_check(problem, grid, config)
        if not ok:
            raise ConfigurationError(f"LISL CFL condition violated (worst value {margin:.4f} > 1)")

        def step(problem, grid, nxt, n, report=None):
            return lisl_step(problem, grid, config, nxt, n)

    elif step is None:
        step = STEPPERS[scheme][0]

    current = terminal_field(problem, grid).check(grid)
    levels = [None] * (grid.N + 1) if history else None
    if history:
        levels[grid.N] = current
    reports = []
    for n in range(grid.N - 1, -1, -1):
        rep = StepReport(level=n)
        try:
            current = step(problem, grid, current, n, report=rep)
        except NumericalError as exc:
            raise NumericalError(f"{scheme}, level {n}: {exc}") from exc
        current.check(grid)
        reports.append(rep)
        if history:
            levels[n] = current
    return SolveResult(current, reports, levels)
