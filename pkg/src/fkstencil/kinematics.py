"""Four-branch trajectories, exit times against the rectangle, branch weights.

Branch ``k`` started at a node moves as

    position(s) = origin + drift * s + spread_k * sqrt(s),   0 <= s <= dt

with spreads (in order) ``(+a s1, +a s2)``, ``(-b s1, +b s2)``,
``(-a s1, -a s2)``, ``(+b s1, -b s2)`` where ``a = sin(th) + cos(th)``,
``b = sin(th) - cos(th)`` and ``th = arcsin(rho) / 2``.

All array routines take a leading branch axis of length 4 where relevant and
broadcast over any trailing node axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DOMAIN_TOL, CoefficientSample, Domain

# sign patterns of the spread vectors, per branch: (coef on alpha/beta, x sign, y sign)
_USES_ALPHA = np.array([True, False, True, False])
_SX = np.array([1.0, -1.0, -1.0, 1.0])
_SY = np.array([1.0, 1.0, -1.0, -1.0])

RESIDUAL_TOL = 1e-10
BISECTION_ITERS = 60
TIE_TOL = 1e-14


@dataclass(frozen=True)
class RotationQuantities:
    theta: float
    alpha: float
    beta: float


def rotation_quantities(rho):
    """Rotation angle and the alpha/beta combinations for correlation ``rho``.

    Accepts scalars or arrays; scalars give a ``RotationQuantities``, arrays
    a tuple ``(theta, alpha, beta)`` of arrays.
    """
    arr = np.asarray(rho, dtype=float)
    if np.any(np.abs(arr) > 1.0 + 1e-14):
        raise ValueError("|rho| must not exceed 1")
    theta = 0.5 * np.arcsin(np.clip(arr, -1.0, 1.0))
    alpha = np.sin(theta) + np.cos(theta)
    beta = np.sin(theta) - np.cos(theta)
    if arr.ndim == 0:
        return RotationQuantities(float(theta), float(alpha), float(beta))
    return theta, alpha, beta


def branch_spreads(coeffs: CoefficientSample):
    """Spread coefficients ``(cx, cy)`` of the four branches, shape ``(4, ...)``."""
    _, alpha, beta = _angles(coeffs.rho)
    s1 = np.asarray(coeffs.sigma1, dtype=float)
    s2 = np.asarray(coeffs.sigma2, dtype=float)
    alpha, beta, s1, s2 = np.broadcast_arrays(alpha, beta, s1, s2)
    ab = np.where(_USES_ALPHA.reshape((4,) + (1,) * alpha.ndim), alpha, beta)
    sx = _SX.reshape((4,) + (1,) * alpha.ndim)
    sy = _SY.reshape((4,) + (1,) * alpha.ndim)
    return sx * ab * s1, sy * ab * s2


def _angles(rho):
    rq = rotation_quantities(np.asarray(rho, dtype=float))
    if isinstance(rq, RotationQuantities):
        return np.float64(rq.theta), np.float64(rq.alpha), np.float64(rq.beta)
    return rq


@dataclass(frozen=True)
class BranchTrajectory:
    origin: tuple
    drift: tuple
    spread: tuple
    branch_index: int

    def position(self, s):
        u = np.sqrt(s)
        return (
            self.origin[0] + self.drift[0] * s + self.spread[0] * u,
            self.origin[1] + self.drift[1] * s + self.spread[1] * u,
        )


def branch_trajectories(node, coeffs: CoefficientSample) -> list:
    """The four branch trajectories from ``node`` for a scalar coefficient sample."""
    coeffs.validate()
    cx, cy = branch_spreads(coeffs)
    drift = (float(coeffs.b1), float(coeffs.b2))
    origin = (float(node[0]), float(node[1]))
    return [
        BranchTrajectory(origin, drift, (float(cx[k]), float(cy[k])), k + 1) for k in range(4)
    ]


# -- exit times -----------------------------------------------------------------


def _first_root(a, c, d, umax):
    """Smallest root in ``(0, umax]`` of ``a u^2 + c u + d``; ``inf`` if none.

    Uses the cancellation-free quadratic formula; roots whose residual is not
    small are recomputed by bisection on a sign change.
    """
    a, c, d, umax = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, c, d, umax)))
    best = np.full(a.shape, np.inf)
    hi = umax * (1.0 + 1e-13)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        lin = a == 0.0
        r_lin = np.where(lin & (c != 0.0), -d / c, np.inf)
        disc = c * c - 4.0 * a * d
        sq = np.sqrt(np.maximum(disc, 0.0))
        q = -0.5 * (c + np.copysign(sq, c))
        ok = (~lin) & (disc >= 0.0)
        r1 = np.where(ok, q / a, np.inf)
        r2 = np.where(ok & (q != 0.0), d / q, np.inf)
    for r in (r_lin, r1, r2):
        good = (r > 0.0) & (r <= hi)
        best = np.where(good & (r < best), r, best)
    best = np.where(np.isfinite(best), np.minimum(best, umax), best)

    # residual check relative to the size of the terms involved
    scale = np.abs(a) * umax * umax + np.abs(c) * umax + np.abs(d) + 1e-300
    fin = np.isfinite(best)
    bf = np.where(fin, best, 0.0)
    resid = np.abs(a * bf * bf + c * bf + d) / scale
    bad = fin & (resid > RESIDUAL_TOL)
    if np.any(bad):
        best = best.copy()
        idx = np.nonzero(bad)
        best[idx] = _bisect(a[idx], c[idx], d[idx], bf[idx])
    return best


def _bisect(a, c, d, upper):
    """Bisection for the root of ``a u^2 + c u + d`` on ``[0, upper]``."""
    lo = np.zeros_like(upper)
    hi = upper.copy()
    g0 = np.sign(d)
    for _ in range(BISECTION_ITERS):
        mid = 0.5 * (lo + hi)
        gm = a * mid * mid + c * mid + d
        same = np.sign(gm) == g0
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return hi


def exit_times(ox, oy, bx, by, cx, cy, domain: Domain, dt: float):
    """Vectorized first-exit computation.

    Parameters
    ----------
    ox, oy : array
        Origins (strictly inside ``domain``).
    bx, by : array
        Drift components.
    cx, cy : array
        Spread coefficients (multiplying ``sqrt(s)``).
    domain : Domain
    dt : float

    Returns
    -------
    tauhat, ex, ey, exited : arrays
        Elapsed stopping time in ``(0, dt]``, endpoint (snapped onto the
        crossed boundary for exits) and the exit flag.
    """
    ox, oy, bx, by, cx, cy = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (ox, oy, bx, by, cx, cy))
    )
    umax = math.sqrt(dt)
    ux0 = _first_root(bx, cx, ox - domain.x0, umax)
    ux1 = _first_root(bx, cx, ox - domain.xM1, umax)
    uy0 = _first_root(by, cy, oy - domain.y0, umax)
    uy1 = _first_root(by, cy, oy - domain.yM2, umax)
    ux = np.minimum(ux0, ux1)
    xwall = np.where(ux0 <= ux1, domain.x0, domain.xM1)
    uy = np.minimum(uy0, uy1)
    ywall = np.where(uy0 <= uy1, domain.y0, domain.yM2)

    # ties (corner exits) go to the x crossing
    x_first = np.isfinite(ux) & (ux <= uy + TIE_TOL)
    y_first = np.isfinite(uy) & ~x_first
    exited = x_first | y_first
    u = np.where(x_first, ux, np.where(y_first, uy, umax))
    s = np.where(exited & (u < umax), u * u, dt)
    ex = ox + bx * s + cx * u
    ey = oy + by * s + cy * u
    ex = np.where(x_first, xwall, np.clip(ex, domain.x0, domain.xM1))
    ey = np.where(y_first, ywall, np.clip(ey, domain.y0, domain.yM2))
    return s, ex, ey, exited


def exit_time(traj: BranchTrajectory, domain: Domain, dt: float):
    """First time in ``(0, dt]`` the trajectory touches the boundary.

    Returns ``(tauhat, (x, y), exited)``; ``tauhat == dt`` and ``exited`` is
    false when the branch stays inside for the whole step.
    """
    ox, oy = traj.origin
    inside = (
        domain.x0 - DOMAIN_TOL <= ox <= domain.xM1 + DOMAIN_TOL
        and domain.y0 - DOMAIN_TOL <= oy <= domain.yM2 + DOMAIN_TOL
    )
    if not inside:
        raise ValueError(f"origin {traj.origin} lies outside the domain closure")
    if not dt > 0:
        raise ValueError("dt must be positive")
    s, ex, ey, exited = exit_times(ox, oy, *traj.drift, *traj.spread, domain, dt)
    return float(s), (float(ex), float(ey)), bool(exited)


def exit_time_bisection(traj: BranchTrajectory, domain: Domain, dt: float, iters: int = 60):
    """Reference exit time by bracketing each wall crossing with bisection in ``s``.

    Independent of the closed-form path: a fine scan locates the first sign
    change of each wall function, then ``iters`` bisection steps refine it.
    """
    ox, oy = traj.origin
    bx, by = traj.drift
    cx, cy = traj.spread

    def gx(s):
        return ox + bx * s + cx * np.sqrt(s)

    def gy(s):
        return oy + by * s + cy * np.sqrt(s)

    # dense scan in sqrt-space resolves crossings near s = 0
    u = np.linspace(0.0, math.sqrt(dt), 4097)
    grid = u * u
    best = dt
    found = False
    for g, wall in ((gx, domain.x0), (gx, domain.xM1), (gy, domain.y0), (gy, domain.yM2)):
        vals = g(grid) - wall
        sign0 = np.sign(vals[0])
        cross = np.nonzero((np.sign(vals[1:]) != sign0) | (vals[1:] == 0.0))[0]
        if cross.size == 0:
            continue
        k = cross[0]
        lo, hi = grid[k], grid[k + 1]
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if np.sign(g(mid) - wall) == sign0 and g(mid) != wall:
                lo = mid
            else:
                hi = mid
        if hi < best or not found:
            best = min(best, hi) if found else hi
            found = True
    return best, found


# -- branch sets ---------------------------------------------------------------


@dataclass
class BranchSet:
    """Exit information for the four branches of one node (or many nodes).

    Array fields have a leading axis of length 4.
    """

    X: np.ndarray
    Y: np.ndarray
    tauhat: np.ndarray
    exited: np.ndarray
    rotation: object
    cx: np.ndarray
    cy: np.ndarray
    origin: tuple
    drift: tuple


def branch_set(node, coeffs: CoefficientSample, domain: Domain, dt: float) -> BranchSet:
    """Exit times and endpoints of all four branches.

    ``node`` may be a pair of floats or a pair of equally shaped arrays, with
    ``coeffs`` broadcastable to it.
    """
    x, y = (np.asarray(v, dtype=float) for v in node)
    cx, cy = branch_spreads(coeffs)
    b1 = np.asarray(coeffs.b1, dtype=float)
    b2 = np.asarray(coeffs.b2, dtype=float)
    s, ex, ey, exited = exit_times(x, y, b1, b2, cx, cy, domain, dt)
    rho = np.asarray(coeffs.rho, dtype=float)
    rot = rotation_quantities(rho)
    return BranchSet(ex, ey, s, exited, rot, cx, cy, (x, y), (b1, b2))


def positions_at(bset: BranchSet, s):
    """Branch positions at elapsed time ``s`` (broadcast against the branches)."""
    u = np.sqrt(s)
    x = bset.origin[0] + bset.drift[0] * s + bset.cx * u
    y = bset.origin[1] + bset.drift[1] * s + bset.cy * u
    return x, y


def uniform_stop(bset: BranchSet, domain: Domain):
    """Stop all four branches at the earliest stopping time.

    Returns ``(tauhat, X, Y, on_boundary)`` where ``tauhat`` is the common
    elapsed time (shape of one branch) and ``X, Y, on_boundary`` have the
    leading branch axis. Branches attaining the minimum keep their snapped
    exit points; the others are re-evaluated at ``tauhat``.
    """
    tau = np.min(bset.tauhat, axis=0)
    X, Y = positions_at(bset, tau)
    X = np.clip(X, domain.x0, domain.xM1)
    Y = np.clip(Y, domain.y0, domain.yM2)
    hit = bset.exited & (bset.tauhat == tau)
    X = np.where(hit, bset.X, X)
    Y = np.where(hit, bset.Y, Y)
    return tau, X, Y, hit


# -- weights -------------------------------------------------------------------


def branch_weights(tauhat) -> np.ndarray:
    """Stopping-time adapted branch probabilities.

    ``tauhat`` has a leading axis of length 4. Shorter-stopping branches get
    larger weight while the first moments stay matched; equal stopping times
    give ``1/4`` each.
    """
    t = np.asarray(tauhat, dtype=float)
    if t.shape[0] != 4:
        raise ValueError("need four stopping times")
    if np.any(~(t > 0)):
        raise ValueError("stopping times must be positive")
    s1, s2, s3, s4 = np.sqrt(t)
    cross = s1 * s3 + s2 * s4
    d13 = (s1 + s3) * cross
    d24 = (s2 + s4) * cross
    return np.stack([s2 * s3 * s4 / d13, s1 * s3 * s4 / d24, s1 * s2 * s4 / d13, s1 * s2 * s3 / d24])
