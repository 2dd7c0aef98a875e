"""Problem definitions, coefficient evaluation and the uniform space-time grid.

The backward problem solved throughout the package is

    f_t + 1/2 Tr(A A^T D^2 f) + b . grad f - r f = 0   on Omega x [0, T)
    f(., ., T) = phi

with one of three boundary treatments (Dirichlet data, homogeneous Neumann,
doubly periodic) on a rectangle Omega.

Coefficient, terminal, boundary and exact-solution callables are expected to
be vectorized: they receive numpy arrays (or floats) for ``x``, ``y``, ``t``
and return arrays of the broadcast shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

ArrayLike = Union[float, np.ndarray]


class FkStencilError(Exception):
    """Base class for errors raised by this package."""


class DomainError(FkStencilError, ValueError):
    """A query point lies outside the closed computational domain."""


class CoefficientError(FkStencilError, ValueError):
    """A coefficient sample violates its admissible range."""


class ConfigurationError(FkStencilError, ValueError):
    """Incompatible problem/scheme/parameter combination."""


class NumericalError(FkStencilError, RuntimeError):
    """An iterative procedure failed to converge."""


# absolute slack for "inside the closed domain" tests
DOMAIN_TOL = 1e-12


@dataclass(frozen=True)
class Domain:
    x0: float
    xM1: float
    y0: float
    yM2: float

    def __post_init__(self):
        if not self.x0 < self.xM1:
            raise ValueError(f"need x0 < xM1, got {self.x0} >= {self.xM1}")
        if not self.y0 < self.yM2:
            raise ValueError(f"need y0 < yM2, got {self.y0} >= {self.yM2}")

    @property
    def Lx(self) -> float:
        return self.xM1 - self.x0

    @property
    def Ly(self) -> float:
        return self.yM2 - self.y0

    def contains(self, x, y, tol: float = DOMAIN_TOL):
        """Membership in the closure of the rectangle, up to ``tol``."""
        return (
            (x >= self.x0 - tol)
            & (x <= self.xM1 + tol)
            & (y >= self.y0 - tol)
            & (y <= self.yM2 + tol)
        )


UNIT_SQUARE = Domain(0.0, 1.0, 0.0, 1.0)


@dataclass
class CoefficientSample:
    """Coefficients at one point or at an array of points.

    ``sigma1``/``sigma2`` are the diffusion scales (the square roots of the
    diagonal of A A^T), ``rho`` the correlation, ``b1``/``b2`` the drift and
    ``r`` the discount rate. Fields may be floats or broadcastable arrays.
    """

    sigma1: ArrayLike
    sigma2: ArrayLike
    rho: ArrayLike
    b1: ArrayLike = 0.0
    b2: ArrayLike = 0.0
    r: ArrayLike = 0.0

    def validate(self, strict: bool = False) -> "CoefficientSample":
        """Check admissibility and return ``self``.

        With ``strict=True`` the diffusion scales must be positive; the
        default admits degenerate (zero) diffusion, which the built-in
        Dirichlet and Neumann problems need on parts of the domain.
        """
        checks = [
            ("sigma1", self.sigma1, (lambda v: v > 0) if strict else (lambda v: v >= 0)),
            ("sigma2", self.sigma2, (lambda v: v > 0) if strict else (lambda v: v >= 0)),
            ("rho", self.rho, lambda v: np.abs(v) <= 1.0 + 1e-14),
            ("r", self.r, lambda v: v >= 0),
        ]
        for name, value, ok in checks:
            arr = np.asarray(value, dtype=float)
            if not np.all(np.isfinite(arr)):
                raise CoefficientError(f"{name} is not finite")
            if not np.all(ok(arr)):
                bad = arr[~ok(arr)] if arr.ndim else arr
                raise CoefficientError(
                    f"{name} out of range (offending value {np.ravel(bad)[0]!r})"
                )
        for name in ("b1", "b2"):
            if not np.all(np.isfinite(np.asarray(getattr(self, name), dtype=float))):
                raise CoefficientError(f"{name} is not finite")
        return self

    def broadcast(self, shape) -> "CoefficientSample":
        """Return a copy whose fields are float arrays of ``shape``."""
        return CoefficientSample(
            *(
                np.broadcast_to(np.asarray(getattr(self, k), dtype=float), shape).copy()
                for k in ("sigma1", "sigma2", "rho", "b1", "b2", "r")
            )
        )

    def diffusion_tensor(self) -> np.ndarray:
        """A A^T as an array of shape (..., 2, 2)."""
        s1 = np.asarray(self.sigma1, dtype=float)
        s2 = np.asarray(self.sigma2, dtype=float)
        rho = np.asarray(self.rho, dtype=float)
        s1, s2, rho = np.broadcast_arrays(s1, s2, rho)
        out = np.empty(s1.shape + (2, 2))
        out[..., 0, 0] = s1 * s1
        out[..., 1, 1] = s2 * s2
        out[..., 0, 1] = out[..., 1, 0] = rho * s1 * s2
        return out


# -- boundary specifications -------------------------------------------------


@dataclass(frozen=True)
class Dirichlet:
    """Prescribed values ``data(x, y, t)`` on the boundary."""

    data: Callable[..., ArrayLike]
    kind: str = field(default="dirichlet", init=False)


@dataclass(frozen=True)
class NeumannHomogeneous:
    kind: str = field(default="neumann", init=False)


@dataclass(frozen=True)
class Periodic:
    kind: str = field(default="periodic", init=False)


Boundary = Union[Dirichlet, NeumannHomogeneous, Periodic]


@dataclass(frozen=True)
class ProblemSpec:
    """A backward parabolic problem on a rectangle.

    Parameters
    ----------
    domain : Domain
    T : float
        Terminal time.
    coefficients : callable
        ``coefficients(x, y, t) -> CoefficientSample`` (vectorized).
    terminal : callable
        ``terminal(x, y) -> values``, the data at ``t = T``.
    boundary : Dirichlet | NeumannHomogeneous | Periodic
    exact : callable, optional
        ``exact(x, y, t)``; needed for error reports.
    name : str
    """

    domain: Domain
    T: float
    coefficients: Callable[..., CoefficientSample]
    terminal: Callable[..., ArrayLike]
    boundary: Boundary
    exact: Optional[Callable[..., ArrayLike]] = None
    name: str = "custom"

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be positive")

    @property
    def boundary_kind(self) -> str:
        return self.boundary.kind

    def boundary_values(self, x, y, t) -> np.ndarray:
        if not isinstance(self.boundary, Dirichlet):
            raise ConfigurationError(f"problem {self.name!r} has no Dirichlet data")
        return np.asarray(self.boundary.data(x, y, t), dtype=float)

    def check_periodicity(self, samples: int = 200, seed: int = 0, tol: float = 1e-12) -> bool:
        """Sample-based check that coefficients and terminal data are periodic."""
        rng = np.random.default_rng(seed)
        d = self.domain
        x = rng.uniform(d.x0, d.xM1, samples)
        y = rng.uniform(d.y0, d.yM2, samples)
        t = rng.uniform(0.0, self.T, samples)
        base = self.coefficients(x, y, t).broadcast(x.shape)
        for sx, sy in ((d.Lx, 0.0), (0.0, d.Ly), (-d.Lx, d.Ly)):
            shifted = self.coefficients(x + sx, y + sy, t).broadcast(x.shape)
            for k in ("sigma1", "sigma2", "rho", "b1", "b2", "r"):
                if not np.allclose(getattr(base, k), getattr(shifted, k), rtol=0, atol=tol):
                    return False
            if not np.allclose(self.terminal(x, y), self.terminal(x + sx, y + sy), rtol=0, atol=tol):
                return False
        return True


def evaluate_coefficients(problem: ProblemSpec, x, y, t, strict: bool = False) -> CoefficientSample:
    """Evaluate and validate the coefficient fields at ``(x, y, t)``.

    Raises
    ------
    DomainError
        If a point is outside the closed domain or ``t`` outside ``[0, T]``.
    CoefficientError
        If a sample violates its range (see ``CoefficientSample.validate``).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    if not np.all(problem.domain.contains(x, y)):
        raise DomainError("coefficient query outside the closed domain")
    if np.any(t < -DOMAIN_TOL) or np.any(t > problem.T + DOMAIN_TOL):
        raise DomainError(f"time outside [0, {problem.T}]")
    sample = problem.coefficients(x, y, t)
    return sample.validate(strict=strict)


# -- grid ---------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    domain: Domain
    M1: int
    M2: int
    N: int
    T: float

    @property
    def h1(self) -> float:
        return (self.domain.xM1 - self.domain.x0) / self.M1

    @property
    def h2(self) -> float:
        return (self.domain.yM2 - self.domain.y0) / self.M2

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def x(self) -> np.ndarray:
        return self.domain.x0 + np.arange(self.M1 + 1) * self.h1

    @property
    def y(self) -> np.ndarray:
        return self.domain.y0 + np.arange(self.M2 + 1) * self.h2

    @property
    def shape(self) -> tuple:
        return (self.M1 + 1, self.M2 + 1)

    def t(self, n) -> float:
        return n * self.dt

    def node_coords(self, i, j):
        return (self.domain.x0 + i * self.h1, self.domain.y0 + j * self.h2)

    def mesh(self):
        """Node coordinate arrays of shape ``(M1+1, M2+1)`` (``ij`` indexing)."""
        return np.meshgrid(self.x, self.y, indexing="ij")


def make_grid(domain: Domain, M1: int, M2: int, N: int, T: float) -> Grid:
    for name, v in (("M1", M1), ("M2", M2), ("N", N)):
        if int(v) != v or v < 2:
            raise ValueError(f"{name} must be an integer >= 2, got {v!r}")
    if not T > 0:
        raise ValueError("T must be positive")
    return Grid(domain, int(M1), int(M2), int(N), float(T))


@dataclass
class SolutionField:
    """Nodal values ``values[i, j]`` at time level ``time_level``."""

    values: np.ndarray
    time_level: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("SolutionField values must be two-dimensional")

    def check(self, grid: Grid) -> "SolutionField":
        if self.values.shape != grid.shape:
            raise ValueError(f"field shape {self.values.shape} != grid shape {grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise NumericalError(f"non-finite values at level {self.time_level}")
        return self


# -- built-in manufactured problems ------------------------------------------


def _dirichlet_exp() -> ProblemSpec:
    def coefficients(x, y, t):
        p = x * y * t
        s1sq = p * p
        s2sq = (p + 1.0) ** 2
        r = 1.0 + 0.5 * s1sq + 0.5 * s2sq + p * (p + 1.0)
        return CoefficientSample(np.sqrt(s1sq), np.sqrt(s2sq), np.ones_like(p), 0.0, 0.0, r)

    def exact(x, y, t):
        return np.exp(t + x + y)

    return ProblemSpec(
        domain=UNIT_SQUARE,
        T=1.0,
        coefficients=coefficients,
        terminal=lambda x, y: np.exp(1.0 + x + y),
        boundary=Dirichlet(exact),
        exact=exact,
        name="dirichlet-exp",
    )


def _neumann_trig() -> ProblemSpec:
    pi = math.pi

    def coefficients(x, y, t):
        # sin(pi x - pi/2) = -cos(pi x) and cos(pi x - pi/2) = sin(pi x)
        sx, sy = -np.cos(pi * x), -np.cos(pi * y)
        cx, cy = np.sin(pi * x), np.sin(pi * y)
        s1sq = x * x / (4 * pi**2)
        s4 = np.square(np.square(sx * sy))
        s2sq = s4 / (4 * pi**2)
        r = 1.0 - x * x / 8 - s4 / 8 + 0.25 * x * sx * sy * cx * cy
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(np.shape(x), np.shape(y), t.shape)
        return CoefficientSample(
            np.broadcast_to(np.sqrt(s1sq), shape),
            np.broadcast_to(np.sqrt(s2sq), shape),
            np.ones(shape),
            0.0,
            0.0,
            np.broadcast_to(r, shape),
        )

    def exact(x, y, t):
        return np.exp(t) * np.sin(pi * x - pi / 2) * np.sin(pi * y - pi / 2)

    return ProblemSpec(
        domain=UNIT_SQUARE,
        T=1.0,
        coefficients=coefficients,
        terminal=lambda x, y: exact(x, y, 1.0),
        boundary=NeumannHomogeneous(),
        exact=exact,
        name="neumann-trig",
    )


def _periodic_trig() -> ProblemSpec:
    pi = math.pi

    def coefficients(x, y, t):
        sx, sy = np.sin(2 * pi * x), np.sin(2 * pi * y)
        cx, cy = np.cos(2 * pi * x), np.cos(2 * pi * y)
        b1 = sx * cy / (2 * pi)
        b2 = -sy * cx / (2 * pi)
        cc = cx * cy
        c4 = np.square(np.square(cc))
        s4 = np.square(np.square(sx * sy))
        s1sq = c4 / (16 * pi**2)
        s2sq = s4 / (16 * pi**2)
        r = 1.0 - c4 / 8 - s4 / 8 + 0.25 * sx * sy * cc * cc * cc
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(np.shape(x), np.shape(y), t.shape)
        bc = lambda v: np.broadcast_to(v, shape)  # noqa: E731
        return CoefficientSample(
            bc(np.sqrt(s1sq)), bc(np.sqrt(s2sq)), np.ones(shape), bc(b1), bc(b2), bc(r)
        )

    def exact(x, y, t):
        return np.exp(t) * np.sin(2 * pi * x) * np.sin(2 * pi * y)

    return ProblemSpec(
        domain=UNIT_SQUARE,
        T=1.0,
        coefficients=coefficients,
        terminal=lambda x, y: exact(x, y, 1.0),
        boundary=Periodic(),
        exact=exact,
        name="periodic-trig",
    )


BUILTIN_PROBLEMS = {
    "dirichlet-exp": _dirichlet_exp,
    "neumann-trig": _neumann_trig,
    "periodic-trig": _periodic_trig,
}


def builtin_problem(name: str) -> ProblemSpec:
    """Return one of the built-in manufactured test problems by name."""
    try:
        factory = BUILTIN_PROBLEMS[name]
    except KeyError:
        valid = ", ".join(sorted(BUILTIN_PROBLEMS))
        raise KeyError(f"unknown problem {name!r}; valid names: {valid}") from None
    return factory()
