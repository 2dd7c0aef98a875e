import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fkstencil.core import (
    UNIT_SQUARE,
    CoefficientSample,
    ConfigurationError,
    Dirichlet,
    ProblemSpec,
    SolutionField,
    builtin_problem,
    make_grid,
)
from fkstencil.lisl import (
    LislConfig,
    cfl_check,
    cfl_value,
    extrapolate,
    lisl_directions,
    lisl_grid,
    lisl_operator,
    lisl_step,
    make_evaluator,
)
from fkstencil.schemes import solve


def _gram(coeffs):
    P, (a1, a2) = lisl_directions(coeffs)
    assert P == 2
    a1, a2 = np.array(a1, dtype=float), np.array(a2, dtype=float)
    return np.outer(a1, a1) + np.outer(a2, a2)


def test_directions_uncorrelated():
    _, (a1, a2) = lisl_directions(CoefficientSample(2.0, 3.0, 0.0))
    assert (float(a1[0]), float(a1[1])) == pytest.approx((2.0, 0.0))
    assert (float(a2[0]), float(a2[1])) == pytest.approx((0.0, 3.0))


def test_directions_fully_correlated():
    _, (a1, a2) = lisl_directions(CoefficientSample(1.0, 1.0, 1.0))
    s = 1 / math.sqrt(2)
    assert (float(a1[0]), float(a1[1])) == pytest.approx((s, s))
    assert (float(a2[0]), float(a2[1])) == pytest.approx((s, s))
    np.testing.assert_allclose(_gram(CoefficientSample(1.0, 1.0, 1.0)), [[1, 1], [1, 1]], atol=1e-15)


@given(st.floats(0, 5), st.floats(0, 5), st.floats(-1, 1))
def test_directions_reconstruct_diffusion(s1, s2, rho):
    c = CoefficientSample(s1, s2, rho)
    np.testing.assert_allclose(_gram(c), c.diffusion_tensor(), atol=1e-12 * (1 + s1 * s1 + s2 * s2))


def _exact_eval(f):
    return lambda x, y: f(np.asarray(x), np.asarray(y))


def test_operator_on_constant_and_quadratic():
    cfg = LislConfig(k=0.1)
    c = CoefficientSample(1.7, 0.0, 0.0)
    assert lisl_operator(_exact_eval(lambda x, y: 3.0 + 0 * x), (0.4, 0.5), c, cfg) == pytest.approx(0.0, abs=1e-13)
    # 1/2 sigma1^2 d2/dx2 (x^2) = sigma1^2
    val = lisl_operator(_exact_eval(lambda x, y: x * x), (0.4, 0.5), c, cfg)
    assert val == pytest.approx(1.7**2, rel=1e-12)


def test_operator_affine_gives_drift_term():
    cfg = LislConfig(k=0.07)
    c = CoefficientSample(0.8, 1.3, -0.4, 0.6, -1.1)
    val = lisl_operator(_exact_eval(lambda x, y: 2 * x - 5 * y), (0.3, 0.6), c, cfg)
    assert val == pytest.approx(0.6 * 2 + 1.1 * 5, rel=1e-12)


def test_operator_second_order_in_k():
    c = CoefficientSample(0.8, 1.3, 0.5, 0.6, -1.1)
    f = lambda x, y: np.exp(x + 2 * y)  # noqa: E731
    x, y = 0.3, 0.6
    A = c.diffusion_tensor()
    grad = np.array([1.0, 2.0]) * f(x, y)
    hess = np.array([[1.0, 2.0], [2.0, 4.0]]) * f(x, y)
    exact = 0.5 * np.sum(A * hess) + 0.6 * grad[0] - 1.1 * grad[1]
    errs = [abs(lisl_operator(_exact_eval(f), (x, y), c, LislConfig(k=k)) - exact) for k in (0.1, 0.05, 0.025, 0.0125)]
    rates = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(rates) >= 1.9


def test_cfl_examples():
    h = 1 / 20
    assert cfl_value(h / 4, 2, math.sqrt(h), 5.5) == pytest.approx((1 / 80) * 45.5)
    assert cfl_value(h / 4, 2, math.sqrt(h), 5.5) <= 1
    assert cfl_value(0.75, 2, 1.0, 0.0) == 1.5
    assert cfl_value(10.0, 2, 0.01, 100.0, theta=1.0) == 0.0


def test_cfl_check_on_builtin_grid():
    p = builtin_problem("dirichlet-exp")
    g = lisl_grid(UNIT_SQUARE, 20)
    assert g.N == 80
    ok, worst = cfl_check(p, g, LislConfig.for_grid(g))
    assert ok and worst == pytest.approx((1 / 80) * (40 + 5.5), rel=1e-12)
    ok, _ = cfl_check(p, g, LislConfig(k=0.05))
    assert not ok


def test_cfl_violation_rejected_by_solver():
    p = builtin_problem("dirichlet-exp")
    with pytest.raises(ConfigurationError):
        solve(p, lisl_grid(UNIT_SQUARE, 20), "lisl-exact", k=0.05)


def test_config_validation():
    with pytest.raises(ValueError):
        LislConfig(k=0.0)
    with pytest.raises(ValueError):
        LislConfig(k=0.1, boundary_mode="mirror")
    with pytest.raises(ConfigurationError):
        LislConfig(k=0.1, theta_scheme=0.5)
    g = make_grid(UNIT_SQUARE, 16, 16, 64, 1.0)
    assert LislConfig.for_grid(g).k == pytest.approx(0.25)


def _ones_problem():
    one = lambda x, y, t: 1.0 + 0 * np.asarray(x)  # noqa: E731
    return ProblemSpec(
        UNIT_SQUARE, 1.0, lambda x, y, t: CoefficientSample(0.6, 0.9, 0.7, 0.3, -0.2, 0.0),
        lambda x, y: one(x, y, 1.0), Dirichlet(one), exact=one, name="ones",
    )


@pytest.mark.parametrize("scheme", ["lisl-exact", "lisl-extrap"])
def test_ones_are_preserved(scheme):
    p = _ones_problem()
    g = lisl_grid(UNIT_SQUARE, 10)
    np.testing.assert_allclose(solve(p, g, scheme).field.values, 1.0, rtol=1e-13)


def test_extrapolation_reproduces_affine():
    g = make_grid(UNIT_SQUARE, 10, 10, 10, 1.0)
    X, Y = g.mesh()
    vals = 2 * X - 3 * Y + 1
    x = np.array([-0.07, 1.2, 0.5, -0.1])
    y = np.array([0.3, 0.5, 1.05, -0.2])
    np.testing.assert_allclose(extrapolate(vals, g, x, y), 2 * x - 3 * y + 1, atol=1e-13)


def test_evaluator_uses_exact_outside():
    p = builtin_problem("dirichlet-exp")
    g = make_grid(UNIT_SQUARE, 10, 10, 40, 1.0)
    X, Y = g.mesh()
    field = SolutionField(np.zeros(g.shape), 5)
    ev = make_evaluator(p, g, LislConfig(k=0.3), field, 0.5)
    assert ev(1.1, 0.5) == pytest.approx(p.exact(1.1, 0.5, 0.5))
    assert ev(0.5, 0.5) == 0.0


def test_step_is_monotone_in_exact_mode():
    # effective weights of U^{n+1} in U^n: differences of the affine step map
    p = builtin_problem("dirichlet-exp")
    g = lisl_grid(UNIT_SQUARE, 6)
    cfg = LislConfig.for_grid(g)
    n = g.N // 2
    base = lisl_step(p, g, cfg, SolutionField(np.zeros(g.shape), n + 1), n).values
    for i in range(g.M1 + 1):
        for j in range(g.M2 + 1):
            e = np.zeros(g.shape)
            e[i, j] = 1.0
            col = lisl_step(p, g, cfg, SolutionField(e, n + 1), n).values - base
            assert col.min() >= -1e-15
