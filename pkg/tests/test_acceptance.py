"""One test per acceptance criterion, each printing a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from _problems import SCHEME_KIND, random_problem
from conftest import ACCEPTANCE_LINES
from fkstencil.analysis import ErrorReport, convergence_rates, error_norms, mc_oracle
from fkstencil.core import UNIT_SQUARE, CoefficientSample, NumericalError, builtin_problem, make_grid
from fkstencil.kinematics import branch_trajectories, branch_weights, exit_time, exit_time_bisection
from fkstencil.schemes import solve

LEVELS = (20, 40, 80, 160)


def report(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


class Study:
    def __init__(self, problem, scheme, dt_ratio=1.0):
        self.problem = builtin_problem(problem)
        self.scheme = scheme
        self.rows, self.fields, self.grids = [], {}, {}
        self.failure = None
        start = time.perf_counter()
        for M in LEVELS:
            g = make_grid(UNIT_SQUARE, M, M, int(round(M / dt_ratio)), 1.0)
            try:
                field = solve(self.problem, g, scheme).field
            except NumericalError as exc:
                self.failure = f"M={M}: {exc}"
                break
            linf, l2 = error_norms(field, self.problem, g)
            self.rows.append(ErrorReport(M, M, g.N, linf, l2, h=g.h1))
            self.fields[M], self.grids[M] = field, g
        self.seconds = time.perf_counter() - start
        if len(self.rows) >= 2:
            self.rows = convergence_rates(self.rows)

    @property
    def linf(self):
        return [r.err_linf for r in self.rows]

    @property
    def rates(self):
        return [r.rate_linf for r in self.rows[1:]]


_CACHE = {}


def study(problem, scheme, dt_ratio=1.0):
    key = (problem, scheme, dt_ratio)
    if key not in _CACHE:
        _CACHE[key] = Study(problem, scheme, dt_ratio)
    return _CACHE[key]


def within_rel(values, targets, rel):
    return len(values) == len(targets) and all(abs(v - t) <= rel * t for v, t in zip(values, targets))


def within_abs(values, targets, tol):
    return len(values) == len(targets) and all(
        v is not None and abs(v - t) <= tol for v, t in zip(values, targets)
    )


def fmt(xs):
    return "[" + ", ".join("none" if x is None else f"{x:.4e}" for x in xs) + "]"


def test_criterion_01_algorithm1_table():
    s = study("dirichlet-exp", "alg1")
    target = (1.1733e-1, 6.0217e-2, 3.0549e-2, 1.5381e-2)
    target_rates = (0.9623, 0.9791, 0.9900)
    ok_err = within_rel(s.linf, target, 0.05)
    ok_rate = within_abs(s.rates, target_rates, 0.05)
    ok_time = s.seconds < 30.0
    report(1, ok_err and ok_rate and ok_time,
           f"alg1 errors {fmt(s.linf)} rates {fmt(s.rates)} in {s.seconds:.1f}s")
    assert ok_err, f"errors {s.linf} vs {target}"
    assert ok_rate, f"rates {s.rates} vs {target_rates}"
    assert ok_time


def test_criterion_02_algorithm2_table():
    # step_uniform checks every assembled system and raises if one is not an M-matrix
    s = study("dirichlet-exp", "alg2")
    target = (1.1084e-1, 5.7351e-2, 2.9344e-2, 1.4901e-2)
    target_rates = (0.9506, 0.9668, 0.9777)
    ok_m = s.failure is None
    ok_err = within_rel(s.linf, target, 0.05)
    ok_rate = within_abs(s.rates, target_rates, 0.05)
    report(2, ok_m and ok_err and ok_rate,
           f"alg2 errors {fmt(s.linf)} rates {fmt(s.rates)} M-matrix {'ok' if ok_m else s.failure}")
    assert ok_m, s.failure
    assert ok_err, f"errors {s.linf} vs {target}"
    assert ok_rate, f"rates {s.rates} vs {target_rates}"


def test_criterion_03_lisl_exact_table():
    s = study("dirichlet-exp", "lisl-exact", dt_ratio=0.25)
    target = (5.4703e-2, 2.8070e-2, 1.4617e-2, 7.3556e-3)
    ok_err = within_rel(s.linf, target, 0.10)
    ok_rate = len(s.rates) == 3 and all(r is not None and r >= 0.9 for r in s.rates)
    report(3, ok_err and ok_rate and s.failure is None,
           f"lisl-exact errors {fmt(s.linf)} rates {fmt(s.rates)}")
    assert s.failure is None, s.failure
    assert ok_err, f"errors {s.linf} vs {target}"
    assert ok_rate, f"rates {s.rates}"


def test_criterion_04_lisl_extrapolation_table():
    s = study("dirichlet-exp", "lisl-extrap", dt_ratio=0.25)
    target = (8.695e-1, 6.773e-1, 5.338e-1, 4.039e-1)
    ok_err = within_rel(s.linf, target, 0.10)
    ok_rate = len(s.rates) == 3 and all(r is not None and r <= 0.6 for r in s.rates)
    extra = f" stopped at {s.failure}" if s.failure else ""
    report(4, ok_err and ok_rate, f"lisl-extrap errors {fmt(s.linf)} rates {fmt(s.rates)}{extra}")
    assert s.failure is None, s.failure
    assert ok_err, f"errors {s.linf} vs {target}"
    assert ok_rate, f"rates {s.rates}"


def test_criterion_05_algorithm3_table():
    s = study("neumann-trig", "alg3")
    target = (8.1891e-2, 3.5314e-2, 9.7472e-3, 5.0892e-3)
    ok_err = within_rel(s.linf, target, 0.10)
    mean_rate = float(np.mean(s.rates))
    ok_rate = mean_rate >= 0.9
    report(5, ok_err and ok_rate, f"alg3 errors {fmt(s.linf)} mean rate {mean_rate:.4f}")
    assert ok_err, f"errors {s.linf} vs {target}"
    assert ok_rate


def test_criterion_06_algorithm4_table():
    s = study("periodic-trig", "alg4")
    target = (1.3661e-1, 7.2895e-2, 3.4862e-2, 1.7847e-2)
    ok_err = within_rel(s.linf, target, 0.10)
    late = [r.rate_linf for r in s.rows if r.M1 >= 80]
    ok_rate = within_abs(late, [1.0] * len(late), 0.1) and len(late) == 2
    report(6, ok_err and ok_rate, f"alg4 errors {fmt(s.linf)} rates from M=80 {fmt(late)}")
    assert ok_err, f"errors {s.linf} vs {target}"
    assert ok_rate, f"rates {late}"


def test_criterion_07_weight_identities():
    rng = np.random.default_rng(2024)
    t = 1.0 - rng.random((4, 100_000))
    w = branch_weights(t)
    s = np.sqrt(t)
    rel = lambda a, b: np.max(np.abs(a - b) / np.maximum(np.abs(a), np.abs(b)))  # noqa: E731
    e_sum = float(np.max(np.abs(w.sum(axis=0) - 1.0)))
    e_signed = float(np.max(np.abs(w[0] * t[0] - w[1] * t[1] + w[2] * t[2] - w[3] * t[3])
                            / (w[0] * t[0] + w[1] * t[1] + w[2] * t[2] + w[3] * t[3])))
    e13 = float(rel(w[0] * s[0], w[2] * s[2]))
    e24 = float(rel(w[1] * s[1], w[3] * s[3]))
    worst = max(e_sum, e_signed, e13, e24)
    ok = worst <= 1e-12 and bool(np.all(w >= 0))
    report(7, ok, f"omega identities on 1e5 samples, worst relative deviation {worst:.2e}")
    assert ok


def _bounded(p, g, levels, kind):
    X, Y = g.mesh()
    for n in range(g.N - 1, -1, -1):
        cur, nxt = levels[n].values, levels[n + 1].values
        if cur.min() < 0.0:
            return False
        bound = np.abs(nxt).max()
        if kind == "dirichlet":
            ts = np.linspace(g.t(n), g.t(n + 1), 5)
            bound = max(bound, max(np.abs(p.boundary_values(X, Y, t)).max() for t in ts))
        if np.abs(cur).max() > bound * (1 + 1e-12):
            return False
    return True


def test_criterion_08_positivity_and_stability():
    failures = []
    for scheme, kind in SCHEME_KIND.items():
        for trial in range(20):
            p = random_problem(kind, 1000 * trial + 17)
            g = make_grid(UNIT_SQUARE, 12, 12, 12, 1.0)
            res = solve(p, g, scheme, history=True)
            if not _bounded(p, g, res.levels, kind):
                failures.append((scheme, trial))
    report(8, not failures, f"80 random nonnegative problems (20 per scheme), failures {failures}")
    assert not failures


ORACLE_POINTS = ((0.3, 0.4), (0.7, 0.2), (0.25, 0.75), (0.6, 0.65), (0.45, 0.85))
ORACLE_RUNS = (("dirichlet-exp", "alg1"), ("neumann-trig", "alg3"), ("periodic-trig", "alg4"))


def test_criterion_09_oracle_cross_check():
    bad, seconds, worst = [], 0.0, 0.0
    for problem, scheme in ORACLE_RUNS:
        s = study(problem, scheme)
        g, field = s.grids[160], s.fields[160].values
        allowance = 2 * s.rows[-1].err_linf
        for k, (x, y) in enumerate(ORACLE_POINTS):
            i, j = int(round(x * 160)), int(round(y * 160))
            start = time.perf_counter()
            est = mc_oracle(s.problem, x, y, 0.0, paths=100_000, substeps=200, seed=k)
            seconds += time.perf_counter() - start
            gap = abs(field[i, j] - est.mean)
            limit = 3 * est.std_error + allowance
            worst = max(worst, gap / limit)
            if gap > limit:
                bad.append((problem, x, y, gap, limit))
    ok = not bad and seconds < 60.0
    report(9, ok, f"15 spot points, worst gap/allowance {worst:.3f}, oracle time {seconds:.1f}s")
    assert not bad, bad
    assert seconds < 60.0, f"oracle took {seconds:.1f}s"


def test_criterion_10_exit_time_oracle():
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(1000):
        node = rng.uniform(0.01, 0.99, 2)
        c = CoefficientSample(*rng.uniform(0.0, 3.0, 2), rng.uniform(-1, 1), *rng.uniform(-5, 5, 2))
        dt = 10 ** rng.uniform(-3.5, -1)
        for traj in branch_trajectories(node, c):
            tau, _, _ = exit_time(traj, UNIT_SQUARE, dt)
            ref, _ = exit_time_bisection(traj, UNIT_SQUARE, dt, iters=60)
            worst = max(worst, abs(tau - ref))
    ok = worst <= 1e-9
    report(10, ok, f"1000 cases x 4 branches, max |closed form - bisection| = {worst:.2e}")
    assert ok
