"""Command-line front end: single solves, refinement studies and oracle checks.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from typing import Optional, Sequence

from .analysis import ErrorReport, StudyResult, convergence_rates, error_norms, mc_oracle
from .core import ConfigurationError, NumericalError, builtin_problem, make_grid
from .schemes import SCHEME_BOUNDARY, check_compatible, solve

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

CSV_HEADER = ["M1", "M2", "N", "err_linf", "rate_linf", "err_l2", "rate_l2"]
DEFAULT_LEVELS = (20, 40, 80, 160)
FULL_LEVELS = DEFAULT_LEVELS + (320, 640)


def fmt(value: Optional[float]) -> str:
    """Scientific notation with 6 significant digits; empty when absent."""
    return "" if value is None else f"{value:.5e}"


def is_lisl(scheme: str) -> bool:
    return scheme.startswith("lisl")


def time_steps(M: int, scheme: str, n: Optional[int], dt_ratio: float) -> int:
    """``N`` for a level: explicit ``--n`` wins, else ``dt = h`` (or ``dt_ratio * h`` for LISL)."""
    if n is not None:
        return n
    if is_lisl(scheme):
        return int(round(M / dt_ratio))
    return M


def parse_levels(text: Optional[str], base: Optional[int], full: bool):
    """Refinement levels as a list of ``(M, N or None)``.

    ``text`` is a comma list of ``M`` or ``M:N`` entries, or a bare doubling
    count when ``base`` is given.
    """
    if text is None:
        if base is not None:
            raise ConfigurationError("--m without --levels: give a doubling count or a list")
        return [(m, None) for m in (FULL_LEVELS if full else DEFAULT_LEVELS)]
    text = text.strip()
    if base is not None and text.isdigit():
        count = int(text)
        if count < 1:
            raise ConfigurationError("doubling count must be at least 1")
        return [(base * 2**i, None) for i in range(count)]
    levels = []
    for part in text.split(","):
        m, _, n = part.strip().partition(":")
        try:
            levels.append((int(m), int(n) if n else None))
        except ValueError:
            raise ConfigurationError(f"bad level {part!r}; expected M or M:N") from None
    if full:
        top = max(m for m, _ in levels)
        levels += [(m, None) for m in FULL_LEVELS if m > top]
    return levels


def solve_options(args) -> dict:
    opts = {}
    if is_lisl(args.scheme) and args.lisl_k is not None:
        opts["k"] = args.lisl_k
    return opts


def run_level(problem, scheme: str, M: int, N: int, options: dict) -> ErrorReport:
    grid = make_grid(problem.domain, M, M, N, problem.T)
    try:
        res = solve(problem, grid, scheme, **options)
    except NumericalError as exc:
        raise NumericalError(f"M={M}, N={N}: {exc}") from exc
    linf, l2 = error_norms(res.field, problem, grid)
    return ErrorReport(M, M, N, linf, l2, h=grid.h1)


def run_study(problem, scheme: str, levels, dt_ratio: float = 0.25, options: Optional[dict] = None) -> StudyResult:
    check_compatible(problem, scheme)
    rows = [run_level(problem, scheme, M, time_steps(M, scheme, N, dt_ratio), options or {}) for M, N in levels]
    if len(rows) >= 2:
        rows = convergence_rates(rows)
    return StudyResult(problem.name, scheme, rows)


def printed_rows(result: StudyResult) -> list:
    """Rows with errors rounded as printed and rates recomputed from them.

    Rates derived from the printed errors keep the report self-consistent:
    anyone recomputing them from the CSV gets the same digits.
    """
    rnd = lambda v: None if v is None else float(fmt(v))  # noqa: E731
    rows = [replace(r, err_linf=rnd(r.err_linf), err_l2=rnd(r.err_l2)) for r in result.rows]
    return convergence_rates(rows) if len(rows) >= 2 else rows


def rows_to_csv(result: StudyResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    lisl = is_lisl(result.scheme)
    for r in printed_rows(result):
        w.writerow([
            r.M1, r.M2, r.N, fmt(r.err_linf), fmt(r.rate_linf),
            "" if lisl else fmt(r.err_l2), "" if lisl else fmt(r.rate_l2),
        ])
    return buf.getvalue()


def rows_to_json(result: StudyResult) -> str:
    lisl = is_lisl(result.scheme)
    rows = []
    for r in printed_rows(result):
        row = {"M1": r.M1, "M2": r.M2, "N": r.N, "err_linf": fmt(r.err_linf), "rate_linf": fmt(r.rate_linf)}
        if not lisl:
            row.update(err_l2=fmt(r.err_l2), rate_l2=fmt(r.rate_l2))
        rows.append({k: (None if v == "" else v) for k, v in row.items()})
    return json.dumps({"problem": result.problem, "scheme": result.scheme, "rows": rows}, indent=2) + "\n"


def emit(text: str, out: Optional[str]):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def resolve_scheme(args) -> str:
    scheme = args.scheme
    if args.lisl_boundary is not None:
        if not is_lisl(scheme):
            raise ConfigurationError("--lisl-boundary applies to LISL schemes only")
        scheme = f"lisl-{args.lisl_boundary}"
    return scheme


def cmd_solve(args) -> int:
    problem = builtin_problem(args.problem)
    args.scheme = resolve_scheme(args)
    if args.m is None:
        raise ConfigurationError("solve needs --m")
    result = run_study(problem, args.scheme, [(args.m, args.n)], args.lisl_dt_ratio, solve_options(args))
    render = rows_to_json if args.format == "json" else rows_to_csv
    emit(render(result), args.out)
    return EXIT_OK


def cmd_study(args) -> int:
    problem = builtin_problem(args.problem)
    args.scheme = resolve_scheme(args)
    levels = parse_levels(args.levels, args.m, args.full)
    if args.n is not None:
        levels = [(m, n if n is not None else args.n) for m, n in levels]
    result = run_study(problem, args.scheme, levels, args.lisl_dt_ratio, solve_options(args))
    render = rows_to_json if args.format == "json" else rows_to_csv
    emit(render(result), args.out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    problem = builtin_problem(args.problem)
    est = mc_oracle(problem, args.x, args.y, args.t, paths=args.paths, substeps=args.substeps, seed=args.seed)
    record = {"problem": problem.name, "x": args.x, "y": args.y, "t": args.t,
              "mean": est.mean, "std_error": est.std_error, "paths": est.paths, "seed": est.seed}
    if est.exact is not None:
        record.update(exact=est.exact, z_score=est.z_score)
    if args.format == "json":
        text = json.dumps(record, indent=2) + "\n"
    else:
        text = "".join(f"{k}: {fmt(v) if isinstance(v, float) else v}\n" for k, v in record.items())
    emit(text, args.out)
    return EXIT_OK


def positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem", default="dirichlet-exp")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--out", metavar="PATH")
    common.add_argument("--threads", type=int, default=0,
                        help="worker count (0 = auto); steps are vectorized, so this is advisory")

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--scheme", choices=sorted(SCHEME_BOUNDARY), default="alg1")
    grid.add_argument("--m", type=int, help="cells per axis (solve) or base M (study)")
    grid.add_argument("--n", type=int, help="time steps; default N = M, or M / dt-ratio for LISL")
    grid.add_argument("--lisl-k", type=positive_float, help="LISL stencil length (default sqrt(h))")
    grid.add_argument("--lisl-dt-ratio", type=positive_float, default=0.25, help="LISL dt / h (default 0.25)")
    grid.add_argument("--lisl-boundary", choices=("exact", "extrap"))

    parser = argparse.ArgumentParser(prog="fkstencil", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("solve", parents=[common, grid], help="one grid, one row")

    p = sub.add_parser("study", parents=[common, grid], help="refinement study with rates")
    p.add_argument("--levels", help="comma list of M or M:N, or a doubling count with --m")
    p.add_argument("--full", action="store_true", help="extend the default levels to M = 640")

    p = sub.add_parser("oracle", parents=[common], help="Monte Carlo spot check")
    p.add_argument("--x", type=float, default=0.5)
    p.add_argument("--y", type=float, default=0.5)
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--substeps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    return parser


COMMANDS = {"solve": cmd_solve, "study": cmd_study, "oracle": cmd_oracle}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"fkstencil: configuration error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError, ArithmeticError) as exc:
        print(f"fkstencil: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
