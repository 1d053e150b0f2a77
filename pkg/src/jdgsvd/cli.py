"""Command-line front end: build a pair, run the requested methods, report."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .core import GsvdError, MatrixPair, Method, MethodPreconditionError, ParseError, SolverOptions
from .driver import solve
from .io import (
    generate_b,
    probe_pair,
    random_sparse,
    read_matrix_market,
    write_result_json,
    write_trace_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_NOCONV, EXIT_PRECONDITION = 0, 1, 2, 3, 4

METHODS = {"cpf": Method.STANDARD, "cpfh": Method.CPF_HARMONIC, "ifh": Method.IF_HARMONIC}
ALGORITHM_NAMES = {
    Method.STANDARD: "CPF-JDGSVD",
    Method.CPF_HARMONIC: "CPF-HJDGSVD",
    Method.IF_HARMONIC: "IF-HJDGSVD",
}


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="jdgsvd", description="Partial GSVD of a sparse pair (A, B) near a target.")
    src_a = p.add_mutually_exclusive_group(required=True)
    src_a.add_argument("--matrix-a", metavar="PATH", help="Matrix Market file for A")
    src_a.add_argument("--a", choices=["random_sparse"], help="generate A")
    src_b = p.add_mutually_exclusive_group(required=True)
    src_b.add_argument("--matrix-b", metavar="PATH", help="Matrix Market file for B")
    src_b.add_argument("--b-gen", choices=["T", "L1", "L2"], help="generate B")
    p.add_argument("--m", type=int, help="rows of a generated A (default n)")
    p.add_argument("--n", type=int, help="columns of a generated A")
    p.add_argument("--density", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--num", type=int, default=1)
    p.add_argument("--method", choices=[*METHODS, "all"], default="ifh")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--fixtol", type=float, default=1e-4)
    p.add_argument("--inner-eps", type=float, default=1e-4)
    p.add_argument("--inner-c", type=float, default=1.0)
    p.add_argument("--kmax", type=int, default=30)
    p.add_argument("--kmin", type=int, default=3)
    p.add_argument("--max-outer", type=int)
    p.add_argument("--btb", choices=["cholesky", "cg"], default="cholesky")
    p.add_argument("--trace", metavar="PATH.csv")
    p.add_argument("--out", metavar="PATH.json")
    p.add_argument("--parallel-methods", action="store_true")
    p.add_argument("--probe", action="store_true", help="print dense estimates of cond and sigma range")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _build_pair(args) -> MatrixPair:
    if args.matrix_a:
        a = read_matrix_market(args.matrix_a)
    else:
        if args.n is None:
            raise _UsageError("--a random_sparse needs --n")
        a = random_sparse(args.m or args.n, args.n, args.density, args.seed)
    b = read_matrix_market(args.matrix_b) if args.matrix_b else generate_b(args.b_gen, a.cols)
    return MatrixPair(a, b)


class _UsageError(Exception):
    pass


def _trace_path(base, method, many):
    if not many:
        return Path(base)
    base = Path(base)
    return base.with_name(f"{base.stem}_{method.short_name.lower()}{base.suffix}")


def format_table(results) -> str:
    rows = [("Algorithm", "I_out", "I_in", "T_cpu", "converged")]
    for r in results:
        rows.append((ALGORITHM_NAMES[r.method], str(r.outer_iterations), str(r.inner_iterations),
                     f"{r.wall_seconds:.2f}", "yes" if r.converged else "no"))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows)


def run_cli(argv=None) -> int:
    """Run the command line ``argv`` and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    try:
        pair = _build_pair(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (_UsageError, GsvdError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    methods = list(METHODS.values()) if args.method == "all" else [METHODS[args.method]]
    try:
        opts = [
            SolverOptions(
                target=args.target, num_components=args.num, method=m, tol=args.tol,
                fixtol=args.fixtol, inner_eps=args.inner_eps, inner_c=args.inner_c,
                k_max=args.kmax, k_min=args.kmin, max_outer=args.max_outer,
                btb_solve="banded_cholesky" if args.btb == "cholesky" else "cg", seed=args.seed,
            )
            for m in methods
        ]
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if args.probe:
        for key, val in probe_pair(pair).items():
            print(f"{key}: {val:.6g}")

    try:
        if args.parallel_methods and len(opts) > 1:
            with ThreadPoolExecutor(max_workers=len(opts)) as pool:
                results = list(pool.map(lambda o: solve(pair, o), opts))
        else:
            results = [solve(pair, o) for o in opts]
    except MethodPreconditionError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_PRECONDITION

    print(format_table(results))
    for r in results:
        sig = ", ".join(f"{s:.12g}" for s in r.sigmas)
        print(f"{ALGORITHM_NAMES[r.method]} sigma: [{sig}]")
    if args.out:
        write_result_json(args.out, results, seed=args.seed)
    if args.trace:
        for r in results:
            write_trace_csv(_trace_path(args.trace, r.method, len(results) > 1), r)
    return EXIT_OK if all(r.converged for r in results) else EXIT_NOCONV


def main() -> None:
    sys.exit(run_cli())
