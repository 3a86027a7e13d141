"""Command-line front end: points, space reports, single solves and convergence studies.

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assembly import AssemblyError, ManufacturedSolution, assemble, dump_system, get_solution
from .errors import MEASURES, ErrorReport, convergence_orders, relative_errors, to_csv
from .geometry import GeometryError, MultiPatchDomain, get_domain
from .lsq import SolveError, SolveReport, solve
from .points import (FAMILIES, PointError, avoid_nonsmooth_loci, collocation_points,
                     univariate_points)
from .smooth_basis import (ParameterError, SmoothSpace, SpaceError, assemble_space,
                           check_parameters, smoothness_jumps)

log = logging.getLogger("smoothcolloc")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2
JUMP_TOL = 1e-8
DEFAULT_PR = {4: (9, 4), 3: (8, 3)}


class UsageError(ValueError):
    pass


USAGE_ERRORS = (UsageError, GeometryError, PointError, AssemblyError, ParameterError)
NUMERIC_ERRORS = (SolveError, SpaceError, np.linalg.LinAlgError, ArithmeticError, RuntimeError)


@dataclass
class LevelResult:
    space: SmoothSpace
    system: object
    solve: SolveReport
    errors: ErrorReport
    seconds: float


def run_level(domain: MultiPatchDomain, s: int, p: int, r: int, k: int, family: str,
              solution: ManufacturedSolution, method: str = "qr",
              condition: bool = True) -> LevelResult:
    """Build space and points, assemble, solve and measure at one level."""
    t0 = time.perf_counter()
    space = assemble_space(domain, s, p, r, k)
    pts = collocation_points(domain, family, p, r, k, smoothness=s)
    avoid_nonsmooth_loci(pts, space)
    system = assemble(domain, space, pts, solution)
    rep = solve(system, method, condition=condition)
    try:
        err = relative_errors(space, rep.coefficients, solution)
    except ValueError as exc:
        raise UsageError(f"solution {solution.name!r}: {exc}") from None
    return LevelResult(space, system, rep, err, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# argument handling


def _parse_levels(text: str) -> list[int]:
    """Comma separated numbers of elements per direction (k+1), e.g. 4,8,16."""
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad level list {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise UsageError("levels must be positive integers")
    vals = sorted(set(vals))
    return [v - 1 for v in vals]


def _resolve_pr(args) -> tuple[int, int]:
    p0, r0 = DEFAULT_PR.get(args.smoothness, (None, None))
    p = args.p if args.p is not None else p0
    r = args.r if args.r is not None else r0
    if p is None or r is None:
        raise UsageError("--p and --r are required for this smoothness")
    return p, r


def _families(name: str) -> list[str]:
    return list(FAMILIES) if name == "both" else [name]


def _setup(args):
    domain = get_domain(args.domain)
    p, r = _resolve_pr(args)
    check_parameters(domain, args.smoothness, p, r)
    return domain, p, r


def _thread_limit():
    val = os.environ.get("SMOOTHCOLLOC_THREADS")
    if not val:
        return nullcontext()
    try:
        n = int(val)
    except ValueError:
        raise UsageError(f"SMOOTHCOLLOC_THREADS must be an integer, got {val!r}") from None
    if n < 1:
        raise UsageError("SMOOTHCOLLOC_THREADS must be positive")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


# ---------------------------------------------------------------------------
# commands


def cmd_points(args) -> int:
    p = args.p if args.p is not None else 9
    r = args.r if args.r is not None else 4
    fams = _families(args.family)
    for fam in fams:
        uni = univariate_points(fam, p, r, args.k)
        print(f"# family={fam} p={p} r={r} k={args.k} count={len(uni)}")
        for i, (x, tag) in enumerate(zip(uni.points, uni.provenance)):
            print(f"{i} {x:.17g} {tag}")
    return EXIT_OK


def cmd_space(args) -> int:
    domain, p, r = _setup(args)
    space = assemble_space(domain, args.smoothness, p, r, args.k)
    print(f"domain={domain.name} s={space.s} p={p} r={r} k={args.k} n={space.n}")
    for kind, cnt in space.summary().items():
        print(f"{kind}: {cnt}")
    for key, cnt in sorted(space.counts().items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
        print(f"  {key[0]} {key[1]}: {cnt}")
    for v, d in sorted(space.kernel_dims.items()):
        print(f"vertex {v}: kernel dimension {d}, residual {space.vertex_residuals.get(v, 0.0):.2e}")
    print(f"dim={space.dim}")
    if not domain.inner_edges:
        print("max jump: 0 (no inner edges)")
        return EXIT_OK
    jumps = smoothness_jumps(space)
    worst = float(jumps.max())
    print("max jump by order: " + " ".join(f"{v:.2e}" for v in jumps.max(axis=0)))
    print(f"max jump: {worst:.3e}")
    return EXIT_OK if worst <= JUMP_TOL else EXIT_NUMERIC


def cmd_solve(args) -> int:
    domain, p, r = _setup(args)
    sol = get_solution(args.solution)
    if len(_families(args.family)) != 1:
        raise UsageError("solve needs a single point family")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"solve_{domain.name}_{args.family}_k{args.k}"
    paths = [out / f"{stem}.csv"]
    if args.dump:
        paths += [out / f"{stem}_matrix.txt", out / f"{stem}_rhs.txt"]
    try:
        res = run_level(domain, args.smoothness, p, r, args.k, args.family, sol,
                        args.method, condition=not args.no_condition)
        m, n = res.system.shape
        print(f"matrix {m} x {n} ({'square' if m == n else 'overdetermined'}), "
              f"method {res.solve.method}")
        print(f"condition {res.solve.condition:.6e}  residual {res.solve.residual:.6e}")
        for name in MEASURES:
            print(f"e{name} {res.errors.errors[name]:.6e}")
        paths[0].write_text(to_csv([res.errors]))
        if args.dump:
            dump_system(res.system, paths[1], paths[2])
    except BaseException:
        for pth in paths:
            pth.unlink(missing_ok=True)
        raise
    return EXIT_OK


def _plot_data(results: dict) -> str:
    """Long-format table: family, log2 h, then log10 of every error measure."""
    lines = ["family,log2h," + ",".join(f"log10e{m}" for m in MEASURES)]
    for fam, reps in results.items():
        for rep in reps:
            vals = [math.log10(rep.errors[m]) if rep.errors[m] > 0 else float("nan")
                    for m in MEASURES]
            lines.append(f"{fam},{math.log2(rep.h):.10g}," +
                         ",".join("nan" if not np.isfinite(v) else f"{v:.10g}" for v in vals))
    return "\n".join(lines) + "\n"


def cmd_study(args) -> int:
    domain, p, r = _setup(args)
    sol = get_solution(args.solution)
    ks = _parse_levels(args.levels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results, failed = {}, 0
    for fam in _families(args.family):
        reps = []
        for k in ks:
            try:
                res = run_level(domain, args.smoothness, p, r, k, fam, sol, args.method,
                                condition=False)
                log.info("%s k=%d: %d x %d in %.1f s", fam, k, *res.system.shape, res.seconds)
                reps.append(res.errors)
            except NUMERIC_ERRORS as exc:
                failed += 1
                print(f"level k={k} ({fam}) failed: {exc}", file=sys.stderr)
                reps.append(ErrorReport(h=1.0 / (k + 1), errors={m: float("nan") for m in MEASURES}))
        convergence_orders(reps)
        results[fam] = reps
        (out / f"study_{domain.name}_{fam}.csv").write_text(to_csv(reps))
        print(f"{fam}:")
        print(to_csv(reps), end="")
    (out / f"study_{domain.name}_plot.csv").write_text(_plot_data(results))
    return EXIT_NUMERIC if failed else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smoothcolloc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, domain=True, k=True):
        sp.add_argument("--p", type=int, help="spline degree (default 9 for C^4, 8 for C^3)")
        sp.add_argument("--r", type=int, help="inner knot regularity (default 4 for C^4, 3 for C^3)")
        sp.add_argument("--smoothness", type=int, choices=(3, 4), default=4)
        if k:
            sp.add_argument("--k", type=int, required=True, help="number of inner knots")
        if domain:
            sp.add_argument("--domain", default="one-patch",
                            help="builtin name or JSON domain file")

    sp = sub.add_parser("points", help="list univariate collocation points")
    sp.add_argument("--p", type=int)
    sp.add_argument("--r", type=int)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--family", choices=FAMILIES + ("both",), default="greville")
    sp.set_defaults(func=cmd_points)

    sp = sub.add_parser("space", help="build the smooth space and check smoothness")
    common(sp)
    sp.set_defaults(func=cmd_space)

    for name, func, helptext in (("solve", cmd_solve, "solve at one level"),
                                 ("study", cmd_study, "convergence study over several levels")):
        sp = sub.add_parser(name, help=helptext)
        common(sp, k=name == "solve")
        sp.add_argument("--family", choices=FAMILIES + ("both",),
                        default="greville" if name == "solve" else "both")
        sp.add_argument("--solution", default="builtin:trig",
                        help="builtin:trig or poly:<file> with a JSON coefficient matrix")
        sp.add_argument("--method", choices=("qr", "normal"), default="qr")
        sp.add_argument("--out", default=".", help="output directory")
        if name == "solve":
            sp.add_argument("--dump", action="store_true", help="also write matrix and rhs")
            sp.add_argument("--no-condition", action="store_true",
                            help="skip the condition number estimate")
        else:
            sp.add_argument("--levels", default="4,8,16",
                            help="comma separated elements per direction k+1")
        sp.set_defaults(func=func)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
