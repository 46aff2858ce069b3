"""Command line interface: ``ifesolve {solve,study,props,export}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import IFEError
from .harness import (RunConfig, check_rates, compute_errors, convergence_study, export_solution,
                      load_problem, solve_problem)
from .problems import available_problems
from .props import SUITES, run_properties

log = logging.getLogger("ifesolve")

# command line flag -> RunConfig field
_FLAG_FIELDS = {
    "problem": "problem", "dim": "dim", "M": "M", "levels": "levels", "beta_plus": "beta_plus",
    "beta_minus": "beta_minus", "stab": "stab", "eta": "eta", "mu": "mu", "tol": "tol", "ns": "ns",
    "out": "out", "format": "format", "cond": "cond", "wall_time": "wall_time",
}


class _Parser(argparse.ArgumentParser):
    """Usage errors print help and exit with status 1 (2 is reserved for failed rate checks)."""

    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override its entries")
    p.add_argument("--problem", help=f"one of: {', '.join(available_problems())}")
    p.add_argument("--dim", type=int, choices=(2, 3))
    p.add_argument("--M", help="comma-separated subdivisions per axis (2D)")
    p.add_argument("--levels", help="comma-separated refinement levels (3D)")
    p.add_argument("--beta-plus", dest="beta_plus", type=float)
    p.add_argument("--beta-minus", dest="beta_minus", type=float)
    p.add_argument("--stab", choices=("lifting", "penalty"))
    p.add_argument("--eta", type=float, help="penalty parameter (penalty stabilization)")
    p.add_argument("--mu", type=float, help="relative size of the interface patch")
    p.add_argument("--tol", type=float, help="relative residual tolerance of the outer PCG")
    p.add_argument("--ns", type=int, help="smoothing steps in the preconditioner")
    p.add_argument("--out", help="output file (study) or directory (export)")
    p.add_argument("--format", choices=("csv", "md"))


def build_config(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for flag, key in _FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None and v is not False:
            overrides[key] = v
    if args.config:
        return RunConfig.from_file(args.config, **overrides)
    if overrides.get("dim") == 3 and "problem" not in overrides:
        overrides["problem"] = "example3d"
    return RunConfig.from_dict(overrides)


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
        print(f"wrote {out}")
    else:
        sys.stdout.write(text)


def cmd_solve(args) -> int:
    config = build_config(args)
    spec = load_problem(config)
    res = solve_problem(config, spec=spec)
    rep = res.report
    r = res.system.rhs - res.system.A @ res.u_free
    print(f"problem {spec.name}, size {res.size}, {res.u_free.size} dofs")
    print(f"Iter1 {rep.iter1}, Iter2 {'--' if rep.iter2 is None else rep.iter2}, "
          f"residual {np.linalg.norm(r):.3e}, converged {rep.converged}")
    if spec.levelset.has_exact:
        l2, h1 = compute_errors(res.field, spec)
        print(f"L2 error {l2:.3e}, H1 error {h1:.3e}")
    print(f"wall time {res.wall_time:.2f}s")
    return 0


def cmd_study(args) -> int:
    config = build_config(args)
    study = convergence_study(config)
    _write(study.render(), config.out)
    if args.assert_rates:
        bad = check_rates(study, tuple(args.l2_window), tuple(args.h1_window))
        for msg in bad:
            print(f"assertion failed: {msg}", file=sys.stderr)
        if bad:
            return 2
    return 0


def cmd_props(args) -> int:
    results = run_properties(args.suite or None, quick=args.quick)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 2


def cmd_export(args) -> int:
    config = build_config(args)
    res = solve_problem(config)
    for p in export_solution(res, config.out or ".", tuple(args.what)):
        print(f"wrote {p}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ifesolve", description="Immersed finite element solver for "
                                     "anisotropic elliptic interface problems.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("solve", help="solve on the first mesh size and report iterations and errors")
    _add_run_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("study", help="convergence table over all mesh sizes")
    _add_run_flags(p)
    p.add_argument("--cond", action="store_true", help="add a condition number estimate column")
    p.add_argument("--wall-time", dest="wall_time", action="store_true", help="add a wall time column")
    p.add_argument("--assert", dest="assert_rates", action="store_true",
                   help="exit with status 2 if the last-step rates leave their windows")
    p.add_argument("--l2-window", type=float, nargs=2, default=(1.8, 2.2), metavar=("LO", "HI"))
    p.add_argument("--h1-window", type=float, nargs=2, default=(0.8, 1.2), metavar=("LO", "HI"))
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("props", help="run the property suites")
    p.add_argument("--suite", action="append", choices=sorted(SUITES))
    p.add_argument("--quick", action="store_true", help="smaller meshes and sample counts")
    p.set_defaults(func=cmd_props)

    p = sub.add_parser("export", help="write VTK and Matrix Market files for one solve")
    _add_run_flags(p)
    p.add_argument("--what", nargs="+", choices=("vtk", "mtx"), default=["vtk", "mtx"])
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 1
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (IFEError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


run_cli = main

if __name__ == "__main__":
    sys.exit(main())
