"""Command line interface: ``dpgbem solve ...``."""

import argparse
import logging
import sys

from .dpg import FactorizationError
from .mesh import MeshError, read_mesh
from .solvers import BreakdownError, SingularMatrixError, SPDViolationError
from .study import ConfigurationError, StudyConfig, run_study

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def build_parser():
    parser = argparse.ArgumentParser(prog="dpgbem", description="DPG-BEM transmission solver")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", help="run a convergence study")
    p.add_argument("--problem", choices=["smooth", "singular"], default="smooth")
    p.add_argument("--coupling", choices=["ls", "hy", "sl", "ca"], default="ls")
    p.add_argument("--refine", choices=["uniform", "adaptive"], default="uniform")
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--h12", choices=["w", "ml"], default=None,
                   help="H^1/2 product (default: ml for uniform, w for adaptive)")
    p.add_argument("--theta", type=float, default=0.3, help="bulk marking parameter")
    p.add_argument("--solver", choices=["direct", "cg", "gmres"], default="direct")
    p.add_argument("--mesh", help="initial mesh file (default: L-shape)")
    p.add_argument("--out", help="CSV output file (default: stdout)")
    p.add_argument("--json", action="store_true", help="print a JSON summary to stdout")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    h12 = args.h12 or ("ml" if args.refine == "uniform" else "w")
    config = StudyConfig(args.problem, args.coupling, args.refine, args.levels, args.beta, h12,
                         args.theta, args.solver)
    try:
        config.validate()
        mesh = read_mesh(args.mesh) if args.mesh else None
    except (ConfigurationError, MeshError, OSError) as exc:
        parser.print_usage(sys.stderr)
        print(f"dpgbem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        record = run_study(config, mesh)
    except (SingularMatrixError, SPDViolationError, BreakdownError, FactorizationError,
            RuntimeError) as exc:
        print(f"dpgbem: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    text = record.to_csv()
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    elif not args.json:
        sys.stdout.write(text)
    if args.json:
        print(record.to_json())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
