"""Command-line entry point: ``nsrecon {simulate,invert,full,basis-tables}``.

Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 solver failure.
"""

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .errors import NSReconError, SolverError

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("nsrecon")


def _common(p):
    p.add_argument("--config", type=Path, help="JSON run configuration (a meta.json also works)")
    p.add_argument("--out", type=Path, help="output directory (default: value in config, else ./run)")
    p.add_argument("--seed", type=int, help="noise seed")
    p.add_argument("--grid", type=int, help="nodes per side of the square grid")
    p.add_argument("--modes", type=int, dest="N", help="highest time mode N")
    p.add_argument("--eps", type=float, help="Tikhonov parameter")
    p.add_argument("--noise", type=float, dest="delta", help="relative noise level")
    p.add_argument("--test", type=int, dest="test_id", help="reference test field 1, 2 or 3")
    p.add_argument("--steps", type=int, dest="n_steps", help="forward time steps")
    p.add_argument("--iterations", type=int, dest="K", help="maximum Picard iterations")
    p.add_argument("--no-convection", action="store_true", help="drop the convection term everywhere")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="nsrecon", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="forward run; writes trace.csv, u_true_t0.csv, meta.json")
    _common(p)

    p = sub.add_parser("invert", help="reconstruct from a simulate directory")
    _common(p)
    p.add_argument("--data", type=Path, help="directory with trace.csv (default: --out)")
    p.add_argument("--save-modes", action="store_true", help="also write modes/u_###.csv")
    p.add_argument("--dump-system", action="store_true", help="write the first system as MatrixMarket")

    p = sub.add_parser("full", help="simulate and invert in one go")
    _common(p)
    p.add_argument("--save-modes", action="store_true")
    p.add_argument("--dump-system", action="store_true")

    p = sub.add_parser("basis-tables", help="write S.csv and A.csv")
    _common(p)
    return parser


def resolve_config(args):
    base = pipeline.RunConfig.load(args.config) if args.config else pipeline.RunConfig()
    flags = {k: getattr(args, k) for k in ("seed", "grid", "N", "eps", "delta", "test_id", "n_steps", "K")}
    if args.no_convection:
        flags["convection"] = False
    if args.out is not None:
        flags["out"] = str(args.out)
    return base.with_overrides(**flags)


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out or "run")
        if args.command == "simulate":
            pipeline.run_simulate(cfg, out)
        elif args.command == "invert":
            pipeline.run_invert(cfg, args.data or out, out, save_modes=args.save_modes,
                                dump=args.dump_system)
        elif args.command == "full":
            run = pipeline.run_full(cfg, out, save_modes=args.save_modes, dump=args.dump_system)
            for key, val in sorted(run.metrics.items()):
                print(f"{key} = {val:.6g}")
        else:
            pipeline.run_basis_tables(cfg, out)
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except NSReconError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: [pipeline_cli] {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
