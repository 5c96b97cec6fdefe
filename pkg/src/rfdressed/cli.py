"""Command line entry point: ``rfdressed <subcommand> --config run.json``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .config import FORMATS, ConfigError, parse_config
from .floquet import EigensolverError
from .gpe import GPENumericalError
from .piecewise import StarkDivergence
from .runs import RUNNERS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("rfdressed")


def build_parser() -> argparse.ArgumentParser:
    # argparse exits with 2 on usage errors, the same code as a config error
    parser = argparse.ArgumentParser(prog="rfdressed", description="RF-dressed adiabatic potentials.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "potential": "tracked adiabatic potential on a 1D slice or 2D sheet",
        "compare": "piecewise resonance model against Floquet on one slice",
        "spectrum": "full quasi-energy spectrum at every grid point",
        "gpe": "condensate evolution in a keyframed dressed potential",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for decompositions")
        p.add_argument("--format", choices=FORMATS, default=None,
                       help="table format (overrides the config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(args.config).with_output(args.out, args.format)
        t0 = time.perf_counter()
        report = RUNNERS[args.command](cfg, out=cfg.output_directory, threads=args.threads)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (EigensolverError, GPENumericalError, StarkDivergence, FloatingPointError,
            ArithmeticError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    log.info("%s finished in %.1f s", args.command, time.perf_counter() - t0)
    for f in report.files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
