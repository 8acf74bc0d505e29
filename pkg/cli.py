#!/usr/bin/env python3
"""
Squeeze Lab experiment driver.

    python cli.py linear --dim 6 --k 2 --trials 1000 --seed 7
    python cli.py rho --out results --no-timestamp

Exit codes: 0 all checks passed, 2 mathematical violation, 64 usage error,
70 internal numerical failure.
"""

import argparse
import logging
import os
import sys

import batch
import reporting
from config import resolve_config
from core import DimensionError, NumericalFailure, PreconditionError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VIOLATION = 2
EXIT_USAGE = 64
EXIT_SOFTWARE = 70

COMMANDS = {
    "linear": "random symplectic matrices against complex planes",
    "wirtinger": "Omega^k against the wedge norm on random and complex-span tuples",
    "squeeze": "bump profile, Guth shear, disjointness bounds and scaling",
    "rho": "2-Jacobian and projected area of the rho-twist",
    "frobenius": "Lie brackets and integrability of the maximal plane field",
    "estimate": "one projected-volume estimate, or the linear calibration set",
}


class UsageError(Exception):
    pass


class LabArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that reports bad flags as a UsageError instead of exiting 2."""

    def error(self, message):
        raise UsageError(message)


def _add_run_flags(parser):
    geometry = parser.add_argument_group("geometry")
    geometry.add_argument("--dim", type=int, help="ambient dimension 2n")
    geometry.add_argument("--k", type=int, help="target plane has real dimension 2k")
    geometry.add_argument("--radius", type=float, help="ball radius R")
    geometry.add_argument("--eps", type=float, help="bump plateau half-width")
    geometry.add_argument("--shoulder", type=float, help="bump ramp smoothing width")

    trials = parser.add_argument_group("trials")
    trials.add_argument("--seed", type=int)
    trials.add_argument("--trials", type=int)
    trials.add_argument("--scale", type=float, help="generator entry range for exp(J S)")
    trials.add_argument("--tol", type=float, help="inequality/equality tolerance")
    trials.add_argument("--unitary", action="store_true", default=None,
                        help="draw unitary symplectic maps (equality case)")

    estimator = parser.add_argument_group("estimator")
    estimator.add_argument("--cells", type=int, help="cells per axis")
    estimator.add_argument("--samples", type=int)
    estimator.add_argument("--map", choices=["identity", "linear", "guth", "generating", "rho"])
    estimator.add_argument("--calibrate", action="store_true", default=None)

    output = parser.add_argument_group("output")
    output.add_argument("--out", help="output directory")
    output.add_argument("--format", choices=["csv", "json"])
    output.add_argument("--no-timestamp", dest="timestamp", action="store_false", default=None)
    output.add_argument("--no-plot", dest="plot", action="store_false", default=None)
    output.add_argument("--config", default="config.yaml", help="YAML defaults file")

    verbosity = output.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true")
    verbosity.add_argument("--quiet", action="store_true")


def build_parser():
    parser = LabArgumentParser(prog="squeeze-lab", description="Middle-dimensional nonsqueezing lab")
    subparsers = parser.add_subparsers(dest="command", metavar="command", parser_class=LabArgumentParser)
    subparsers.required = True
    for name, description in COMMANDS.items():
        _add_run_flags(subparsers.add_parser(name, help=description, description=description))
    return parser


def validate(cfg):
    """Rejects parameter values no experiment can run with."""
    if not cfg.tol > 0:
        raise UsageError(f"--tol must be positive, got {cfg.tol}")
    if cfg.trials < 0:
        raise UsageError(f"--trials must be non-negative, got {cfg.trials}")
    if not cfg.radius > 0:
        raise UsageError(f"--radius must be positive, got {cfg.radius}")
    if not cfg.eps > 0:
        raise UsageError(f"--eps must be positive, got {cfg.eps}")
    if cfg.shoulder is not None and not cfg.shoulder > 0:
        raise UsageError(f"--shoulder must be positive, got {cfg.shoulder}")
    if not cfg.scale > 0:
        raise UsageError(f"--scale must be positive, got {cfg.scale}")
    if cfg.samples <= 0:
        raise UsageError(f"--samples must be positive, got {cfg.samples}")
    if cfg.cells is not None and cfg.cells < 4:
        raise UsageError(f"--cells must be at least 4, got {cfg.cells}")
    if cfg.format not in ("csv", "json"):
        raise UsageError(f"unknown format {cfg.format!r}")


def write_outputs(cfg, result):
    """Writes every table, the summary and the plot; returns the written paths."""
    header = cfg.header()
    ext = cfg.format
    paths = [reporting.write_table(result["trials"], os.path.join(cfg.out, f"{cfg.command}_trials.{ext}"),
                                   header, fmt=ext, timestamp=cfg.timestamp)]
    for name, frame in result.get("tables", {}).items():
        paths.append(reporting.write_table(frame, os.path.join(cfg.out, f"{name}.{ext}"),
                                           header, fmt=ext, timestamp=cfg.timestamp))
    paths.append(reporting.write_summary(result["summary"], os.path.join(cfg.out, f"{cfg.command}_summary.json"),
                                         header, timestamp=cfg.timestamp))
    plot = result.get("plot")
    if plot and cfg.plot:
        paths.append(reporting.write_plot_svg(plot, os.path.join(cfg.out, f"{plot['name']}.svg"),
                                              timestamp=cfg.timestamp))
    return paths


def _configure_logging(args):
    level = logging.INFO
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[logging.StreamHandler(sys.stdout)],
        force=True,
    )


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"squeeze-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_OK

    _configure_logging(args)
    overrides = {key: value for key, value in vars(args).items()
                 if key not in ("command", "config", "verbose", "quiet")}

    try:
        cfg = resolve_config(args.command, overrides, config_path=args.config)
        validate(cfg)
        logger.info(f"🚀 Running {cfg.command} (dim={cfg.dim}, k={cfg.k}, seed={cfg.seed}, trials={cfg.trials})")
        result = batch.EXPERIMENTS[cfg.command](cfg)
        paths = write_outputs(cfg, result)
    except (UsageError, PreconditionError, DimensionError) as exc:
        logger.error(f"❌ Usage error: {exc}")
        return EXIT_USAGE
    except NumericalFailure as exc:
        logger.exception(f"❌ Numerical failure: {exc}")
        return EXIT_SOFTWARE
    except reporting.PlotExportError as exc:
        logger.error(f"❌ {exc}; rerun with --no-plot to skip the figure")
        return EXIT_SOFTWARE
    except Exception as exc:
        logger.exception(f"❌ Unexpected error: {exc}")
        return EXIT_SOFTWARE

    summary = result["summary"]
    logger.info(reporting.format_summary_message(cfg.command, summary))
    for path in paths:
        logger.debug(f"💾 Wrote {path}")

    if summary.get("errors"):
        logger.error(f"❌ {summary['errors']} trial(s) failed with an internal error")
        return EXIT_SOFTWARE
    return EXIT_OK if summary.get("passed") else EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
