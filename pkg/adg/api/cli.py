"""
Command-line commands

    run <config> [--override section.key=value]...
    speedup <config> --workers 1,2,4 [--target value]
    validate-config <config>

Outputs go under --output-dir, or ADG_OUTPUT_DIR when omitted. Errors exit
with the code their exception carries.
"""
import argparse
import logging
from typing import List, Optional, Sequence

from adg import __version__
from adg.config import settings
from adg.core.exceptions import AdgError
from adg.schemas.experiment import load_config
from adg.services.runner import SPEEDUP_FILE, measure_speedup, output_dir_for, run_experiment, write_speedup_csv

logger = logging.getLogger(__name__)


def _worker_counts(text: str) -> List[int]:
    try:
        counts = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"worker counts must be comma-separated integers, got {text!r}")
    if not counts or min(counts) < 1:
        raise argparse.ArgumentTypeError("worker counts must be positive")
    return counts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adg", description=settings.APP_NAME)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--output-dir", default=None, help="defaults to $ADG_OUTPUT_DIR")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("config")
    run.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    run.add_argument("--backend", choices=("simulated", "threaded"), default=None)

    speedup = sub.add_parser("speedup", help="time to an objective target across worker counts")
    speedup.add_argument("config")
    speedup.add_argument("--workers", type=_worker_counts, required=True)
    speedup.add_argument("--target", type=float, default=None)
    speedup.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    speedup.add_argument("--backend", choices=("simulated", "threaded"), default=None)

    validate = sub.add_parser("validate-config", help="check a config file and exit")
    validate.add_argument("config")
    validate.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.override)
    result = run_experiment(config, args.output_dir, args.backend)
    summary = result.summary
    print(f"{config.algorithm}: {summary.epoch} epochs, train objective {summary.train_objective:.6g}, "
          f"{summary.comm_sends} sends -> {result.output_dir}")
    return 0


def cmd_speedup(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.override)
    rows = measure_speedup(config, args.workers, args.target, args.backend)
    path = write_speedup_csv(rows, output_dir_for(config, args.output_dir) / SPEEDUP_FILE)
    for row in rows:
        if row.censored:
            status = "censored"
        else:
            speedup = "n/a" if row.speedup is None else f"{row.speedup:.3g}"
            status = f"{row.time_to_target:g} {row.time_unit}, speedup {speedup}"
        print(f"m={row.workers}: {status}")
    print(f"-> {path}")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.override)
    print(f"{args.config}: ok ({config.algorithm}, m={config.m}, {config.data.source})")
    return 0


COMMANDS = {"run": cmd_run, "speedup": cmd_speedup, "validate-config": cmd_validate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except AdgError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
