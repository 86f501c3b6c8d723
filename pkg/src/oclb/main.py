"""Main entry point for the ``oclb`` command line."""

import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from oclb import __version__
from oclb.commands import block_audit, export, race, resist, simulate_span, verify_instance
from oclb.config import settings
from oclb.errors import OracleTestbedError, UsageError
from oclb.experiment import ExperimentConfig, load_config, with_overrides

logger = logging.getLogger(__name__)

COMMANDS = [verify_instance, simulate_span, race, resist, block_audit, export]


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Experiment INI file (a run manifest works too)")
    common.add_argument("--seed", type=int, help="Root seed, overrides [experiment] root_seed")
    common.add_argument("--out", help="Output directory, overrides [experiment] output")
    common.add_argument("--jobs", type=int, help="Worker threads (default: OCLB_JOBS or 1)")
    common.add_argument("--log-level", default=None, help="Logging level (default: OCLB_LOG_LEVEL or INFO)")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="oclb",
        description="Lower-bound testbed for second-order finite-sum optimization",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", metavar="<subcommand>", required=True)
    for command in COMMANDS:
        command.register(subparsers, [common])
    return parser


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit code.

    0 on success, 1 when an invariant is violated or the run fails unexpectedly
    (for example an unwritable output directory), 2 on usage errors.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (None, 0) else 2

    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    try:
        config = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None and args.seed < 0:
            raise UsageError(f"--seed must be a non-negative integer, got {args.seed}")
        config = with_overrides(config, seed=args.seed, out=args.out)
        jobs = args.jobs if args.jobs is not None else settings.jobs
        if jobs < 1:
            raise UsageError(f"--jobs must be >= 1, got {jobs}")
        logger.info("oclb %s: %s (root seed %d, %d jobs)", __version__, args.command, config.experiment.root_seed, jobs)
        args.handler(args, config, jobs)
    except OracleTestbedError as e:
        logger.error("%s: %s", type(e).__name__, e.detail)
        return e.exit_code
    except ValidationError as e:
        logger.error("invalid parameters: %s", e)
        return 2
    except Exception as e:
        logger.exception("%s failed: %s", args.command, e)
        return 1
    return 0


def run() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    run()
