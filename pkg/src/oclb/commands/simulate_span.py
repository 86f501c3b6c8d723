"""``simulate-span``: Monte-Carlo frontier progress against 1 + 2(T - 1)/n."""

import argparse
import logging
from typing import List, Tuple

import pandas as pd

from oclb.commands import output_dir, run_parallel
from oclb.errors import InvariantViolation
from oclb.experiment import ExperimentConfig, Manifest, write_manifest
from oclb.export import write_csv
from oclb.seeding import derive_seed
from oclb.span_analysis import curve_exceedances, progress_curve

logger = logging.getLogger(__name__)

NAME = "simulate-span"


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser(
        NAME,
        parents=parents,
        help="Simulate the frontier index under oblivious schedules",
    )
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace, config: ExperimentConfig, jobs: int) -> None:
    section = config.span
    root = config.experiment.root_seed
    grid: List[Tuple[int, int, str]] = [
        (k, n, schedule)
        for k, (n, schedule) in enumerate((n, s) for n in section.n_values for s in section.schedules)
    ]
    seeds = {f"span:{k}": derive_seed(root, "span", k) for k, _, _ in grid}

    def simulate(cell: Tuple[int, int, str]) -> pd.DataFrame:
        k, n, schedule = cell
        logger.debug("simulate-span n=%d schedule=%s", n, schedule)
        return progress_curve(n, section.d, section.t_max, schedule, section.trials, seeds[f"span:{k}"])

    curves = run_parallel(simulate, grid, jobs)

    out = output_dir(config)
    outputs, breaches = [], []
    for (_, n, schedule), curve in zip(grid, curves):
        name = f"span_n{n}_{schedule}.csv"
        write_csv(curve, out / name)
        outputs.append(name)
        over = curve_exceedances(curve, section.sigmas)
        if over.empty:
            continue
        first = int(over["T"].iloc[0])
        if bool(curve["certified"].iloc[0]):
            logger.error("n=%d %s: mean frontier exceeds the bound by > %.1f sigma at T=%d", n, schedule, section.sigmas, first)
            breaches.append(name)
        else:
            logger.warning("n=%d %s (uncertified schedule): mean frontier exceeds the bound at T=%d", n, schedule, first)

    write_manifest(out, Manifest(subcommand=NAME, config=config, derived_seeds=seeds, outputs=outputs))
    if breaches:
        raise InvariantViolation(f"frontier bound exceeded on certified schedules: {breaches}")
