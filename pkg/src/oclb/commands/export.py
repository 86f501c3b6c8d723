"""``export``: replayable instance files and Parquet copies of a run directory."""

import argparse
import logging

from oclb.bounds import ProblemParams
from oclb.chain_instance import sample_chain, write_chain
from oclb.commands import output_dir
from oclb.experiment import ExperimentConfig, Manifest, write_manifest
from oclb.export import export_directory
from oclb.seeding import derive_seed

logger = logging.getLogger(__name__)

NAME = "export"


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser(
        NAME,
        parents=parents,
        help="Write chain instance files and Parquet copies of the CSVs in the output directory",
    )
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace, config: ExperimentConfig, jobs: int) -> None:
    out = output_dir(config)
    section = config.instance
    root = config.experiment.root_seed
    params = ProblemParams(mu=section.mu, lam=section.lam, n=section.n, d=section.d, epsilon=section.epsilon)

    outputs, derived = [], {}
    for seed in config.experiment.seeds:
        derived[f"chain:{seed}"] = derive_seed(root, "chain", seed)
        name = f"instance_seed{seed}.txt"
        write_chain(sample_chain(params, derived[f"chain:{seed}"]), out / name)
        outputs.append(name)

    parquet = export_directory(out)
    outputs.extend(path.name for path in parquet)
    logger.info("export: %d instance files, %d parquet files in %s", len(config.experiment.seeds), len(parquet), out)
    write_manifest(out, Manifest(subcommand=NAME, config=config, derived_seeds=derived, outputs=outputs))
