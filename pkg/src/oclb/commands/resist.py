"""``resist``: deterministic callbacks against the resisting oracle."""

import argparse
import logging
from typing import List, Tuple

import pandas as pd

from oclb.commands import output_dir, run_parallel
from oclb.errors import InvariantViolation
from oclb.experiment import ExperimentConfig, Manifest, write_manifest
from oclb.export import write_csv
from oclb.flattened_instance import FlattenedParams, ResistResult, make_callback, resist
from oclb.seeding import derive_seed

logger = logging.getLogger(__name__)

NAME = "resist"
COLUMNS = ["t", "ratio", "envelope"]
SUMMARY_COLUMNS = ["callback", "T", "seed", "final_ratio", "envelope", "inner_wT_vT", "displacement", "displacement_bound"]
INNER_TOLERANCE = 1e-10

# (callback, T, seed)
Case = Tuple[str, int, int]


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser(
        NAME,
        parents=parents,
        help="Run deterministic callbacks against the resisting oracle",
    )
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace, config: ExperimentConfig, jobs: int) -> None:
    section = config.resist
    root = config.experiment.root_seed
    cases: List[Case] = [
        (callback, T, seed)
        for T in section.t_values
        for callback in section.callbacks
        for seed in config.experiment.seeds
    ]
    derived = {f"flattened:{seed}": derive_seed(root, "flattened", seed) for seed in config.experiment.seeds}

    def play(case: Case) -> ResistResult:
        callback, T, seed = case
        params = FlattenedParams(mu=section.mu, lam=section.lam, T=T)
        algorithm = make_callback(callback, section.mu, section.lam, section.damping)
        return resist(algorithm, params, derived[f"flattened:{seed}"])

    results = run_parallel(play, cases, jobs)

    out = output_dir(config)
    outputs, summary, breaches = [], [], []
    for (callback, T, seed), result in zip(cases, results):
        frame = pd.DataFrame([s.model_dump() for s in result.samples], columns=COLUMNS)
        name = f"resist_{callback}_T{T}_seed{seed}.csv"
        write_csv(frame, out / name, footer=[f"inner_wT_vT={result.final_inner!r}"])
        outputs.append(name)

        final = result.samples[-1]
        summary.append({
            "callback": callback,
            "T": T,
            "seed": seed,
            "final_ratio": final.ratio,
            "envelope": final.envelope,
            "inner_wT_vT": result.final_inner,
            "displacement": result.bracket.displacement,
            "displacement_bound": result.bracket.bound,
        })
        if final.ratio < final.envelope:
            breaches.append(f"{callback} T={T} seed={seed}: ratio {final.ratio:.3e} < envelope {final.envelope:.3e}")
        if abs(result.final_inner) > INNER_TOLERANCE:
            breaches.append(f"{callback} T={T} seed={seed}: <w_T, v_T> = {result.final_inner:.3e}")

    write_csv(pd.DataFrame(summary, columns=SUMMARY_COLUMNS), out / "resist_summary.csv")
    outputs.append("resist_summary.csv")
    write_manifest(out, Manifest(subcommand=NAME, config=config, derived_seeds=derived, outputs=outputs))

    if breaches:
        for breach in breaches:
            logger.error(breach)
        raise InvariantViolation(f"{len(breaches)} resisting-oracle breaches; first: {breaches[0]}")
