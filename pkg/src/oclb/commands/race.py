"""``race``: optimizer traces on chain instances against the oblivious envelope."""

import argparse
import logging
from typing import Dict, List, Tuple

import pandas as pd

from oclb.bounds import ProblemParams
from oclb.chain_instance import sample_chain
from oclb.commands import launch_optimizer, output_dir, run_parallel
from oclb.errors import InvariantViolation
from oclb.experiment import ExperimentConfig, Manifest, write_manifest
from oclb.export import export_results, write_csv
from oclb.optimizers import OptimizerTrace, attach_envelopes, race_violations
from oclb.oracle import obliviousness_audit
from oclb.seeding import derive_seed
from oclb.span_analysis import iterate_support_audit

logger = logging.getLogger(__name__)

NAME = "race"
AUDIT_COLUMNS = [
    "optimizer", "mu_over_lambda", "n", "seed", "calls", "final_ratio", "exempt",
    "oblivious_audit", "support_audit", "race_violations", "diverged",
]

# (run ordinal, mu/lambda, n, experiment seed)
Cell = Tuple[int, float, int, int]


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser(
        NAME,
        parents=parents,
        help="Race the configured optimizers against the oblivious lower-bound envelope",
    )
    parser.set_defaults(handler=run)


def race_cell(cell: Cell, config: ExperimentConfig) -> Tuple[List[OptimizerTrace], List[Dict], List[str]]:
    """Run every configured optimizer on one sampled chain instance.

    Returns:
        (traces with envelopes attached, audit rows, invariant breaches)
    """
    ordinal, ratio, n, seed = cell
    root = config.experiment.root_seed
    lam = config.instance.lam
    params = ProblemParams(mu=ratio * lam, lam=lam, n=n, d=config.race.d)
    instance = sample_chain(params, derive_seed(root, "chain", ordinal))
    optimizer_seed = derive_seed(root, "optimizer", ordinal)

    traces, audits, breaches = [], [], []
    for name in config.race.optimizers:
        trace = launch_optimizer(name, instance, config, optimizer_seed, record_points=True)
        oblivious = obliviousness_audit(trace.indices, trace.declared_schedule)
        support = iterate_support_audit(trace, instance.block_owners, n, params.d)
        violations = race_violations(trace, params.mu, params.lam, n)
        label = f"{name} mu/lambda={ratio:g} n={n} seed={seed}"

        if trace.spec.oblivious and not oblivious:
            breaches.append(f"{label}: obliviousness audit failed ({oblivious.detail})")
        if trace.spec.linear_algebraic and not support:
            breaches.append(f"{label}: support audit failed ({support.detail})")
        if violations:
            breaches.append(f"{label}: ratio below envelope at calls {violations[:5]}")
        if name == "newton_full" and trace.final_ratio > config.newton.sentinel_tolerance:
            breaches.append(f"{label}: full Newton ratio {trace.final_ratio:.3e} after {trace.calls} calls")
        if trace.diverged and not trace.exempt:
            logger.warning("%s diverged", label)

        audits.append({
            "optimizer": name,
            "mu_over_lambda": ratio,
            "n": n,
            "seed": seed,
            "calls": trace.calls,
            "final_ratio": trace.final_ratio,
            "exempt": trace.exempt,
            "oblivious_audit": oblivious.passed,
            "support_audit": support.passed,
            "race_violations": len(violations),
            "diverged": trace.diverged,
        })
        trace = attach_envelopes(trace, params.mu, params.lam, n)
        traces.append(trace.model_copy(update={"seed": seed, "query_points": None}))
    return traces, audits, breaches


def run(args: argparse.Namespace, config: ExperimentConfig, jobs: int) -> None:
    section = config.race
    cells: List[Cell] = []
    for ratio in section.ratios:
        for n in section.n_values:
            for seed in config.experiment.seeds:
                cells.append((len(cells), ratio, n, seed))
    root = config.experiment.root_seed
    derived = {}
    for ordinal, *_ in cells:
        derived[f"chain:{ordinal}"] = derive_seed(root, "chain", ordinal)
        derived[f"optimizer:{ordinal}"] = derive_seed(root, "optimizer", ordinal)

    results = run_parallel(lambda cell: race_cell(cell, config), cells, jobs)

    out = output_dir(config)
    outputs, audit_rows, breaches = [], [], []
    for ratio in section.ratios:
        for n in section.n_values:
            traces = [
                trace
                for cell, (cell_traces, _, _) in zip(cells, results)
                if cell[1] == ratio and cell[2] == n
                for trace in cell_traces
            ]
            name = f"race_mu{ratio:g}_n{n}.csv"
            export_results(traces, out / name)
            outputs.append(name)
    for _, audits, cell_breaches in results:
        audit_rows.extend(audits)
        breaches.extend(cell_breaches)

    write_csv(pd.DataFrame(audit_rows, columns=AUDIT_COLUMNS), out / "race_audits.csv")
    outputs.append("race_audits.csv")
    write_manifest(out, Manifest(subcommand=NAME, config=config, derived_seeds=derived, outputs=outputs))

    logger.info("race: %d runs, %d breaches", len(audit_rows), len(breaches))
    if breaches:
        for breach in breaches:
            logger.error(breach)
        raise InvariantViolation(f"{len(breaches)} race breaches; first: {breaches[0]}")
