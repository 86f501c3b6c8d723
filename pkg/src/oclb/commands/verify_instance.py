"""``verify-instance``: numeric certification of one instance family."""

import argparse
import logging
from typing import Callable, Dict, List

import numpy as np
import pandas as pd

from oclb.block_instance import BlockInstance
from oclb.bounds import ProblemParams
from oclb.chain_instance import (
    closed_form_optimum,
    sample_chain,
    sample_signflip,
    signflip_floor,
    tridiagonal_solve_optimum,
)
from oclb.commands import output_dir
from oclb.errors import InvariantViolation
from oclb.experiment import ExperimentConfig, Manifest, write_manifest
from oclb.export import write_csv
from oclb.flattened_instance import (
    FlattenedParams,
    OrthonormalFrame,
    draw_orthonormal,
    eval_flattened,
    flattened_optimum_bracket,
    phi,
)
from oclb.oracle import FiniteSumInstance, dense_average_hessian
from oclb.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

NAME = "verify-instance"
COLUMNS = ["check", "seed", "value", "tolerance", "passed"]
SPECTRUM_LIMIT = 30
PHI_SAMPLES = 100_000
SIGNFLIP_DRAWS = 4000


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser(
        NAME,
        parents=parents,
        help="Certify spectrum, optimum and decomposition of the configured instance family",
    )
    parser.set_defaults(handler=run)


def _row(check: str, seed: int, value: float, tolerance: float, passed: bool) -> Dict[str, object]:
    return {"check": check, "seed": seed, "value": float(value), "tolerance": float(tolerance), "passed": bool(passed)}


def _spectrum_rows(instance: FiniteSumInstance, seed: int, lo: float, hi_component: float, hi_average: float) -> List[Dict]:
    w = np.zeros(instance.dim)
    rows = []
    worst = 0.0
    for i in range(1, instance.n + 1):
        evals = np.linalg.eigvalsh(instance.component(i, w).hessian.to_dense())
        worst = max(worst, lo - evals.min(), evals.max() - hi_component)
    rows.append(_row("component_spectrum", seed, worst, 1e-8, worst <= 1e-8))
    evals = np.linalg.eigvalsh(dense_average_hessian(instance, w))
    excess = max(lo - evals.min(), evals.max() - hi_average)
    rows.append(_row("average_spectrum", seed, excess, 1e-8, excess <= 1e-8))
    return rows


def _decomposition_row(instance: FiniteSumInstance, seed: int, rng: np.random.Generator) -> Dict:
    w = rng.standard_normal(instance.dim)
    mean = np.mean([instance.component(i, w).value for i in range(1, instance.n + 1)])
    direct = instance.objective(w)
    error = abs(mean - direct) / max(1.0, abs(direct))
    return _row("decomposition", seed, error, 1e-12, error <= 1e-12)


def _stationarity_row(instance: FiniteSumInstance, seed: int) -> Dict:
    w_star = instance.optimum()
    grad = np.mean([instance.component(i, w_star).gradient for i in range(1, instance.n + 1)], axis=0)
    norm = float(np.linalg.norm(grad))
    return _row("gradient_at_optimum", seed, norm, 1e-10, norm <= 1e-10)


def _chain_rows(config: ExperimentConfig, seed: int) -> List[Dict]:
    section = config.instance
    params = ProblemParams(mu=section.mu, lam=section.lam, n=section.n, d=section.d, epsilon=section.epsilon)
    instance = sample_chain(params, derive_seed(config.experiment.root_seed, "chain", seed))
    rng = make_rng(derive_seed(config.experiment.root_seed, "chain", seed + 1_000_000))
    gap = float(np.max(np.abs(closed_form_optimum(instance) - tridiagonal_solve_optimum(instance))))
    rows = [_row("optimum_crosscheck", seed, gap, 1e-10, gap <= 1e-10)]
    if params.d <= SPECTRUM_LIMIT:
        rows.extend(_spectrum_rows(instance, seed, params.lam, params.mu, params.smoothness_of_average))
    rows.append(_decomposition_row(instance, seed, rng))
    rows.append(_stationarity_row(instance, seed))
    return rows


def _signflip_rows(config: ExperimentConfig, seed: int) -> List[Dict]:
    section = config.instance
    instance = sample_signflip(section.lam, section.n, derive_seed(config.experiment.root_seed, "signflip", seed), d=section.d)
    rng = make_rng(derive_seed(config.experiment.root_seed, "signflip", seed + 1_000_000))
    rows = [_decomposition_row(instance, seed, rng), _stationarity_row(instance, seed)]
    if instance.dim <= SPECTRUM_LIMIT:
        rows.extend(_spectrum_rows(instance, seed, section.lam, section.lam, section.lam))

    # Expected ratio of the posterior-mean estimate with half the signs seen, over fresh signs
    observed = section.n // 2
    signs = rng.choice(np.array([-1.0, 1.0]), size=(SIGNFLIP_DRAWS, section.n))
    unseen_sq = np.mean(signs[:, observed:].sum(axis=1) ** 2)
    total_sq = np.mean(signs.sum(axis=1) ** 2)
    measured = float(unseen_sq / total_sq)
    floor = signflip_floor(section.n, observed)
    rows.append(_row("signflip_expected_ratio", seed, measured, floor, abs(measured - floor) <= 0.1))
    return rows


def _block_rows(config: ExperimentConfig, seed: int) -> List[Dict]:
    section = config.block
    params = ProblemParams(mu=section.mu, lam=section.lam, n=section.n, d=section.d)
    instance = BlockInstance(params=params)
    rng = make_rng(derive_seed(config.experiment.root_seed, "block", seed))
    rows = []
    if instance.dim <= SPECTRUM_LIMIT:
        rows.extend(_spectrum_rows(instance, seed, params.lam, params.mu, params.smoothness_of_average))
    rows.append(_decomposition_row(instance, seed, rng))
    rows.append(_stationarity_row(instance, seed))
    u = rng.standard_normal(instance.dim)
    blocks = instance.blocks(u)
    identity = abs(float(u @ u) - float(sum(b @ b for b in blocks)))
    rows.append(_row("block_norm_identity", seed, identity, 1e-12, identity <= 1e-12 * max(1.0, float(u @ u))))
    return rows


def _flattened_rows(config: ExperimentConfig, seed: int) -> List[Dict]:
    section = config.resist
    rng = make_rng(derive_seed(config.experiment.root_seed, "flattened", seed))
    params = FlattenedParams(mu=section.mu, lam=section.lam, T=config.instance.T)
    rows = []

    r = rng.uniform(0.0, 2.0, size=PHI_SAMPLES)
    z = rng.uniform(-6.0, 6.0, size=PHI_SAMPLES)
    value, _, second = phi(r, z)
    gap = z ** 2 - value
    violations = int(np.sum((gap < -1e-9) | (gap > 2.0 * r ** 2 + 1e-9) | (second > 4.0 + 1e-9)))
    rows.append(_row("phi_properties", seed, violations, 0, violations == 0))

    frame_rows = np.zeros((0, params.d))
    for _ in range(params.T):
        frame_rows = np.vstack([frame_rows, draw_orthonormal(frame_rows, rng, params.d)])
    frame = OrthonormalFrame(vectors=frame_rows)
    worst = 0.0
    for _ in range(5):
        w = rng.standard_normal(params.d)
        evals = np.linalg.eigvalsh(eval_flattened(params, frame, w).hessian.to_dense())
        worst = max(worst, params.lam - evals.min(), evals.max() - params.mu)
    rows.append(_row("flattened_spectrum", seed, worst, 1e-8, worst <= 1e-8))

    bracket = flattened_optimum_bracket(params, frame)
    rows.append(_row("optimum_displacement", seed, bracket.displacement, bracket.bound, bracket.displacement <= bracket.bound))
    rows.append(_row("optimum_norm_sq", seed, bracket.norm_sq, bracket.norm_sq_bound, bracket.norm_sq <= bracket.norm_sq_bound))
    return rows


CHECKS: Dict[str, Callable[[ExperimentConfig, int], List[Dict]]] = {
    "chain": _chain_rows,
    "signflip": _signflip_rows,
    "block": _block_rows,
    "flattened": _flattened_rows,
}


def run(args: argparse.Namespace, config: ExperimentConfig, jobs: int) -> None:
    family = config.instance.family
    rows: List[Dict] = []
    for seed in config.experiment.seeds:
        rows.extend(CHECKS[family](config, seed))
    frame = pd.DataFrame(rows, columns=COLUMNS)

    out = output_dir(config)
    name = f"verify_{family}.csv"
    write_csv(frame, out / name)
    write_manifest(out, Manifest(subcommand=NAME, config=config, outputs=[name]))

    failed = frame[~frame["passed"]]
    logger.info("verify-instance %s: %d checks, %d failed", family, len(frame), len(failed))
    if not failed.empty:
        raise InvariantViolation(f"{len(failed)} instance checks failed: {sorted(set(failed['check']))}")
