"""Subcommands of the ``oclb`` CLI, one module each.

Every module exposes ``register(subparsers, parents)`` and ``run(args, config, jobs)``.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, List, TypeVar

from oclb.experiment import ExperimentConfig
from oclb.optimizers import OptimizerTrace, get_optimizer
from oclb.span_analysis import window_size

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def output_dir(config: ExperimentConfig) -> Path:
    path = Path(config.experiment.output)
    path.mkdir(parents=True, exist_ok=True)
    return path


def run_parallel(func: Callable[[T], R], items: Iterable[T], jobs: int) -> List[R]:
    """Map over independent runs; results come back in input order."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))


def launch_optimizer(name: str, instance, config: ExperimentConfig, seed: int, record_points: bool = False) -> OptimizerTrace:
    """Run one optimizer with the hyperparameters of its config section."""
    runner = get_optimizer(name)
    if name == "gd":
        return runner(instance, config.gd.passes, seed=seed, step_size=config.gd.step_size, record_points=record_points)
    if name == "agd":
        return runner(instance, config.agd.passes, seed=seed, record_points=record_points)
    if name == "newton_full":
        return runner(instance, seed=seed, record_points=record_points)
    if name == "subsampled_newton":
        section = config.subsampled_newton
        return runner(
            instance,
            min(section.sample_size, window_size(instance.n)),
            section.steps,
            seed=seed,
            regularizer=section.regularizer,
            step_size=section.step_size,
            rank=section.rank,
            record_points=record_points,
        )
    if name == "svrg":
        section = config.svrg
        return runner(
            instance, section.epochs, seed=seed, inner_steps=section.inner_steps,
            step_size=section.step_size, record_points=record_points,
        )
    if name == "lissa":
        section = config.lissa
        return runner(
            instance, section.outer_steps, section.neumann_depth, seed=seed,
            step_size=section.step_size, record_points=record_points,
        )
    # adaptive_greedy: as many steps as a gd run has passes
    return runner(instance, config.gd.passes, seed=seed, record_points=record_points)
