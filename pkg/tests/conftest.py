"""Shared fixtures: small chain instances, seeded generators, config files."""

from pathlib import Path

import numpy as np
import pytest

from oclb.bounds import ProblemParams
from oclb.chain_instance import sample_chain
from oclb.seeding import make_rng


@pytest.fixture
def params() -> ProblemParams:
    return ProblemParams(mu=9.0, lam=1.0, n=4, d=20)


@pytest.fixture
def chain(params):
    return sample_chain(params, seed=7)


@pytest.fixture
def rng() -> np.random.Generator:
    return make_rng(12345)


@pytest.fixture
def small_config(tmp_path: Path) -> Path:
    """Experiment file with every grid shrunk to a few seconds of work."""
    out = tmp_path / "out"
    text = f"""
[experiment]
root_seed = 3
seeds = 0,1
output = {out}

[instance]
family = chain
mu = 9.0
lambda = 1.0
n = 4
d = 12

[gd]
passes = 5

[agd]
passes = 5

[subsampled_newton]
steps = 3

[svrg]
epochs = 2

[lissa]
outer_steps = 3
neumann_depth = 2

[race]
optimizers = gd,agd,subsampled_newton,svrg,lissa,newton_full
ratios = 9.0
n_values = 4
d = 12

[span]
n_values = 2
d = 10
t_max = 20
schedules = uniform
trials = 200

[resist]
t_values = 4
callbacks = gd

[block]
t_max = 3
optimizers = gd,svrg
"""
    path = tmp_path / "experiment.ini"
    path.write_text(text, encoding="utf-8")
    return path
