import numpy as np
import pytest

from oclb.block_instance import (
    BlockInstance,
    all_tuples,
    block_optimum,
    eval_block_component,
    per_block_heads,
    rank_tuple,
    tuple_rank,
)
from oclb.bounds import ProblemParams
from oclb.errors import BudgetExceededError, InvalidQueryError


@pytest.fixture
def block():
    return BlockInstance(params=ProblemParams(mu=9.0, lam=1.0, n=2, d=3))


def test_tuple_rank_order():
    assert tuple_rank((1, 1), 2) == 0
    assert tuple_rank((1, 2), 2) == 1
    assert tuple_rank((2, 1), 2) == 2
    assert tuple_rank((2, 2), 2) == 3
    for rank, j in enumerate(all_tuples(3, 4)):
        assert tuple_rank(j, 3) == rank
        assert rank_tuple(rank, 3, 4) == j


def test_tuple_rank_rejects_out_of_range():
    with pytest.raises(ValueError):
        tuple_rank((0, 1), 2)
    with pytest.raises(ValueError):
        rank_tuple(4, 2, 3)


def test_dimensions(block):
    assert block.block_count == 4
    assert block.total_dimension == 12
    assert block.dim == 12
    assert block.chain(2).block_owners == (2, 1)


def test_dimension_cap():
    with pytest.raises(BudgetExceededError):
        BlockInstance(params=ProblemParams(mu=9.0, lam=1.0, n=4, d=8))


def test_optimum_tiles_chain_optimum(block):
    w_star = block.chain(0).optimum()
    u_star = block_optimum(block)
    assert u_star.shape == (12,)
    assert np.allclose(block.blocks(u_star), np.tile(w_star, (4, 1)))
    assert np.linalg.norm(block.gradient(u_star)) < 1e-12
    assert block.excess(u_star) == pytest.approx(0.0, abs=1e-15)


def test_components_average_to_objective(block, rng):
    for _ in range(5):
        u = rng.standard_normal(block.dim)
        responses = [eval_block_component(block, i, u) for i in range(1, block.n + 1)]
        assert np.mean([r.value for r in responses]) == pytest.approx(block.objective(u), rel=1e-12)
        assert np.allclose(np.mean([r.gradient for r in responses], axis=0), block.gradient(u))


def test_component_hessian_is_block_diagonal(block, rng):
    u = rng.standard_normal(block.dim)
    dense = eval_block_component(block, 1, u).hessian.to_dense()
    d = block.d
    for a in range(block.block_count):
        for b in range(block.block_count):
            if a != b:
                assert not dense[a * d:(a + 1) * d, b * d:(b + 1) * d].any()
    evals = np.linalg.eigvalsh(dense)
    assert evals.min() >= block.lam - 1e-10
    assert evals.max() <= block.mu + 1e-10


def test_norm_identity(block, rng):
    u = rng.standard_normal(block.dim)
    assert np.sum(block.blocks(u) ** 2) == pytest.approx(float(u @ u))


def test_rejects_bad_queries(block):
    with pytest.raises(InvalidQueryError):
        eval_block_component(block, 3, np.zeros(block.dim))
    with pytest.raises(InvalidQueryError):
        eval_block_component(block, 1, np.zeros(block.dim - 1))


def test_per_block_heads():
    u = np.zeros(12)
    u[0] = 1.0
    u[4] = 1e-13
    u[5] = -0.5
    u[9:11] = 2.0
    assert per_block_heads(u, 2, 3) == [1, 3, 0, 2]
