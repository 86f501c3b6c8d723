import numpy as np
import pytest

from oclb.bounds import ProblemParams
from oclb.chain_instance import (
    ChainInstance,
    ChainQuadratic,
    average_objective,
    closed_form_optimum,
    dump_chain,
    eval_component,
    eval_signflip,
    load_chain,
    sample_chain,
    sample_owners,
    sample_signflip,
    signflip_estimate,
    signflip_floor,
    signflip_optimum,
    tridiagonal_solve_optimum,
)
from oclb.errors import InvalidQueryError
from oclb.oracle import dense_average_hessian
from oclb.seeding import make_rng


@pytest.mark.parametrize("d", [3, 50, 500])
@pytest.mark.parametrize("kappa", [1.5, 3.0, 100.0])
def test_closed_form_matches_tridiagonal_solve(d, kappa):
    quadratic = ChainQuadratic(alpha=kappa - 1.0, beta=1.0, d=d)
    closed = quadratic.closed_form_optimum()
    assert np.allclose(closed, tridiagonal_solve_optimum(quadratic), rtol=0.0, atol=1e-10)
    assert closed[0] == pytest.approx(quadratic.q)


def test_instance_optimum_crosscheck(chain):
    assert np.allclose(closed_form_optimum(chain), tridiagonal_solve_optimum(chain), rtol=0.0, atol=1e-10)
    q = chain.params.rates.q
    assert np.allclose(chain.optimum(), q ** np.arange(1, chain.dim + 1))


def test_spectrum_of_components_and_average():
    params = ProblemParams(mu=20.0, lam=2.0, n=3, d=30)
    for seed in range(20):
        instance = sample_chain(params, seed)
        w = np.zeros(params.d)
        for i in range(1, params.n + 1):
            evals = np.linalg.eigvalsh(instance.component(i, w).hessian.to_dense())
            assert evals.min() >= params.lam - 1e-8
            assert evals.max() <= params.mu + 1e-8
        evals = np.linalg.eigvalsh(dense_average_hessian(instance, w))
        assert evals.min() >= params.lam - 1e-8
        assert evals.max() <= params.smoothness_of_average + 1e-8


def test_components_average_to_objective(chain, rng):
    w = rng.standard_normal(chain.dim)
    values = [eval_component(chain, i, w).value for i in range(1, chain.n + 1)]
    assert np.mean(values) == pytest.approx(average_objective(chain, w), rel=1e-12)
    grads = [eval_component(chain, i, w).gradient for i in range(1, chain.n + 1)]
    assert np.allclose(np.mean(grads, axis=0), chain.gradient(w))


def test_gradient_at_zero_only_touches_first_coordinate(chain):
    p = chain.params
    for i in range(1, chain.n + 1):
        grad = eval_component(chain, i, np.zeros(chain.dim)).gradient
        expected = np.zeros(chain.dim)
        expected[0] = -(p.mu - p.lam) / (4.0 * p.n)
        assert np.allclose(grad, expected)


def test_gradient_matches_finite_differences(chain, rng):
    w = rng.standard_normal(chain.dim)
    h = 1e-6
    for i in (1, chain.n):
        grad = eval_component(chain, i, w).gradient
        for k in (0, chain.dim // 2, chain.dim - 1):
            e = np.zeros(chain.dim)
            e[k] = h
            fd = (chain.component(i, w + e).value - chain.component(i, w - e).value) / (2 * h)
            assert fd == pytest.approx(grad[k], rel=1e-5, abs=1e-7)


def test_hessian_matches_gradient_differences(chain, rng):
    w = rng.standard_normal(chain.dim)
    v = rng.standard_normal(chain.dim)
    response = chain.component(2, w)
    diff = chain.component(2, w + v).gradient - response.gradient
    assert np.allclose(response.hessian.matvec(v), diff)


def test_component_couplings_follow_owners(chain):
    for i in range(1, chain.n + 1):
        assert set(chain.edges_of(i)) == {l for l, j in enumerate(chain.block_owners) if j == i}


def test_eval_component_errors(chain):
    with pytest.raises(InvalidQueryError):
        eval_component(chain, 0, np.zeros(chain.dim))
    with pytest.raises(InvalidQueryError):
        eval_component(chain, 1, np.zeros(3))


def test_sampling_is_reproducible(params):
    a = sample_chain(params, 11)
    b = sample_chain(params, 11)
    assert a.block_owners == b.block_owners
    assert all(1 <= j <= params.n for j in a.block_owners)
    with pytest.raises(ValueError):
        sample_chain(ProblemParams(mu=9.0, lam=1.0, n=4, d=1), 0)


def test_owner_draws_are_uniform_per_slot():
    owners = sample_owners(4, 6, make_rng(2024), draws=100_000)
    assert owners.shape == (100_000, 6)
    for slot in owners.T:
        freq = np.bincount(slot, minlength=5)[1:] / slot.size
        assert np.all(np.abs(freq - 0.25) <= 0.01)


def test_sample_chain_uses_owner_stream(params):
    chain = sample_chain(params, 11)
    expected = sample_owners(params.n, params.d - 1, make_rng(11))[0]
    assert chain.block_owners == tuple(int(j) for j in expected)


def test_owner_validation(params):
    with pytest.raises(ValueError):
        ChainInstance.from_owners(params, [1] * (params.d - 2))
    with pytest.raises(ValueError):
        ChainInstance.from_owners(params, [params.n + 1] * (params.d - 1))


def test_dump_and_load(chain):
    text = dump_chain(chain)
    loaded = load_chain(text)
    assert loaded.block_owners == chain.block_owners
    assert loaded.params == chain.params
    assert dump_chain(loaded) == text


def test_signflip_instance():
    instance = sample_signflip(lam=2.0, n=5, seed=4, d=3)
    w_star = signflip_optimum(instance)
    assert w_star[0] == pytest.approx(sum(instance.signs) / (5 * 2.0))
    assert np.allclose(w_star[1:], 0.0)
    response = eval_signflip(instance, 1, np.zeros(3))
    assert response.gradient[0] == -instance.signs[0]
    assert np.allclose(response.hessian.to_dense(), 2.0 * np.eye(3))
    full = signflip_estimate(instance, range(1, 6))
    assert np.allclose(full, w_star)


def test_signflip_floor():
    assert signflip_floor(5, 2) == pytest.approx(0.6)
    assert all(signflip_floor(n, n // 2) >= 0.5 for n in range(1, 20))
    with pytest.raises(ValueError):
        signflip_floor(4, 5)
