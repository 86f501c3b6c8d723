import numpy as np
import pytest

from oclb.bounds import thm1_envelope
from oclb.chain_instance import ChainQuadratic
from oclb.errors import FrameExtensionError, IllegalEvaluationError
from oclb.flattened_instance import (
    FlattenedParams,
    OrthonormalFrame,
    ZeroCallback,
    choose_radius,
    draw_orthonormal,
    eval_flattened,
    extend_orthonormal,
    flattened_optimum_bracket,
    make_callback,
    phi,
    resist,
)
from oclb.seeding import make_rng


def test_phi_pieces():
    assert phi(1.0, 0.5) == (0.0, 0.0, 0.0)
    value, first, second = phi(1.0, 1.5)
    assert value == pytest.approx(0.5)
    assert first == pytest.approx(2.0)
    assert second == 4.0
    value, first, second = phi(1.0, -3.0)
    assert value == pytest.approx(7.0)
    assert first == pytest.approx(-6.0)
    assert second == 2.0


def test_phi_property_suite(rng):
    r = rng.uniform(0.0, 2.0, size=100_000)
    z = rng.uniform(-6.0, 6.0, size=100_000)
    value, first, second = phi(r, z)
    gap = z ** 2 - value
    assert np.all(gap >= -1e-9)
    assert np.all(gap <= 2.0 * r ** 2 + 1e-9)
    assert np.all(second >= 0.0)
    assert np.all(second <= 4.0)
    # first derivative is 4-Lipschitz
    order = np.argsort(z[:1000])
    zs, fs = z[:1000][order], phi(1.0, z[:1000][order])[1]
    slopes = np.abs(np.diff(fs)) / np.maximum(np.diff(zs), 1e-300)
    assert np.all(slopes <= 4.0 + 1e-9)


@pytest.mark.parametrize("r", [0.1, 1.0, 3.7])
def test_phi_is_c1_at_breakpoints(r):
    h = 1e-7
    breaks = np.array([r, 2.0 * r, -r, -2.0 * r])
    lv, l1, l2 = phi(r, breaks - h)
    rv, r1, r2 = phi(r, breaks + h)
    # pieces are quadratic: a first-order shift lands within 2h^2 of each limit
    assert np.allclose(lv + h * l1, rv - h * r1, rtol=0.0, atol=1e-9)
    assert np.allclose(l1 + h * l2, r1 - h * r2, rtol=0.0, atol=1e-9)
    value, first, _ = phi(r, breaks)
    assert np.allclose(value, lv + h * l1, rtol=0.0, atol=1e-9)
    assert np.allclose(first, l1 + h * l2, rtol=0.0, atol=1e-9)


def test_choose_radius_is_feasible():
    for T in (2, 4, 8, 16):
        params = FlattenedParams(mu=32.0, lam=1.0, T=T)
        assert params.d == 2 * T
        assert params.r == pytest.approx(choose_radius(32.0, 1.0, T))
        assert params.displacement_bound <= params.q ** T / 2.0


def test_params_reject_small_mu():
    with pytest.raises(ValueError):
        FlattenedParams(mu=8.0, lam=1.0, T=4)
    with pytest.raises(ValueError):
        FlattenedParams(mu=32.0, lam=1.0, T=4, d=7)


def test_identity_frame_reduces_to_chain_quadratic(rng):
    T = 5
    params = FlattenedParams(mu=32.0, lam=1.0, T=T, r=0.0)
    frame = OrthonormalFrame(vectors=np.eye(2 * T)[:T])
    quadratic = ChainQuadratic(alpha=params.lam * (params.kappa - 1.0), beta=params.lam, d=T)
    for _ in range(5):
        x = rng.standard_normal(T)
        w = np.concatenate([x, np.zeros(T)])
        response = eval_flattened(params, frame, w)
        assert response.value == pytest.approx(quadratic.value(x), rel=1e-12)
        assert np.allclose(response.gradient[:T], quadratic.gradient(x))
        assert np.allclose(response.gradient[T:], 0.0)


def test_gradient_at_zero_points_along_first_direction():
    params = FlattenedParams(mu=32.0, lam=1.0, T=4)
    vectors = np.zeros((4, params.d))
    vectors[np.arange(4), [3, 0, 5, 1]] = 1.0
    frame = OrthonormalFrame(vectors=vectors)
    grad = eval_flattened(params, frame, np.zeros(params.d)).gradient
    assert np.allclose(grad, -(params.lam * (params.kappa - 1.0) / 4.0) * vectors[0])


def test_flattened_spectrum(rng):
    params = FlattenedParams(mu=40.0, lam=1.0, T=6)
    frame = np.zeros((0, params.d))
    for _ in range(params.T):
        frame = np.vstack([frame, draw_orthonormal(frame, rng, params.d)])
    frame = OrthonormalFrame(vectors=frame)
    for _ in range(10):
        w = 3.0 * rng.standard_normal(params.d)
        evals = np.linalg.eigvalsh(eval_flattened(params, frame, w).hessian.to_dense())
        assert evals.min() >= params.lam - 1e-8
        assert evals.max() <= params.mu + 1e-8


def test_partial_frame_rejects_points_outside_span():
    params = FlattenedParams(mu=32.0, lam=1.0, T=4)
    frame = OrthonormalFrame(vectors=np.eye(params.d)[:2])
    w = np.zeros(params.d)
    w[1] = 0.3
    with pytest.raises(IllegalEvaluationError):
        eval_flattened(params, frame, w)
    w[1] = 0.0
    w[0] = 0.3
    eval_flattened(params, frame, w)


def _complete(frame, w, rng, T):
    protected = extend_orthonormal(frame, w)
    extra = frame
    while extra.shape[0] < T:
        v = draw_orthonormal(protected, rng, frame.shape[1])
        protected = np.vstack([protected, v])
        extra = np.vstack([extra, v])
    return OrthonormalFrame(vectors=extra)


@pytest.mark.parametrize("T", [4, 8])
def test_partial_frame_response_is_completion_free(T, rng):
    params = FlattenedParams(mu=32.0, lam=1.0, T=T)
    for k in range(1, T):
        frame = np.zeros((0, params.d))
        for _ in range(k - 1):
            frame = np.vstack([frame, draw_orthonormal(frame, rng, params.d)])
        w = rng.standard_normal(params.d) * 0.3
        if k > 1:
            w += frame.T @ rng.uniform(-2.0, 2.0, size=k - 1)
        newest = draw_orthonormal(extend_orthonormal(frame, w), rng, params.d)
        frame = np.vstack([frame, newest])

        partial = eval_flattened(params, OrthonormalFrame(vectors=frame), w)
        first = eval_flattened(params, _complete(frame, w, make_rng(100 + k), T), w)
        second = eval_flattened(params, _complete(frame, w, make_rng(200 + k), T), w)
        for full in (first, second):
            assert full.value == pytest.approx(partial.value, rel=0.0, abs=1e-12)
            assert np.allclose(full.gradient, partial.gradient, rtol=0.0, atol=1e-12)
            assert np.allclose(full.hessian.to_dense(), partial.hessian.to_dense(), rtol=0.0, atol=1e-12)


def test_orthonormal_helpers(rng):
    basis = extend_orthonormal(np.zeros((0, 4)), np.array([1.0, 1.0, 0.0, 0.0]))
    assert basis.shape == (1, 4)
    assert extend_orthonormal(basis, np.array([2.0, 2.0, 0.0, 0.0])).shape == (1, 4)
    v = draw_orthonormal(basis, rng, 4)
    assert abs(v @ basis[0]) < 1e-12
    assert np.linalg.norm(v) == pytest.approx(1.0)
    with pytest.raises(FrameExtensionError):
        draw_orthonormal(np.eye(3), rng, 3)


def test_optimum_bracket(rng):
    for T in (4, 8):
        params = FlattenedParams(mu=32.0, lam=1.0, T=T)
        frame = np.zeros((0, params.d))
        for _ in range(T):
            frame = np.vstack([frame, draw_orthonormal(frame, rng, params.d)])
        bracket = flattened_optimum_bracket(params, OrthonormalFrame(vectors=frame))
        assert bracket.displacement <= bracket.bound + 1e-9
        assert bracket.norm_sq <= bracket.norm_sq_bound
        assert bracket.gradient_norm <= 1e-10


@pytest.mark.parametrize("callback", ["gd", "nesterov", "damped_newton"])
@pytest.mark.parametrize("T", [4, 8, 16])
def test_resisting_oracle(callback, T):
    params = FlattenedParams(mu=32.0, lam=1.0, T=T)
    for seed in range(5):
        result = resist(make_callback(callback, 32.0, 1.0), params, seed)
        assert abs(result.final_inner) <= 1e-10
        assert result.final_ratio >= thm1_envelope(32.0, 1.0, T)
        assert len(result.samples) == T
        assert result.bracket.displacement <= result.bracket.bound + 1e-9


def test_resist_is_deterministic():
    params = FlattenedParams(mu=32.0, lam=1.0, T=4)
    a = resist(make_callback("nesterov", 32.0, 1.0), params, 9)
    b = resist(make_callback("nesterov", 32.0, 1.0), params, 9)
    assert np.array_equal(a.frame.vectors, b.frame.vectors)
    assert [s.ratio for s in a.samples] == [s.ratio for s in b.samples]


def test_zero_callback_keeps_ratio_one():
    params = FlattenedParams(mu=32.0, lam=1.0, T=4)
    result = resist(ZeroCallback(), params, 0)
    assert all(s.ratio == pytest.approx(1.0) for s in result.samples)
