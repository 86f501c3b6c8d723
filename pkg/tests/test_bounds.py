import math

import pytest

from oclb.bounds import (
    ProblemParams,
    boundary_coefficient,
    condition_number,
    log_thm1_envelope,
    log_thm2_envelope,
    q_factor,
    rate_constants,
    recommended_dimension,
    thm1_envelope,
    thm2_envelope,
    thm3_envelope,
    thm_call_thresholds,
)
from oclb.errors import InvalidParameterError


def test_condition_number_and_rates():
    kappa = condition_number(9.0, 1.0, 4)
    assert kappa == pytest.approx(3.0)
    assert q_factor(kappa) == pytest.approx((math.sqrt(3) - 1) / (math.sqrt(3) + 1))
    assert boundary_coefficient(kappa) == pytest.approx(math.sqrt(3))


def test_degenerate_kappa():
    with pytest.raises(InvalidParameterError):
        condition_number(1.0, 1.0, 3)
    assert condition_number(1.0, 1.0, 3, allow_degenerate=True) == 1.0
    rates = rate_constants(1.0)
    assert rates.q == 0.0
    assert rates.a_kappa == 2.0
    assert thm2_envelope(1.0, 1.0, 3, 1) == 0.0


@pytest.mark.parametrize("mu, lam, n", [(0.5, 1.0, 2), (2.0, 0.0, 2), (2.0, 1.0, 0)])
def test_condition_number_rejects_bad_parameters(mu, lam, n):
    with pytest.raises(InvalidParameterError):
        condition_number(mu, lam, n)


def test_problem_params_ordering():
    with pytest.raises(ValueError):
        ProblemParams(mu=0.5, lam=1.0, n=2, d=3)
    params = ProblemParams(mu=9.0, **{"lambda": 1.0}, n=4, d=10)
    assert params.kappa == pytest.approx(3.0)
    assert params.smoothness_of_average == pytest.approx(3.0)


def test_thm1_envelope_values():
    # kappa = 4, q = 1/3, prefactor 1/(12 * 32 * 2)
    assert thm1_envelope(32.0, 1.0, 0) == pytest.approx(1.0 / 768.0)
    assert thm1_envelope(32.0, 1.0, 1) == pytest.approx(1.0 / 768.0 / 9.0)
    with pytest.raises(InvalidParameterError):
        thm1_envelope(8.0, 1.0, 3)


def test_thm2_envelope_values():
    q = (math.sqrt(3) - 1) / (math.sqrt(3) + 1)
    prefactor = 1.0 / (2.0 * 9.0 * math.sqrt(3))
    assert thm2_envelope(9.0, 1.0, 4, 1) == pytest.approx(prefactor * q ** 4)
    assert thm2_envelope(9.0, 1.0, 4, 5) == pytest.approx(prefactor * q ** 8)
    with pytest.raises(InvalidParameterError):
        thm2_envelope(9.0, 1.0, 4, 0)


def test_envelopes_decrease():
    values = [thm2_envelope(100.0, 1.0, 16, T) for T in range(1, 50)]
    assert all(a > b for a, b in zip(values, values[1:]))
    values = [thm1_envelope(100.0, 1.0, T) for T in range(0, 20)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_log_space_for_large_exponents():
    log_value = log_thm2_envelope(9.0, 1.0, 4, 10 ** 6)
    assert math.isfinite(log_value)
    assert thm2_envelope(9.0, 1.0, 4, 10 ** 6) == pytest.approx(math.exp(log_value), abs=0.0)
    assert log_thm1_envelope(32.0, 1.0, 5) == pytest.approx(math.log(thm1_envelope(32.0, 1.0, 5)))


def test_recommended_dimension_and_block_envelope():
    assert recommended_dimension(2, 6) == 12
    assert recommended_dimension(4, 1) == 2
    with pytest.raises(InvalidParameterError):
        thm3_envelope(9.0, 1.0, 2, 6, 3)
    assert thm3_envelope(9.0, 1.0, 2, 6, 12) == thm2_envelope(9.0, 1.0, 2, 6)


def test_call_thresholds():
    low = thm_call_thresholds(ProblemParams(mu=4.0, lam=1.0, n=4, d=10))
    assert low.t1 is None
    assert low.t2 > 4

    high = thm_call_thresholds(ProblemParams(mu=100.0, lam=1.0, n=4, d=10, epsilon=1e-8), c=2.0)
    assert high.t1 is not None and high.t1 > 0
    assert high.c == 2.0
    with pytest.raises(InvalidParameterError):
        thm_call_thresholds(ProblemParams(mu=1.0, lam=1.0, n=4, d=10))
