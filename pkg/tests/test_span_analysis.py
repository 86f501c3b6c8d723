import numpy as np
import pytest

from oclb.errors import BudgetExceededError
from oclb.span_analysis import (
    SpanState,
    adversarial_average,
    advance,
    block_support_audit,
    curve_exceedances,
    expected_progress_exact,
    expected_progress_mc,
    g_value,
    greedy_schedule,
    jensen_bound_check,
    progress_bound,
    progress_curve,
    progress_paths,
    support_audit,
    window_size,
)


def test_window_size():
    assert [window_size(n) for n in (1, 2, 3, 4, 9)] == [1, 1, 1, 2, 4]


def test_advance_walks_through_owned_couplings():
    owners = (1, 1, 2)
    state = advance(SpanState.start(2, 4), 1, owners)
    assert state.ell == 3
    assert state.t == 1
    assert advance(state, 2, owners).ell == 3
    assert advance(SpanState.start(2, 4), 2, owners).ell == 1


def test_advance_uses_only_recent_window():
    owners = (1, 2, 3, 4)
    state = SpanState.start(4, 5)
    for i in (1, 3):
        state = advance(state, i, owners)
    assert state.window == (1, 3)
    assert state.ell == 2
    state = advance(state, 2, owners)
    # window is now (3, 2): couplings 2 and 3 go through
    assert state.ell == 4


def test_progress_paths_matches_single_run(rng):
    n, d, steps = 4, 12, 30
    owners = rng.integers(1, n + 1, size=(20, d - 1))
    schedules = rng.integers(1, n + 1, size=(20, steps))
    history = progress_paths(owners, schedules, n, d)
    assert history.shape == (steps + 1, 20)
    for k in range(20):
        state = SpanState.start(n, d)
        expected = [state.ell]
        for i in schedules[k]:
            state = advance(state, i, owners[k])
            expected.append(state.ell)
        assert list(history[:, k]) == expected


def test_exact_progress_small_case():
    assert expected_progress_exact(2, 3, [1]) == pytest.approx(1.5)
    assert expected_progress_exact(2, 3, []) == 1.0


def test_exact_progress_budget(monkeypatch):
    from oclb.config import settings

    monkeypatch.setattr(settings, "exhaustive_budget", 10)
    with pytest.raises(BudgetExceededError):
        expected_progress_exact(3, 5, [1, 2])


def test_uniform_curve_respects_bound():
    curve = progress_curve(4, 20, 40, "uniform", 2000, seed=3)
    assert list(curve["T"]) == list(range(1, 41))
    assert curve["certified"].all()
    assert curve.iloc[0]["mean_ell"] == 1.0
    assert curve_exceedances(curve).empty


def test_round_robin_is_not_certified():
    curve = progress_curve(4, 20, 10, "round-robin", 50, seed=3)
    assert not curve["certified"].any()


@pytest.mark.parametrize("n", [2, 4, 8])
def test_uniform_bound_holds_on_long_horizons(n):
    uniform = progress_curve(n, 40, 200, "uniform", 10_000, seed=n)
    assert uniform["certified"].all()
    assert curve_exceedances(uniform, sigmas=4.0).empty

    fixed = progress_curve(n, 40, 200, "round-robin", 500, seed=n)
    assert not fixed["certified"].any()
    assert len(fixed) == 200


def test_curve_is_seeded():
    a = progress_curve(3, 10, 15, "uniform", 100, seed=11)
    b = progress_curve(3, 10, 15, "uniform", 100, seed=11)
    assert a.equals(b)


def test_mc_estimate_matches_last_row():
    estimate = expected_progress_mc(4, 20, 10, "uniform", 500, seed=5)
    curve = progress_curve(4, 20, 10, "uniform", 500, seed=5)
    assert estimate.mean == curve.iloc[-1]["mean_ell"]
    assert estimate.bound == progress_bound(4, 10)


def test_bad_schedule_name():
    with pytest.raises(ValueError):
        progress_curve(4, 20, 10, "zigzag", 10, seed=0)


@pytest.mark.parametrize("n, T_max", [(2, 6), (3, 4)])
def test_adversarial_average_stays_under_bound(n, T_max):
    for T in range(1, T_max + 1):
        result = adversarial_average(n, 3, T)
        assert result.max_average <= result.bound + 1e-12
        assert len(result.worst_schedule) == T - 1


def test_adversarial_average_first_query():
    result = adversarial_average(3, 3, 2)
    assert result.max_average == pytest.approx(4.0 / 3.0)


def test_adversarial_average_single_query_budget():
    result = adversarial_average(2, 3, 1)
    assert result.max_average == 1.0
    assert result.bound == 1.0
    assert result.worst_schedule == ()


def test_greedy_schedule_outruns_bound():
    owners = np.random.default_rng(0).integers(1, 9, size=19)
    schedule, history = greedy_schedule(owners, 10, 8, 20)
    assert len(schedule) == 9
    assert history[-1] >= 10
    assert history[-1] > progress_bound(8, 10)


def test_g_value():
    assert g_value(0.5, 10, 2) == pytest.approx(0.5 ** 6)
    assert g_value(0.5, 10, 10) == 0.0
    assert np.allclose(g_value(0.5, 4, np.array([0.0, 5.0])), [0.25, 0.0])
    with pytest.raises(ValueError):
        g_value(1.0, 4, 1)


def test_jensen_bound_check(rng):
    verdict = jensen_bound_check(0.8, 40, rng.integers(1, 10, size=500))
    assert verdict.passed
    with pytest.raises(ValueError):
        jensen_bound_check(0.8, 4, [3.0, 4.0])


def test_support_audit():
    owners, n, d = (1, 1, 2), 2, 4
    first = np.zeros(d)
    final = np.array([0.3, 0.2, 0.1, 0.05])
    assert support_audit([first], [1], final, owners, n, d).passed

    leaky = np.array([0.1, 0.2, 0.0, 0.0])
    verdict = support_audit([leaky], [1], final, owners, n, d)
    assert not verdict.passed
    assert verdict.step == 1

    verdict = support_audit([first], [2], final, owners, n, d)
    assert not verdict.passed
    assert verdict.step == 2


def test_block_support_audit():
    n, d = 2, 3
    zero = np.zeros(4 * d)
    final = np.zeros(4 * d)
    # after querying 1, blocks with j_1 = 1 (ranks 0 and 1) may fill coordinate 2
    final[[0, 1, 3, 4]] = 0.5
    assert block_support_audit([zero], [1], final, n, d).passed
    final[7] = 0.5
    assert not block_support_audit([zero], [1], final, n, d).passed
