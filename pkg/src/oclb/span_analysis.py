"""Frontier-progress combinatorics of the chain construction.

The frontier index ell only ever advances past coupling l when the owner j_l
was among the last max(1, floor(n/2)) queried indices. The helpers here
simulate that rule (one run at a time or vectorized over many trials),
enumerate it exactly for small cases, and audit recorded iterates against it.
"""

import logging
from itertools import product
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from oclb.block_instance import all_tuples
from oclb.config import settings
from oclb.errors import BudgetExceededError, InvalidParameterError, InvariantViolation
from oclb.oracle import AuditVerdict
from oclb.seeding import make_rng

logger = logging.getLogger(__name__)

SCHEDULE_KINDS = ("uniform", "round-robin")
CERTIFIED_SCHEDULES = ("uniform",)
CURVE_COLUMNS = ["T", "mean_ell", "stderr", "bound", "certified"]

Schedule = Union[str, Sequence[int]]


def window_size(n: int) -> int:
    """Number of most recent queries that can push the frontier."""
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    return max(1, n // 2)


def progress_bound(n: int, T: int) -> float:
    """Upper bound 1 + 2(T - 1)/n on the expected frontier after T - 1 queries."""
    return 1.0 + 2.0 * (T - 1) / n


class SpanState(BaseModel):
    """Frontier ell, the recent-query window and the number of queries seen."""

    model_config = ConfigDict(frozen=True)

    d: int = Field(ge=2)
    window_size: int = Field(ge=1)
    ell: int = 1
    window: Tuple[int, ...] = ()
    t: int = 0

    @classmethod
    def start(cls, n: int, d: int) -> "SpanState":
        return cls(d=d, window_size=window_size(n))


def advance(state: SpanState, i_t: int, owners: Sequence[int]) -> SpanState:
    """Push index i_t into the window and move the frontier as far as it goes.

    ell stays capped at d - 1.
    """
    window = (state.window + (int(i_t),))[-state.window_size:]
    members = set(window)
    ell = state.ell
    while ell < state.d - 1 and int(owners[ell - 1]) in members:
        ell += 1
    return state.model_copy(update={"ell": ell, "window": window, "t": state.t + 1})


def _check_dims(n: int, d: int) -> None:
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    if d < 2:
        raise InvalidParameterError(f"d must be >= 2, got {d}")


def progress_paths(owners: np.ndarray, schedules: np.ndarray, n: int, d: int) -> np.ndarray:
    """Frontier history for many (owners, schedule) pairs at once.

    Args:
        owners: (trials, d - 1) owner tuples, entries in [1, n]
        schedules: (trials, steps) query indices, or (steps,) shared by all trials
        n: Number of components
        d: Chain dimension

    Returns:
        (steps + 1, trials) array; row t is ell_{t+1}, the frontier after t queries
    """
    owners = np.atleast_2d(np.asarray(owners, dtype=np.int64))
    trials = owners.shape[0]
    schedules = np.asarray(schedules, dtype=np.int64)
    if schedules.ndim == 1:
        schedules = np.broadcast_to(schedules, (trials, schedules.size))
    steps = schedules.shape[1]
    size = window_size(n)

    counts = np.zeros((trials, n + 1), dtype=np.int64)
    ell = np.ones(trials, dtype=np.int64)
    rows = np.arange(trials)
    history = np.empty((steps + 1, trials), dtype=np.int64)
    history[0] = ell
    for t in range(steps):
        counts[rows, schedules[:, t]] += 1
        if t >= size:
            counts[rows, schedules[:, t - size]] -= 1
        while True:
            live = np.flatnonzero(ell < d - 1)
            if live.size == 0:
                break
            hit = counts[live, owners[live, ell[live] - 1]] > 0
            if not hit.any():
                break
            ell[live[hit]] += 1
        history[t + 1] = ell
    return history


def round_robin_schedule(n: int, length: int) -> np.ndarray:
    return np.arange(length, dtype=np.int64) % n + 1


def _resolve_schedule(schedule: Schedule, n: int, steps: int, trials: int, rng: np.random.Generator):
    """Schedule array and whether the frontier bound is certified for it."""
    if isinstance(schedule, str):
        if schedule == "uniform":
            return rng.integers(1, n + 1, size=(trials, steps)), True
        if schedule == "round-robin":
            return round_robin_schedule(n, steps), False
        raise InvalidParameterError(f"unknown schedule '{schedule}'. Available: {list(SCHEDULE_KINDS)}")
    fixed = np.asarray(list(schedule), dtype=np.int64)
    if fixed.size < steps:
        raise InvalidParameterError(f"schedule has {fixed.size} entries, {steps} needed")
    if fixed.size and (fixed.min() < 1 or fixed.max() > n):
        raise InvalidParameterError(f"schedule entries must lie in [1, {n}]")
    return fixed[:steps], False


class ProgressEstimate(BaseModel):
    """Monte-Carlo estimate of E[ell_T] with its bound."""

    T: int
    mean: float
    stderr: float
    bound: float
    certified: bool


def progress_curve(
    n: int,
    d: int,
    T_max: int,
    schedule: Schedule,
    trials: int,
    seed: int,
) -> pd.DataFrame:
    """Monte-Carlo E[ell_T] for T = 1..T_max over random owner tuples.

    ``uniform`` draws a fresh i.i.d. schedule per trial, the case for which
    the frontier bound holds. Round-robin and explicit sequences are fixed
    across trials and reported with ``certified = False``.

    Returns:
        DataFrame with columns T, mean_ell, stderr, bound, certified
    """
    _check_dims(n, d)
    if T_max < 1 or trials < 1:
        raise InvalidParameterError(f"need T_max >= 1 and trials >= 1, got T_max={T_max}, trials={trials}")
    rng = make_rng(seed)
    owners = rng.integers(1, n + 1, size=(trials, d - 1))
    schedules, certified = _resolve_schedule(schedule, n, T_max - 1, trials, rng)
    history = progress_paths(owners, schedules, n, d).astype(float)

    mean = history.mean(axis=1)
    if trials > 1:
        stderr = history.std(axis=1, ddof=1) / np.sqrt(trials)
    else:
        stderr = np.zeros_like(mean)
    T = np.arange(1, T_max + 1)
    return pd.DataFrame({
        "T": T,
        "mean_ell": mean,
        "stderr": stderr,
        "bound": 1.0 + 2.0 * (T - 1) / n,
        "certified": certified,
    }, columns=CURVE_COLUMNS)


def expected_progress_mc(n: int, d: int, T: int, schedule: Schedule, trials: int, seed: int) -> ProgressEstimate:
    """Monte-Carlo E[ell_T] after T - 1 queries."""
    row = progress_curve(n, d, T, schedule, trials, seed).iloc[-1]
    return ProgressEstimate(
        T=T,
        mean=float(row["mean_ell"]),
        stderr=float(row["stderr"]),
        bound=float(row["bound"]),
        certified=bool(row["certified"]),
    )


def curve_exceedances(curve: pd.DataFrame, sigmas: float = 4.0) -> pd.DataFrame:
    """Rows whose mean exceeds the bound by more than ``sigmas`` standard errors."""
    return curve[curve["mean_ell"] > curve["bound"] + sigmas * curve["stderr"]]


def _check_budget(cost: int, what: str) -> None:
    if cost > settings.exhaustive_budget:
        raise BudgetExceededError(f"{what} needs {cost} steps, budget is {settings.exhaustive_budget}")


def expected_progress_exact(n: int, d: int, schedule: Sequence[int]) -> float:
    """Exact E[ell] after the given queries, averaged over all n^{d-1} owner tuples."""
    _check_dims(n, d)
    schedule = np.asarray(list(schedule), dtype=np.int64)
    _check_budget(n ** (d - 1) * max(1, schedule.size), "exact enumeration")
    owners = np.array(list(product(range(1, n + 1), repeat=d - 1)), dtype=np.int64)
    return float(progress_paths(owners, schedule, n, d)[-1].mean())


class AdversarialResult(BaseModel):
    """Worst tuple-average of ell_T over every schedule of T - 1 queries."""

    T: int
    max_average: float
    bound: float
    worst_schedule: Tuple[int, ...]


def adversarial_average(n: int, d: int, T: int) -> AdversarialResult:
    """Exhaustive max over schedules of the tuple-average of ell_T.

    Raises:
        BudgetExceededError: when n^{T-1} * n^{d-1} * T exceeds the budget
        InvariantViolation: when the maximum exceeds 1 + 2(T - 1)/n
    """
    _check_dims(n, d)
    if T < 1:
        raise InvalidParameterError(f"T must be >= 1, got {T}")
    _check_budget(n ** (T - 1) * n ** (d - 1) * T, "adversarial enumeration")

    tuples = np.array(list(product(range(1, n + 1), repeat=d - 1)), dtype=np.int64)
    schedules = np.array(list(product(range(1, n + 1), repeat=T - 1)), dtype=np.int64).reshape(n ** (T - 1), T - 1)
    n_sched, n_tup = schedules.shape[0], tuples.shape[0]

    owners = np.tile(tuples, (n_sched, 1))
    expanded = np.repeat(schedules, n_tup, axis=0)
    final = progress_paths(owners, expanded, n, d)[-1].reshape(n_sched, n_tup).mean(axis=1)

    worst = int(np.argmax(final))
    result = AdversarialResult(
        T=T,
        max_average=float(final[worst]),
        bound=progress_bound(n, T),
        worst_schedule=tuple(int(i) for i in schedules[worst]),
    )
    if result.max_average > result.bound + 1e-12:
        raise InvariantViolation(
            f"n={n}, d={d}, T={T}: schedule {result.worst_schedule} reaches average {result.max_average} > {result.bound}"
        )
    return result


def greedy_schedule(owners: Sequence[int], T: int, n: int, d: int) -> Tuple[List[int], List[int]]:
    """Schedule that always queries the owner of the current frontier coupling.

    Returns:
        (schedule of T - 1 indices, frontier history ell_1..ell_T)
    """
    _check_dims(n, d)
    state = SpanState.start(n, d)
    schedule, history = [], [state.ell]
    for _ in range(T - 1):
        i_t = int(owners[state.ell - 1])
        schedule.append(i_t)
        state = advance(state, i_t, owners)
        history.append(state.ell)
    return schedule, history


def g_value(q: float, d: int, z):
    """g(z) = q^{2(z+1)} for z < d, 0 otherwise."""
    if not 0.0 < q < 1.0:
        raise InvalidParameterError(f"q must lie in (0, 1), got {q}")
    z = np.asarray(z, dtype=float)
    out = np.where(z < d, q ** (2.0 * (z + 1.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def jensen_bound_check(q: float, d: int, samples: Sequence[float]) -> AuditVerdict:
    """Check mean g(ell) >= g(mean ell)/2 for a sample with mean <= d/2."""
    values = np.asarray(samples, dtype=float)
    if values.size == 0 or (values < 0).any():
        raise InvalidParameterError("samples must be a non-empty set of non-negative numbers")
    mean = float(values.mean())
    if mean > d / 2.0:
        raise InvalidParameterError(f"sample mean {mean} exceeds d/2 = {d / 2.0}")
    lhs = float(np.mean(g_value(q, d, values)))
    rhs = 0.5 * q ** (2.0 * mean + 2.0)
    if lhs >= rhs * (1.0 - 1e-12):
        return AuditVerdict(passed=True, detail=f"{lhs!r} >= {rhs!r}")
    return AuditVerdict(passed=False, detail=f"{lhs!r} < {rhs!r}")


def _leak(w: np.ndarray, ell: int, d: int) -> Optional[int]:
    """1-based coordinate in (ell, d) holding a nonzero, if any; coordinate d is exempt."""
    tail = np.abs(np.asarray(w, dtype=float)[ell:d - 1])
    hits = np.flatnonzero(tail > settings.zero_tolerance)
    return int(hits[0]) + ell + 1 if hits.size else None


def support_audit(
    points: Sequence[np.ndarray],
    indices: Sequence[int],
    final: np.ndarray,
    owners: Sequence[int],
    n: int,
    d: int,
) -> AuditVerdict:
    """Check that every query point and the final iterate stay inside the frontier.

    The t-th query point is checked against ell_t and the final iterate
    against ell_{T+1}.
    """
    if len(points) != len(indices):
        raise InvalidParameterError("points and indices must have equal length")
    state = SpanState.start(n, d)
    for t, (w, i_t) in enumerate(zip(points, indices), start=1):
        coord = _leak(w, state.ell, d)
        if coord is not None:
            return AuditVerdict(passed=False, step=t, detail=f"query {t}: coordinate {coord} nonzero with ell={state.ell}")
        state = advance(state, i_t, owners)
    coord = _leak(final, state.ell, d)
    if coord is not None:
        step = len(points) + 1
        return AuditVerdict(passed=False, step=step, detail=f"final iterate: coordinate {coord} nonzero with ell={state.ell}")
    return AuditVerdict(passed=True)


def iterate_support_audit(trace, owners: Sequence[int], n: int, d: int) -> AuditVerdict:
    """Support audit of an optimizer trace recorded with query points."""
    return support_audit(trace.query_points, trace.indices, trace.final_iterate, owners, n, d)


def block_support_audit(
    points: Sequence[np.ndarray],
    indices: Sequence[int],
    final: np.ndarray,
    n: int,
    d: int,
) -> AuditVerdict:
    """Support audit run separately inside every block of a block instance."""
    tuples = all_tuples(n, d)
    stacked = [np.asarray(w, dtype=float).reshape(len(tuples), d) for w in points]
    final_blocks = np.asarray(final, dtype=float).reshape(len(tuples), d)
    for rank, owners in enumerate(tuples):
        verdict = support_audit([w[rank] for w in stacked], indices, final_blocks[rank], owners, n, d)
        if not verdict:
            return AuditVerdict(passed=False, step=verdict.step, detail=f"block {rank} {owners}: {verdict.detail}")
    return AuditVerdict(passed=True)
