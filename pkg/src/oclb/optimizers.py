"""Reference optimizers driven through the counted oracle.

Every optimizer declares its full index schedule before the first call (the
obliviousness audit compares the ledger against it), starts from w = 0 and
records the suboptimality ratio of the freshest iterate after every call.
"""

import logging
import math
from typing import Callable, Dict, List, Optional

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from oclb.bounds import log_thm2_envelope, thm2_envelope
from oclb.config import settings
from oclb.errors import BudgetExceededError, DegenerateInstanceError, InvalidParameterError
from oclb.oracle import CallLedger, FiniteSumInstance, OracleResponse, average_hessian, query
from oclb.seeding import make_rng
from oclb.span_analysis import window_size

logger = logging.getLogger(__name__)


class OptimizerSpec(BaseModel):
    """Name, class membership and resolved hyperparameters of one optimizer run."""

    name: str
    oblivious: bool = True
    linear_algebraic: bool = True
    params: Dict[str, Optional[float]] = Field(default_factory=dict)

    @property
    def exempt(self) -> bool:
        """Outside the oblivious linear-algebraic class, so not held to the envelope."""
        return not (self.oblivious and self.linear_algebraic)


class TraceSample(BaseModel):
    """Suboptimality ratio of the current iterate after ``calls`` oracle calls."""

    calls: int
    ratio: float


class OptimizerTrace(BaseModel):
    """Everything one optimizer run leaves behind."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    optimizer: str
    seed: int
    spec: OptimizerSpec
    samples: List[TraceSample]
    final_iterate: np.ndarray
    indices: List[int]
    declared_schedule: List[int]
    query_points: Optional[List[np.ndarray]] = None
    diverged: bool = False
    envelopes: Optional[List[float]] = None

    @property
    def exempt(self) -> bool:
        return self.spec.exempt

    @property
    def calls(self) -> int:
        return len(self.indices)

    @property
    def final_ratio(self) -> float:
        return self.samples[-1].ratio


class _Diverged(Exception):
    pass


class _Run:
    """Oracle access, ledger and ratio bookkeeping for one run."""

    def __init__(self, instance: FiniteSumInstance, record_points: bool):
        self.instance = instance
        self.ledger = CallLedger(record_points=record_points)
        self.current = np.zeros(instance.dim)
        self.reference = instance.excess(self.current)
        if not self.reference > 0.0:
            raise DegenerateInstanceError(f"F(0) - F* = {self.reference!r}; nothing to optimize")
        self.ratios: Dict[int, float] = {0: 1.0}
        self.diverged = False

    def ratio(self, w: np.ndarray) -> float:
        excess = self.instance.excess(w)
        if not np.isfinite(excess):
            return math.inf
        return max(excess, 0.0) / self.reference

    def call(self, w: np.ndarray, i: int) -> OracleResponse:
        response = query(self.instance, w, int(i), self.ledger)
        self.ratios[self.ledger.total] = self.ratio(self.current)
        return response

    def update(self, w: np.ndarray) -> None:
        """Make w the current iterate; its ratio replaces the one at the current call count."""
        self.current = np.asarray(w, dtype=float)
        ratio = self.ratio(self.current)
        self.ratios[self.ledger.total] = ratio
        if not np.isfinite(ratio) or ratio > settings.divergence_ratio:
            self.diverged = True
            raise _Diverged(f"ratio {ratio!r} after {self.ledger.total} calls")

    def full_gradient(self, w: np.ndarray) -> np.ndarray:
        n = self.instance.n
        total = np.zeros(self.instance.dim)
        for i in range(1, n + 1):
            total += self.call(w, i).gradient
        return total / n


def _execute(
    instance: FiniteSumInstance,
    spec: OptimizerSpec,
    seed: int,
    declared: List[int],
    body: Callable[[_Run], None],
    record_points: bool,
) -> OptimizerTrace:
    run = _Run(instance, record_points)
    try:
        body(run)
    except _Diverged as e:
        logger.warning("%s (seed %s) diverged: %s", spec.name, seed, e)
    samples = [TraceSample(calls=c, ratio=r) for c, r in sorted(run.ratios.items())]
    trace = OptimizerTrace(
        optimizer=spec.name,
        seed=seed,
        spec=spec,
        samples=samples,
        final_iterate=run.current,
        indices=run.ledger.indices(),
        declared_schedule=[int(i) for i in declared],
        query_points=run.ledger.points() if record_points else None,
        diverged=run.diverged,
    )
    logger.debug("%s (seed %s): %d calls, final ratio %.3e", spec.name, seed, trace.calls, trace.final_ratio)
    return trace


def _passes(n: int, count: int) -> List[int]:
    return list(range(1, n + 1)) * count


def run_gd(
    instance: FiniteSumInstance,
    passes: int,
    seed: int = 0,
    step_size: Optional[float] = None,
    record_points: bool = False,
) -> OptimizerTrace:
    """Full-gradient descent, one round-robin pass of n calls per step (default step 1/mu)."""
    step = 1.0 / instance.mu if step_size is None else step_size
    spec = OptimizerSpec(name="gd", params={"passes": passes, "step_size": step})

    def body(run: _Run) -> None:
        w = np.zeros(instance.dim)
        for _ in range(passes):
            w = w - step * run.full_gradient(w)
            run.update(w)

    return _execute(instance, spec, seed, _passes(instance.n, passes), body, record_points)


def run_agd(
    instance: FiniteSumInstance,
    passes: int,
    seed: int = 0,
    record_points: bool = False,
) -> OptimizerTrace:
    """Nesterov's accelerated gradient with the constant momentum for mu/lambda."""
    root = math.sqrt(instance.mu / instance.lam)
    beta = (root - 1.0) / (root + 1.0)
    spec = OptimizerSpec(name="agd", params={"passes": passes, "momentum": beta})

    def body(run: _Run) -> None:
        x_prev = np.zeros(instance.dim)
        y = np.zeros(instance.dim)
        for _ in range(passes):
            x = y - run.full_gradient(y) / instance.mu
            y = x + beta * (x - x_prev)
            x_prev = x
            run.update(x)

    return _execute(instance, spec, seed, _passes(instance.n, passes), body, record_points)


def run_newton_full(
    instance: FiniteSumInstance,
    seed: int = 0,
    record_points: bool = False,
) -> OptimizerTrace:
    """One exact Newton step from 0 using every component's Hessian.

    The dense solve puts it outside the linear-algebraic class, so it is
    exempt from the envelope and only checked for a ratio near zero.
    """
    if instance.dim > settings.dense_limit:
        raise BudgetExceededError(f"dense Newton solve of dimension {instance.dim} exceeds the limit {settings.dense_limit}")
    spec = OptimizerSpec(name="newton_full", linear_algebraic=False)

    def body(run: _Run) -> None:
        w = np.zeros(instance.dim)
        responses = [run.call(w, i) for i in range(1, instance.n + 1)]
        gradient = np.mean([r.gradient for r in responses], axis=0)
        hessian = average_hessian([r.hessian for r in responses]).toarray()
        run.update(w - np.linalg.solve(hessian, gradient))

    return _execute(instance, spec, seed, list(range(1, instance.n + 1)), body, record_points)


def _truncated_inverse(core: sp.csr_matrix, shift: float, rank: int, g: np.ndarray) -> np.ndarray:
    """Apply (U_k S_k U_k^T + shift I)^{-1} where U_k S_k U_k^T keeps the top-k eigenpairs of ``core``.

    Eigenpairs are computed per connected component of the sparsity graph so
    that no eigenvector straddles two decoupled blocks.
    """
    count, labels = connected_components(core, directed=False)
    values, vectors = [], []
    for label in range(count):
        members = np.flatnonzero(labels == label)
        block = core[members][:, members].toarray()
        if not np.any(block):
            continue
        evals, evecs = np.linalg.eigh(block)
        for value, vector in zip(evals, evecs.T):
            full = np.zeros(core.shape[0])
            full[members] = vector
            values.append(value)
            vectors.append(full)
    out = g / shift
    if not values or rank <= 0:
        return out
    order = np.argsort(values)[::-1][:rank]
    for k in order:
        u = vectors[k]
        coeff = float(u @ g)
        out += u * (coeff / (values[k] + shift) - coeff / shift)
    return out


def run_subsampled_newton(
    instance: FiniteSumInstance,
    sample_size: int,
    steps: int,
    seed: int = 0,
    regularizer: Optional[float] = None,
    step_size: Optional[float] = None,
    rank: Optional[int] = None,
    allow_large_sample: bool = False,
    record_points: bool = False,
) -> OptimizerTrace:
    """Full gradient plus the regularized Hessian of a random subsample.

    Each step makes a full gradient pass and then s distinct Hessian calls
    (s <= max(1, floor(n/2)) unless ``allow_large_sample``), and moves
    w <- w - eta (H_S + rho I)^{-1} g. The default step
    min(1, (lambda + rho)/L_F) keeps the iteration contractive; ``rank``
    truncates H_S - lambda I to its top eigenpairs.
    """
    n = instance.n
    cap = window_size(n)
    if not 1 <= sample_size <= n:
        raise InvalidParameterError(f"sample_size must lie in [1, {n}], got {sample_size}")
    if sample_size > cap and not allow_large_sample:
        raise InvalidParameterError(f"sample_size {sample_size} exceeds max(1, floor(n/2)) = {cap}")
    rho = instance.lam if regularizer is None else regularizer
    if rho < 0:
        raise InvalidParameterError(f"regularizer must be >= 0, got {rho}")
    eta = min(1.0, (instance.lam + rho) / instance.average_smoothness) if step_size is None else step_size

    rng = make_rng(seed)
    samples = [rng.choice(n, size=sample_size, replace=False) + 1 for _ in range(steps)]
    declared: List[int] = []
    for sample in samples:
        declared.extend(range(1, n + 1))
        declared.extend(int(i) for i in sample)

    spec = OptimizerSpec(
        name="subsampled_newton",
        linear_algebraic=not allow_large_sample,
        params={"sample_size": sample_size, "steps": steps, "regularizer": rho, "step_size": eta, "rank": rank},
    )

    def body(run: _Run) -> None:
        w = np.zeros(instance.dim)
        identity = sp.identity(instance.dim, format="csc")
        for sample in samples:
            g = run.full_gradient(w)
            hessians = [run.call(w, i).hessian for i in sample]
            h_s = average_hessian(hessians)
            if rank is None:
                direction = spsolve((h_s + rho * identity).tocsc(), g)
            else:
                core = (h_s - instance.lam * identity).tocsr()
                core.eliminate_zeros()
                direction = _truncated_inverse(core, instance.lam + rho, rank, g)
            w = w - eta * np.asarray(direction).ravel()
            run.update(w)

    return _execute(instance, spec, seed, declared, body, record_points)


def run_svrg_like(
    instance: FiniteSumInstance,
    epochs: int,
    seed: int = 0,
    inner_steps: Optional[int] = None,
    step_size: Optional[float] = None,
    record_points: bool = False,
) -> OptimizerTrace:
    """Variance-reduced SGD: a snapshot pass, then uniformly sampled corrected steps."""
    n = instance.n
    m = 2 * n if inner_steps is None else inner_steps
    eta = 1.0 / (5.0 * instance.mu) if step_size is None else step_size
    rng = make_rng(seed)
    inner = [rng.integers(1, n + 1, size=m) for _ in range(epochs)]
    declared: List[int] = []
    for draws in inner:
        declared.extend(range(1, n + 1))
        declared.extend(int(i) for i in draws)
    spec = OptimizerSpec(name="svrg", params={"epochs": epochs, "inner_steps": m, "step_size": eta})

    def body(run: _Run) -> None:
        snapshot = np.zeros(instance.dim)
        for draws in inner:
            stored = {i: run.call(snapshot, i).gradient for i in range(1, n + 1)}
            mean = np.mean(list(stored.values()), axis=0)
            w = snapshot.copy()
            for i in draws:
                g = run.call(w, int(i)).gradient
                w = w - eta * (g - stored[int(i)] + mean)
                run.update(w)
            snapshot = w

    return _execute(instance, spec, seed, declared, body, record_points)


def neumann_direction(hessians, g: np.ndarray, mu: float) -> np.ndarray:
    """v/mu with v_0 = g and v_k = g + (I - H_k/mu) v_{k-1}; approximates H^{-1} g."""
    v = np.array(g, dtype=float)
    for hessian in hessians:
        v = g + v - hessian.matvec(v) / mu
    return v / mu


def run_lissa_like(
    instance: FiniteSumInstance,
    outer_steps: int,
    neumann_depth: int,
    seed: int = 0,
    step_size: Optional[float] = None,
    record_points: bool = False,
) -> OptimizerTrace:
    """Truncated Neumann-series Newton with sampled component Hessians."""
    n = instance.n
    eta = 0.5 if step_size is None else step_size
    rng = make_rng(seed)
    draws = [rng.integers(1, n + 1, size=neumann_depth) for _ in range(outer_steps)]
    declared: List[int] = []
    for sample in draws:
        declared.extend(range(1, n + 1))
        declared.extend(int(i) for i in sample)
    spec = OptimizerSpec(name="lissa", params={"outer_steps": outer_steps, "neumann_depth": neumann_depth, "step_size": eta})

    def body(run: _Run) -> None:
        w = np.zeros(instance.dim)
        for sample in draws:
            g = run.full_gradient(w)
            hessians = [run.call(w, int(i)).hessian for i in sample]
            w = w - eta * neumann_direction(hessians, g, instance.mu)
            run.update(w)

    return _execute(instance, spec, seed, declared, body, record_points)


def _edge_owners(responses: Dict[int, OracleResponse], dim: int) -> Dict[int, int]:
    """0-based coupling position -> owning component, read off the Hessian off-diagonals."""
    owners = {}
    for i, response in responses.items():
        h = response.hessian
        for r, c, v in zip(h.rows, h.cols, h.values):
            if h.basis is None and c == r + 1 and v != 0.0:
                owners[int(r)] = i
    return owners


def run_adaptive_greedy(
    instance: FiniteSumInstance,
    steps: int,
    seed: int = 0,
    record_points: bool = False,
) -> OptimizerTrace:
    """Reads the owners off a first pass, then always queries the frontier owner.

    It declares a uniform schedule it does not follow, so it fails the
    obliviousness audit and is exempt from the envelope.
    """
    n = instance.n
    rng = make_rng(seed)
    declared = list(range(1, n + 1)) + [int(i) for i in rng.integers(1, n + 1, size=steps)]
    spec = OptimizerSpec(name="adaptive_greedy", oblivious=False, params={"steps": steps})

    def body(run: _Run) -> None:
        w = np.zeros(instance.dim)
        owners = _edge_owners({i: run.call(w, i) for i in range(1, n + 1)}, instance.dim)
        for _ in range(steps):
            support = np.flatnonzero(np.abs(w) > settings.zero_tolerance)
            edge = int(support[-1]) if support.size else 0
            i = owners.get(min(edge, instance.dim - 2), 1)
            w = w - run.call(w, i).gradient / instance.mu
            run.update(w)

    return _execute(instance, spec, seed, declared, body, record_points)


OPTIMIZERS: Dict[str, Callable[..., OptimizerTrace]] = {
    "gd": run_gd,
    "agd": run_agd,
    "newton_full": run_newton_full,
    "subsampled_newton": run_subsampled_newton,
    "svrg": run_svrg_like,
    "lissa": run_lissa_like,
    "adaptive_greedy": run_adaptive_greedy,
}


def get_optimizer(name: str) -> Callable[..., OptimizerTrace]:
    if name not in OPTIMIZERS:
        raise InvalidParameterError(f"Unknown optimizer '{name}'. Available: {list(OPTIMIZERS)}")
    return OPTIMIZERS[name]


def attach_envelopes(trace: OptimizerTrace, mu: float, lam: float, n: int) -> OptimizerTrace:
    """Copy of the trace with the envelope at T = calls + 1 for every sample."""
    envelopes = [thm2_envelope(mu, lam, n, s.calls + 1) for s in trace.samples]
    return trace.model_copy(update={"envelopes": envelopes})


def race_violations(trace: OptimizerTrace, mu: float, lam: float, n: int) -> List[int]:
    """Call counts at which the ratio fell below the envelope; always empty for exempt traces."""
    if trace.exempt:
        return []
    violations = []
    for sample in trace.samples:
        log_env = log_thm2_envelope(mu, lam, n, sample.calls + 1)
        log_ratio = math.log(sample.ratio) if sample.ratio > 0 else -math.inf
        if log_ratio < log_env:
            violations.append(sample.calls)
    return violations
