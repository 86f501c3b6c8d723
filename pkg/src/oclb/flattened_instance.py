"""Flattened chain in a hidden orthonormal frame and the resisting oracle.

With kappa = mu/(8 lambda) and frame v_1..v_T,

    H(w) = (lambda (kappa - 1)/8) * ( <v_1,w>^2 + sum_{i<T} phi_r(<v_i - v_{i+1}, w>)
                                      + (a - 1) phi_r(<v_T, w>) - 2 <v_1, w> )
    F(w) = H(w) + (lambda/2) ||w||^2

phi_r vanishes on [-r, r], so a query orthogonal to v_t..v_T reveals nothing
about those directions and the frame can be built lazily, one vector per query.
"""

import logging
import math
from typing import List, Optional, Protocol, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator
from scipy.optimize import minimize

from oclb.bounds import boundary_coefficient, q_factor, thm1_envelope
from oclb.config import settings
from oclb.errors import (
    FrameExtensionError,
    IllegalEvaluationError,
    InvalidParameterError,
    InvariantViolation,
    NumericMinimizationError,
)
from oclb.oracle import FiniteSumInstance, OracleResponse, StructuredHessian, suboptimality_ratio
from oclb.seeding import make_rng

logger = logging.getLogger(__name__)

RADIUS_SAFETY = 0.5
RESIDUAL_FLOOR = 1e-8
MAX_DRAWS = 100
OPTIMUM_GTOL = 1e-10
RECOMPUTE_TOL = 1e-12

ArrayLike = Union[float, np.ndarray]


def phi(r: ArrayLike, z: ArrayLike) -> Tuple[ArrayLike, ArrayLike, ArrayLike]:
    """Flattening function and its first two derivatives.

    0 on |z| <= r, 2(|z| - r)^2 on r < |z| <= 2r, z^2 - 2r^2 beyond.
    Vectorized over ``z`` (and ``r``, broadcast against it); scalars in, scalars out.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise InvalidParameterError(f"flattening radius must be >= 0, got {r}")
    z_arr = np.asarray(z, dtype=float)
    az = np.abs(z_arr)
    inner = az <= r
    middle = (~inner) & (az <= 2.0 * r)

    value = np.where(inner, 0.0, np.where(middle, 2.0 * (az - r) ** 2, z_arr ** 2 - 2.0 * r * r))
    first = np.where(inner, 0.0, np.where(middle, 4.0 * np.sign(z_arr) * (az - r), 2.0 * z_arr))
    second = np.where(inner, 0.0, np.where(middle, 4.0, 2.0))
    if np.ndim(value) == 0:
        return float(value), float(first), float(second)
    return value, first, second


def choose_radius(mu: float, lam: float, T: int) -> float:
    """Half of the largest radius meeting both feasibility constraints of the construction."""
    if mu <= 8.0 * lam:
        raise InvalidParameterError(f"the flattened construction needs mu > 8*lambda, got mu={mu}, lambda={lam}")
    if T < 2:
        raise InvalidParameterError(f"T must be >= 2, got {T}")
    q = q_factor(mu / (8.0 * lam))
    from_smoothness = math.sqrt(8.0 * lam / (T * mu))
    from_displacement = 0.5 * q ** T * math.sqrt(16.0 * lam / (T * mu))
    r = RADIUS_SAFETY * min(from_smoothness, from_displacement)
    if not r > 0.0:
        raise InvalidParameterError(f"no positive flattening radius for mu={mu}, lambda={lam}, T={T}")
    return r


class FlattenedParams(BaseModel):
    """Parameters of the flattened construction; d defaults to 2T and r to ``choose_radius``."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    mu: float = Field(gt=0)
    lam: float = Field(gt=0, alias="lambda")
    T: int = Field(ge=2)
    d: int
    r: float = Field(ge=0)

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        lam = data.get("lam", data.get("lambda"))
        if data.get("d") is None and data.get("T") is not None:
            data["d"] = 2 * int(data["T"])
        if data.get("r") is None and None not in (data.get("mu"), lam, data.get("T")):
            data["r"] = choose_radius(float(data["mu"]), float(lam), int(data["T"]))
        return data

    @model_validator(mode="after")
    def _check_feasible(self) -> "FlattenedParams":
        if self.mu <= 8.0 * self.lam:
            raise InvalidParameterError(f"mu must exceed 8*lambda, got mu={self.mu}, lambda={self.lam}")
        if self.d < 2 * self.T:
            raise InvalidParameterError(f"d must be >= 2T = {2 * self.T}, got {self.d}")
        if self.T * self.mu * self.r ** 2 / (8.0 * self.lam) > 1.0:
            raise InvalidParameterError(f"radius {self.r} breaks T mu r^2/(8 lambda) <= 1")
        if self.displacement_bound > self.q ** self.T / 2.0:
            raise InvalidParameterError(f"radius {self.r} breaks sqrt(T mu r^2/(16 lambda)) <= q^T/2")
        return self

    @property
    def kappa(self) -> float:
        return self.mu / (8.0 * self.lam)

    @property
    def q(self) -> float:
        return q_factor(self.kappa)

    @property
    def a_kappa(self) -> float:
        return boundary_coefficient(self.kappa)

    @property
    def scale(self) -> float:
        """lambda (kappa - 1)/8."""
        return self.lam * (self.kappa - 1.0) / 8.0

    @property
    def displacement_bound(self) -> float:
        return math.sqrt(self.T * self.mu * self.r ** 2 / (16.0 * self.lam))

    def anchor_coefficients(self) -> np.ndarray:
        return np.power(self.q, np.arange(1, self.T + 1, dtype=float))


class OrthonormalFrame(BaseModel):
    """Rows v_1..v_k of an orthonormal set in R^d."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    vectors: np.ndarray

    @model_validator(mode="after")
    def _check_orthonormal(self) -> "OrthonormalFrame":
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise InvalidParameterError("a frame needs at least one vector, stored as rows")
        gram = self.vectors @ self.vectors.T
        if np.max(np.abs(gram - np.eye(gram.shape[0]))) > settings.frame_tolerance:
            raise InvalidParameterError("frame vectors are not orthonormal within tolerance")
        return self

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _frame_terms(params: FlattenedParams, x: np.ndarray, complete: bool):
    """Value, gradient and Hessian core of H in frame coordinates x = V w."""
    k = x.size
    z = x[:-1] - x[1:]
    pv, p1, p2 = phi(params.r, z)

    value = x[0] ** 2 + float(np.sum(pv)) - 2.0 * x[0]
    grad = np.zeros(k)
    grad[0] += 2.0 * x[0] - 2.0
    grad[:-1] += p1
    grad[1:] -= p1

    idx = np.arange(k - 1)
    rows = [np.array([0]), idx, idx + 1, idx, idx + 1]
    cols = [np.array([0]), idx, idx + 1, idx + 1, idx]
    vals = [np.array([2.0]), p2, p2, -p2, -p2]

    if complete:
        a1 = params.a_kappa - 1.0
        bv, b1, b2 = phi(params.r, x[-1])
        value += a1 * bv
        grad[-1] += a1 * b1
        rows.append(np.array([k - 1]))
        cols.append(np.array([k - 1]))
        vals.append(np.array([a1 * b2]))

    s = params.scale
    return (
        s * value,
        s * grad,
        np.concatenate(rows).astype(np.int64),
        np.concatenate(cols).astype(np.int64),
        s * np.concatenate(vals),
    )


def eval_flattened(params: FlattenedParams, frame: OrthonormalFrame, w: np.ndarray) -> OracleResponse:
    """Response of F at w using the frame determined so far.

    With fewer than T vectors, the point must be orthogonal to the newest one
    (later vectors are drawn orthogonal to it); the undetermined terms then
    vanish identically.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (params.d,) or frame.dim != params.d:
        raise InvalidParameterError(f"point and frame must live in R^{params.d}")
    if frame.k > params.T:
        raise InvalidParameterError(f"frame has {frame.k} vectors but T = {params.T}")

    x = frame.vectors @ w
    complete = frame.k == params.T
    if not complete:
        tol = settings.frame_tolerance * max(1.0, float(np.linalg.norm(w)))
        if abs(x[-1]) > tol:
            raise IllegalEvaluationError(
                f"<v_{frame.k}, w> = {x[-1]:.3e} exceeds {tol:.1e}; point is outside the determined span"
            )

    value, grad_x, rows, cols, vals = _frame_terms(params, x, complete)
    hessian = StructuredHessian(
        dim=params.d, diagonal_shift=params.lam, rows=rows, cols=cols, values=vals, basis=frame.vectors.copy()
    )
    return OracleResponse(
        value=float(value + 0.5 * params.lam * float(w @ w)),
        gradient=frame.vectors.T @ grad_x + params.lam * w,
        hessian=hessian,
    )


class OptimumBracket(BaseModel):
    """Anchor sum q^i v_i, its displacement bound, and the measured numeric optimum."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    anchor: np.ndarray
    bound: float
    optimum: np.ndarray
    optimal_value: float
    displacement: float
    gradient_norm: float
    norm_sq: float
    norm_sq_bound: float


def _minimize_in_frame(params: FlattenedParams) -> Tuple[np.ndarray, float, float]:
    """Minimize F restricted to the frame span, in frame coordinates."""
    lam = params.lam

    def fun(x):
        value, grad, _, _, _ = _frame_terms(params, x, True)
        return value + 0.5 * lam * float(x @ x), grad + lam * x

    def hess(x):
        _, _, rows, cols, vals = _frame_terms(params, x, True)
        dense = np.zeros((x.size, x.size))
        np.add.at(dense, (rows, cols), vals)
        return dense + lam * np.eye(x.size)

    result = minimize(
        fun,
        params.anchor_coefficients(),
        jac=True,
        hess=hess,
        method="trust-exact",
        options={"gtol": 1e-13, "maxiter": 500},
    )
    x = result.x
    value, grad = fun(x)
    # phi is piecewise quadratic: Newton steps on the active pieces land exactly
    for _ in range(20):
        if np.linalg.norm(grad) <= 1e-14:
            break
        candidate = x - np.linalg.solve(hess(x), grad)
        cand_value, cand_grad = fun(candidate)
        if np.linalg.norm(cand_grad) >= np.linalg.norm(grad):
            break
        x, value, grad = candidate, cand_value, cand_grad
    return x, float(value), float(np.linalg.norm(grad))


def flattened_optimum_bracket(params: FlattenedParams, frame: OrthonormalFrame) -> OptimumBracket:
    """Numeric minimizer of the completed F, checked against the anchor and its bound.

    The minimizer has no component orthogonal to the frame, so the search runs
    in the T frame coordinates.
    """
    if frame.k != params.T:
        raise InvalidParameterError(f"bracket needs the complete frame of {params.T} vectors, got {frame.k}")
    x, value, grad_norm = _minimize_in_frame(params)
    if grad_norm > OPTIMUM_GTOL:
        raise NumericMinimizationError(f"numeric optimum stopped at gradient norm {grad_norm:.3e} > {OPTIMUM_GTOL:.0e}")

    coefficients = params.anchor_coefficients()
    anchor = frame.vectors.T @ coefficients
    optimum = frame.vectors.T @ x
    displacement = float(np.linalg.norm(x - coefficients))
    bracket = OptimumBracket(
        anchor=anchor,
        bound=params.displacement_bound,
        optimum=optimum,
        optimal_value=value,
        displacement=displacement,
        gradient_norm=grad_norm,
        norm_sq=float(x @ x),
        norm_sq_bound=3.0 * math.sqrt(params.kappa),
    )
    slack = 10.0 * OPTIMUM_GTOL / params.lam
    if displacement > bracket.bound + slack:
        raise InvariantViolation(f"optimum displacement {displacement:.3e} exceeds bound {bracket.bound:.3e}")
    if bracket.norm_sq > bracket.norm_sq_bound:
        raise InvariantViolation(f"||w*||^2 = {bracket.norm_sq:.3e} exceeds 3 sqrt(kappa) = {bracket.norm_sq_bound:.3e}")
    return bracket


class FlattenedInstance(FiniteSumInstance):
    """The completed objective F as a single-component instance (n = 1)."""

    params: FlattenedParams
    frame: OrthonormalFrame

    _bracket: Optional[OptimumBracket] = PrivateAttr(default=None)

    @property
    def n(self) -> int:
        return 1

    @property
    def dim(self) -> int:
        return self.params.d

    @property
    def bracket(self) -> OptimumBracket:
        if self._bracket is None:
            self._bracket = flattened_optimum_bracket(self.params, self.frame)
        return self._bracket

    def component(self, i: int, w: np.ndarray) -> OracleResponse:
        return eval_flattened(self.params, self.frame, w)

    def objective(self, w: np.ndarray) -> float:
        return eval_flattened(self.params, self.frame, w).value

    def optimum(self) -> np.ndarray:
        return self.bracket.optimum

    def optimal_value(self) -> float:
        return self.bracket.optimal_value


def extend_orthonormal(basis: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Append the normalized component of w orthogonal to ``basis`` rows, if any is left.

    Modified Gram-Schmidt followed by one re-orthogonalization pass.
    """
    u = np.array(w, dtype=float, copy=True)
    before = float(np.linalg.norm(u))
    if before == 0.0:
        return basis
    for _ in range(2):
        for row in basis:
            u -= (row @ u) * row
    after = float(np.linalg.norm(u))
    if after <= RESIDUAL_FLOOR * before:
        return basis
    return np.vstack([basis, u / after])


def draw_orthonormal(basis: np.ndarray, rng: np.random.Generator, dim: int) -> np.ndarray:
    """Unit vector orthogonal to every row of ``basis``, from a seeded Gaussian candidate."""
    if basis.shape[0] >= dim:
        raise FrameExtensionError(f"no direction left: {basis.shape[0]} protected vectors in R^{dim}")
    for _ in range(MAX_DRAWS):
        u = rng.standard_normal(dim)
        before = float(np.linalg.norm(u))
        for _ in range(2):
            for row in basis:
                u -= (row @ u) * row
        after = float(np.linalg.norm(u))
        if after >= RESIDUAL_FLOOR * before:
            return u / after
    raise FrameExtensionError(f"{MAX_DRAWS} candidates fell inside the protected span")


class DeterministicAlgorithm(Protocol):
    """A deterministic method driven one query at a time."""

    name: str

    def reset(self, dim: int) -> np.ndarray:
        """Forget history and return the first query point."""

    def step(self, w: np.ndarray, response: OracleResponse) -> np.ndarray:
        """Next query point after observing ``response`` at ``w``."""


class ZeroCallback:
    name = "zero"

    def reset(self, dim: int) -> np.ndarray:
        self._dim = dim
        return np.zeros(dim)

    def step(self, w: np.ndarray, response: OracleResponse) -> np.ndarray:
        return np.zeros(self._dim)


class GradientDescentCallback:
    name = "gd"

    def __init__(self, mu: float):
        self.mu = mu

    def reset(self, dim: int) -> np.ndarray:
        return np.zeros(dim)

    def step(self, w: np.ndarray, response: OracleResponse) -> np.ndarray:
        return w - response.gradient / self.mu


class NesterovCallback:
    """Constant-momentum accelerated gradient; queries are the extrapolated points."""

    name = "nesterov"

    def __init__(self, mu: float, lam: float):
        self.mu = mu
        root = math.sqrt(mu / lam)
        self.momentum = (root - 1.0) / (root + 1.0)

    def reset(self, dim: int) -> np.ndarray:
        self._previous = np.zeros(dim)
        return np.zeros(dim)

    def step(self, w: np.ndarray, response: OracleResponse) -> np.ndarray:
        x = w - response.gradient / self.mu
        y = x + self.momentum * (x - self._previous)
        self._previous = x
        return y


class DampedNewtonCallback:
    name = "damped_newton"

    def __init__(self, step_size: float = 0.5):
        self.step_size = step_size

    def reset(self, dim: int) -> np.ndarray:
        return np.zeros(dim)

    def step(self, w: np.ndarray, response: OracleResponse) -> np.ndarray:
        direction = np.linalg.solve(response.hessian.to_dense(), response.gradient)
        return w - self.step_size * direction


def make_callback(name: str, mu: float, lam: float, damping: float = 0.5) -> DeterministicAlgorithm:
    callbacks = {
        "zero": lambda: ZeroCallback(),
        "gd": lambda: GradientDescentCallback(mu),
        "nesterov": lambda: NesterovCallback(mu, lam),
        "damped_newton": lambda: DampedNewtonCallback(damping),
    }
    if name not in callbacks:
        raise InvalidParameterError(f"Unknown callback '{name}'. Available: {list(callbacks)}")
    return callbacks[name]()


class ResistSample(BaseModel):
    t: int
    ratio: float
    envelope: float


class ResistResult(BaseModel):
    """Outcome of one resisting-oracle session."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    algorithm: str
    seed: int
    samples: List[ResistSample]
    points: List[np.ndarray]
    frame: OrthonormalFrame
    bracket: OptimumBracket
    final_inner: float

    @property
    def final_ratio(self) -> float:
        return self.samples[-1].ratio


def _checked_point(w: np.ndarray, dim: int, algorithm: str) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (dim,):
        raise InvalidParameterError(f"{algorithm} emitted a point of shape {w.shape}, expected ({dim},)")
    if not np.all(np.isfinite(w)):
        raise InvalidParameterError(f"{algorithm} emitted a non-finite point")
    return w


def _responses_match(a: OracleResponse, b: OracleResponse) -> bool:
    scale = max(1.0, abs(a.value))
    return (
        abs(a.value - b.value) <= RECOMPUTE_TOL * scale
        and np.allclose(a.gradient, b.gradient, rtol=0.0, atol=RECOMPUTE_TOL * max(1.0, float(np.abs(a.gradient).max())))
        and np.allclose(a.hessian.to_dense(), b.hessian.to_dense(), rtol=0.0, atol=RECOMPUTE_TOL * scale)
    )


def resist(algorithm: DeterministicAlgorithm, params: FlattenedParams, seed: int) -> ResistResult:
    """Run the interleaved protocol against a deterministic algorithm.

    For t = 1..T-1 the algorithm emits w_t, the frame gains v_t orthonormal to
    w_1..w_t and v_1..v_{t-1}, and the response is computed from the partial
    frame. The T-th point is the algorithm's output; v_T is drawn orthogonal to
    everything seen. Afterwards every response is recomputed with the complete
    frame and compared.

    Args:
        algorithm: Deterministic callback with ``reset``/``step``
        params: Flattened construction parameters
        seed: Seed of the frame directions

    Returns:
        ResistResult with per-point ratios against the completed objective
    """
    rng = make_rng(seed)
    d, T = params.d, params.T
    protected = np.zeros((0, d))
    frame_rows: List[np.ndarray] = []
    points: List[np.ndarray] = []
    responses: List[OracleResponse] = []

    w = _checked_point(algorithm.reset(d), d, algorithm.name)
    for t in range(1, T):
        points.append(w)
        protected = extend_orthonormal(protected, w)
        v = draw_orthonormal(protected, rng, d)
        frame_rows.append(v)
        protected = np.vstack([protected, v])
        response = eval_flattened(params, OrthonormalFrame(vectors=np.array(frame_rows)), w)
        responses.append(response)
        w = _checked_point(algorithm.step(w, response), d, algorithm.name)
        logger.debug("%s t=%d |w|=%.3e", algorithm.name, t, float(np.linalg.norm(w)))

    points.append(w)
    protected = extend_orthonormal(protected, w)
    frame_rows.append(draw_orthonormal(protected, rng, d))
    frame = OrthonormalFrame(vectors=np.array(frame_rows))

    for t, point in enumerate(points, start=1):
        for s in range(t - 1, T):
            tol = settings.frame_tolerance * max(1.0, float(np.linalg.norm(point)))
            if abs(float(frame.vectors[s] @ point)) > tol:
                raise InvariantViolation(f"v_{s + 1} is not orthogonal to w_{t}")
    for t, (point, response) in enumerate(zip(points, responses), start=1):
        if not _responses_match(response, eval_flattened(params, frame, point)):
            raise InvariantViolation(f"response to w_{t} changed once the frame was completed")

    instance = FlattenedInstance(params=params, frame=frame)
    samples = [
        ResistSample(t=t, ratio=suboptimality_ratio(instance, point), envelope=thm1_envelope(params.mu, params.lam, t))
        for t, point in enumerate(points, start=1)
    ]
    final_inner = float(frame.vectors[-1] @ points[-1])
    logger.info(
        "resist %s T=%d seed=%d: final ratio %.3e, envelope %.3e, <w_T,v_T>=%.1e",
        algorithm.name, T, seed, samples[-1].ratio, samples[-1].envelope, final_inner,
    )
    return ResistResult(
        algorithm=algorithm.name,
        seed=seed,
        samples=samples,
        points=points,
        frame=frame,
        bracket=instance.bracket,
        final_inner=final_inner,
    )
