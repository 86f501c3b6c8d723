"""Randomized quadratic-chain finite sum and the sign-flip instance.

Component i of the chain owns the couplings (w_l - w_{l+1})^2 with j_l = i:

    f_i(w) = ((mu - lambda)/8) * ( sum_l 1[j_l = i] (w_l - w_{l+1})^2
                                   + (1/n) (w_1^2 + (a - 1) w_d^2 - 2 w_1) )
             + (lambda/2) ||w||^2

so that F = (1/n) sum_i f_i is the tridiagonal quadratic whose minimizer is
(q, q^2, ..., q^d).
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator
from scipy.linalg import solve_banded

from oclb.bounds import ProblemParams, RateConstants, boundary_coefficient, q_factor
from oclb.errors import InvalidParameterError, InvalidQueryError
from oclb.oracle import FiniteSumInstance, OracleResponse, StructuredHessian
from oclb.seeding import make_rng

logger = logging.getLogger(__name__)

MAX_SOLVE_DIMENSION = 100_000


class ChainQuadratic(BaseModel):
    """F(w) = (alpha/8)(w_1^2 + sum (w_i - w_{i+1})^2 + (a - 1) w_d^2 - 2 w_1) + (beta/2)||w||^2.

    Its Hessian is (alpha/4) A + beta I with A the path Laplacian plus
    diag(1, 0, ..., 0, a - 1), and its condition number is (alpha + beta)/beta.
    """

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(ge=0)
    beta: float = Field(gt=0)
    d: int = Field(ge=1)

    @property
    def kappa(self) -> float:
        return (self.alpha + self.beta) / self.beta

    @property
    def q(self) -> float:
        return q_factor(self.kappa)

    @property
    def a_kappa(self) -> float:
        return boundary_coefficient(self.kappa)

    def quadratic_form(self, w: np.ndarray) -> float:
        """w^T A w."""
        diff = np.diff(w)
        return float(w[0] ** 2 + diff @ diff + (self.a_kappa - 1.0) * w[-1] ** 2)

    def apply_a(self, w: np.ndarray) -> np.ndarray:
        out = np.zeros_like(w)
        diff = w[:-1] - w[1:]
        out[:-1] += diff
        out[1:] -= diff
        out[0] += w[0]
        out[-1] += (self.a_kappa - 1.0) * w[-1]
        return out

    def value(self, w: np.ndarray) -> float:
        return (self.alpha / 8.0) * (self.quadratic_form(w) - 2.0 * w[0]) + 0.5 * self.beta * float(w @ w)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        grad = (self.alpha / 4.0) * self.apply_a(w) + self.beta * w
        grad[0] -= self.alpha / 4.0
        return grad

    def excess(self, w: np.ndarray, optimum: np.ndarray) -> float:
        """Exact F(w) - F* as the sum of squares 1/2 (w - w*)^T H (w - w*)."""
        e = w - optimum
        return 0.5 * ((self.alpha / 4.0) * self.quadratic_form(e) + self.beta * float(e @ e))

    def closed_form_optimum(self) -> np.ndarray:
        return np.power(self.q, np.arange(1, self.d + 1, dtype=float))

    def banded_hessian(self) -> np.ndarray:
        """Hessian in the (1, 1) banded layout of ``scipy.linalg.solve_banded``."""
        scale = self.alpha / 4.0
        # A has diagonal (2, ..., 2, a); for d = 1 it is just (a)
        diag = np.full(self.d, 2.0 * scale)
        diag[-1] = scale * self.a_kappa
        ab = np.zeros((3, self.d))
        ab[0, 1:] = -scale
        ab[1] = diag + self.beta
        ab[2, :-1] = -scale
        return ab

    def stationarity_solve(self) -> np.ndarray:
        """Solve ((alpha/4) A + beta I) w = (alpha/4) e_1 by banded elimination."""
        if self.alpha == 0.0:
            return np.zeros(self.d)
        rhs = np.zeros(self.d)
        rhs[0] = self.alpha / 4.0
        return solve_banded((1, 1), self.banded_hessian(), rhs)


class ChainInstance(FiniteSumInstance):
    """Chain finite sum with block owners j_1..j_{d-1} in [1, n]."""

    params: ProblemParams
    rates: RateConstants
    block_owners: Tuple[int, ...]
    seed: int = 0

    _owners: np.ndarray = PrivateAttr()
    _edges: Dict[int, np.ndarray] = PrivateAttr(default_factory=dict)
    _hessians: Dict[int, StructuredHessian] = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def _check_owners(self) -> "ChainInstance":
        if len(self.block_owners) != self.params.d - 1:
            raise InvalidParameterError(
                f"expected {self.params.d - 1} block owners for d={self.params.d}, got {len(self.block_owners)}"
            )
        if any(not 1 <= j <= self.params.n for j in self.block_owners):
            raise InvalidParameterError(f"block owners must lie in [1, {self.params.n}]")
        return self

    def model_post_init(self, __context) -> None:
        self._owners = np.asarray(self.block_owners, dtype=np.int64)

    @classmethod
    def from_owners(cls, params: ProblemParams, owners: Iterable[int], seed: int = 0) -> "ChainInstance":
        return cls(params=params, rates=params.rates, block_owners=tuple(int(j) for j in owners), seed=seed)

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def dim(self) -> int:
        return self.params.d

    @property
    def mu(self) -> float:
        return self.params.mu

    @property
    def lam(self) -> float:
        return self.params.lam

    @property
    def average_smoothness(self) -> float:
        return self.params.smoothness_of_average

    @property
    def owners(self) -> np.ndarray:
        return self._owners

    @property
    def quadratic(self) -> ChainQuadratic:
        return ChainQuadratic(alpha=(self.params.mu - self.params.lam) / self.params.n, beta=self.params.lam, d=self.params.d)

    def edges_of(self, i: int) -> np.ndarray:
        """0-based positions l of the couplings (w_l, w_{l+1}) owned by component i."""
        if i not in self._edges:
            self._edges[i] = np.flatnonzero(self._owners == i)
        return self._edges[i]

    def _component_hessian(self, i: int) -> StructuredHessian:
        if i in self._hessians:
            return self._hessians[i]
        p = self.params
        c2 = (p.mu - p.lam) / 4.0
        edges = self.edges_of(i)
        rows = np.concatenate([edges, edges + 1, edges, edges + 1, [0, p.d - 1]])
        cols = np.concatenate([edges, edges + 1, edges + 1, edges, [0, p.d - 1]])
        coupling = np.full(edges.size, c2)
        values = np.concatenate([
            coupling, coupling, -coupling, -coupling,
            [c2 / p.n, c2 * (self.rates.a_kappa - 1.0) / p.n],
        ])
        hessian = StructuredHessian(dim=p.d, diagonal_shift=p.lam, rows=rows, cols=cols, values=values)
        self._hessians[i] = hessian
        return hessian

    def component(self, i: int, w: np.ndarray) -> OracleResponse:
        p = self.params
        c = (p.mu - p.lam) / 8.0
        a1 = self.rates.a_kappa - 1.0
        edges = self.edges_of(i)
        diff = w[edges] - w[edges + 1]

        value = c * (float(diff @ diff) + (w[0] ** 2 + a1 * w[-1] ** 2 - 2.0 * w[0]) / p.n) + 0.5 * p.lam * float(w @ w)

        grad = p.lam * np.array(w, dtype=float)
        grad[edges] += 2.0 * c * diff
        grad[edges + 1] -= 2.0 * c * diff
        grad[0] += 2.0 * c * (w[0] - 1.0) / p.n
        grad[-1] += 2.0 * c * a1 * w[-1] / p.n
        return OracleResponse(value=float(value), gradient=grad, hessian=self._component_hessian(i))

    def objective(self, w: np.ndarray) -> float:
        return self.quadratic.value(np.asarray(w, dtype=float))

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return self.quadratic.gradient(np.asarray(w, dtype=float))

    def optimum(self) -> np.ndarray:
        return closed_form_optimum(self)

    def excess(self, w: np.ndarray) -> float:
        return self.quadratic.excess(np.asarray(w, dtype=float), self.optimum())


class SignFlipInstance(FiniteSumInstance):
    """f_i(w) = -delta_i w_1 + (lambda/2)||w||^2 with fair random signs."""

    lam: float = Field(gt=0, alias="lambda")
    n: int = Field(ge=1)
    signs: Tuple[int, ...]
    seed: int = 0
    d: int = Field(default=1, ge=1)

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True, populate_by_name=True)

    @model_validator(mode="after")
    def _check_signs(self) -> "SignFlipInstance":
        if len(self.signs) != self.n or any(s not in (-1, 1) for s in self.signs):
            raise InvalidParameterError(f"signs must be {self.n} values in {{-1, +1}}")
        return self

    @property
    def dim(self) -> int:
        return self.d

    @property
    def mu(self) -> float:
        """Every component is lambda-smooth."""
        return self.lam

    @property
    def average_smoothness(self) -> float:
        return self.lam

    def component(self, i: int, w: np.ndarray) -> OracleResponse:
        return eval_signflip(self, i, w)

    def objective(self, w: np.ndarray) -> float:
        w = np.asarray(w, dtype=float)
        return -float(np.mean(self.signs)) * w[0] + 0.5 * self.lam * float(w @ w)

    def optimum(self) -> np.ndarray:
        return signflip_optimum(self)

    def excess(self, w: np.ndarray) -> float:
        e = np.asarray(w, dtype=float) - self.optimum()
        return 0.5 * self.lam * float(e @ e)


def sample_owners(n: int, slots: int, rng: np.random.Generator, draws: int = 1) -> np.ndarray:
    """(draws, slots) block owners, i.i.d. uniform on {1..n}."""
    return rng.integers(1, n + 1, size=(draws, slots))


def sample_chain(params: ProblemParams, seed: int) -> ChainInstance:
    """Draw block owners i.i.d. uniform on {1..n} from a PCG64 stream seeded with ``seed``."""
    if params.d < 2:
        raise InvalidParameterError(f"chain instances need d >= 2, got d={params.d}")
    rng = make_rng(seed)
    owners = sample_owners(params.n, params.d - 1, rng)[0]
    return ChainInstance(params=params, rates=params.rates, block_owners=tuple(int(j) for j in owners), seed=int(seed))


def eval_component(instance: ChainInstance, i: int, w: np.ndarray) -> OracleResponse:
    """Uncounted response of f_i at w, with index and dimension checks."""
    if not 1 <= i <= instance.n:
        raise InvalidQueryError(f"component index must be in [1, {instance.n}], got {i}")
    w = np.asarray(w, dtype=float)
    if w.shape != (instance.dim,):
        raise InvalidQueryError(f"point must have shape ({instance.dim},), got {w.shape}")
    return instance.component(i, w)


def average_objective(instance: ChainInstance, w: np.ndarray) -> float:
    w = np.asarray(w, dtype=float)
    if w.shape != (instance.dim,):
        raise InvalidQueryError(f"point must have shape ({instance.dim},), got {w.shape}")
    return instance.objective(w)


def closed_form_optimum(instance: ChainInstance) -> np.ndarray:
    return instance.quadratic.closed_form_optimum()


def tridiagonal_solve_optimum(instance: Union[ChainInstance, ChainQuadratic]) -> np.ndarray:
    """Minimizer of F from its stationarity system, independent of the closed form."""
    quadratic = instance.quadratic if isinstance(instance, ChainInstance) else instance
    if quadratic.d > MAX_SOLVE_DIMENSION:
        raise InvalidParameterError(f"tridiagonal solve supports d <= {MAX_SOLVE_DIMENSION}, got {quadratic.d}")
    return quadratic.stationarity_solve()


def sample_signflip(lam: float, n: int, seed: int, d: int = 1) -> SignFlipInstance:
    rng = make_rng(seed)
    signs = rng.choice(np.array([-1, 1]), size=n)
    return SignFlipInstance(lam=lam, n=n, signs=tuple(int(s) for s in signs), seed=int(seed), d=d)


def eval_signflip(instance: SignFlipInstance, i: int, w: np.ndarray) -> OracleResponse:
    if not 1 <= i <= instance.n:
        raise InvalidQueryError(f"component index must be in [1, {instance.n}], got {i}")
    w = np.asarray(w, dtype=float)
    if w.shape != (instance.dim,):
        raise InvalidQueryError(f"point must have shape ({instance.dim},), got {w.shape}")
    delta = instance.signs[i - 1]
    value = -delta * w[0] + 0.5 * instance.lam * float(w @ w)
    grad = instance.lam * w.copy()
    grad[0] -= delta
    hessian = StructuredHessian(
        dim=instance.dim,
        diagonal_shift=instance.lam,
        rows=np.zeros(0, dtype=np.int64),
        cols=np.zeros(0, dtype=np.int64),
        values=np.zeros(0),
    )
    return OracleResponse(value=float(value), gradient=grad, hessian=hessian)


def signflip_optimum(instance: SignFlipInstance) -> np.ndarray:
    w = np.zeros(instance.dim)
    w[0] = sum(instance.signs) / (instance.n * instance.lam)
    return w


def signflip_estimate(instance: SignFlipInstance, observed: Iterable[int]) -> np.ndarray:
    """Posterior-mean minimizer when only the signs of ``observed`` components are known."""
    w = np.zeros(instance.dim)
    w[0] = sum(instance.signs[i - 1] for i in set(observed)) / (instance.n * instance.lam)
    return w


def signflip_floor(n: int, observed_count: int) -> float:
    """Expected excess over expected initial gap for the posterior-mean estimate.

    With k of n fair signs observed this is (n - k)/n, at least 1/2 while
    k <= n/2.
    """
    if not 0 <= observed_count <= n:
        raise InvalidParameterError(f"observed_count must be in [0, {n}], got {observed_count}")
    return (n - observed_count) / n


def dump_chain(instance: ChainInstance) -> str:
    """Flat text serialization, replayable with ``load_chain``."""
    p = instance.params
    lines = [
        f"mu={p.mu!r}",
        f"lambda={p.lam!r}",
        f"n={p.n}",
        f"d={p.d}",
        f"seed={instance.seed}",
        "owners=" + ",".join(str(j) for j in instance.block_owners),
    ]
    return "\n".join(lines) + "\n"


def load_chain(text: str) -> ChainInstance:
    fields = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    missing = {"mu", "lambda", "n", "d", "seed", "owners"} - fields.keys()
    if missing:
        raise InvalidParameterError(f"instance text is missing {sorted(missing)}")
    params = ProblemParams(mu=float(fields["mu"]), lam=float(fields["lambda"]), n=int(fields["n"]), d=int(fields["d"]))
    owners = [int(j) for j in fields["owners"].split(",") if j]
    return ChainInstance.from_owners(params, owners, seed=int(fields["seed"]))


def write_chain(instance: ChainInstance, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(dump_chain(instance), encoding="utf-8", newline="\n")
    return path

