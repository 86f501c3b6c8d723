"""Block-diagonal embedding of every chain sub-problem at once.

The instance lives in R^D with D = n^{d-1} * d. Block number ``#j`` (the
mixed-radix rank of the owner tuple j, j_1 most significant) holds a copy of
the chain with owners j, so f_i(u) = sum_j f_i^j(Q^j u).
"""

import logging
from itertools import product
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import PrivateAttr, model_validator

from oclb.bounds import ProblemParams
from oclb.chain_instance import ChainInstance
from oclb.config import settings
from oclb.errors import BudgetExceededError, InvalidParameterError, InvalidQueryError
from oclb.oracle import FiniteSumInstance, OracleResponse, StructuredHessian

logger = logging.getLogger(__name__)

TUPLE_ORDER = "mixed-radix, j_1 most significant, digits j_l - 1"
HEAD_TOLERANCE = 1e-12


def tuple_rank(j_tuple: Sequence[int], n: int) -> int:
    """Mixed-radix rank of an owner tuple."""
    rank = 0
    for j in j_tuple:
        if not 1 <= j <= n:
            raise InvalidParameterError(f"tuple entries must lie in [1, {n}], got {j}")
        rank = rank * n + (j - 1)
    return rank


def rank_tuple(rank: int, n: int, d: int) -> Tuple[int, ...]:
    """Owner tuple of length d - 1 with the given rank."""
    length = d - 1
    if not 0 <= rank < n ** length:
        raise InvalidParameterError(f"rank must lie in [0, {n ** length}), got {rank}")
    digits = []
    for _ in range(length):
        rank, digit = divmod(rank, n)
        digits.append(digit + 1)
    return tuple(reversed(digits))


def all_tuples(n: int, d: int) -> List[Tuple[int, ...]]:
    """Every owner tuple in rank order."""
    return list(product(range(1, n + 1), repeat=d - 1))


class BlockInstance(FiniteSumInstance):
    """One chain block per owner tuple; blocks are evaluated one at a time."""

    params: ProblemParams
    tuple_order: str = TUPLE_ORDER

    _chains: List[ChainInstance] = PrivateAttr(default_factory=list)

    @model_validator(mode="after")
    def _check_size(self) -> "BlockInstance":
        if self.params.d < 2:
            raise InvalidParameterError(f"block instances need d >= 2, got {self.params.d}")
        if self.total_dimension > settings.block_dimension_cap:
            raise BudgetExceededError(
                f"D = n^(d-1) * d = {self.total_dimension} exceeds the cap {settings.block_dimension_cap}"
            )
        return self

    def model_post_init(self, __context) -> None:
        self._chains = [ChainInstance.from_owners(self.params, owners) for owners in all_tuples(self.params.n, self.params.d)]

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def d(self) -> int:
        return self.params.d

    @property
    def block_count(self) -> int:
        return self.params.n ** (self.params.d - 1)

    @property
    def total_dimension(self) -> int:
        return self.block_count * self.params.d

    @property
    def dim(self) -> int:
        return self.total_dimension

    @property
    def mu(self) -> float:
        return self.params.mu

    @property
    def lam(self) -> float:
        return self.params.lam

    @property
    def average_smoothness(self) -> float:
        return self.params.smoothness_of_average

    def chain(self, rank: int) -> ChainInstance:
        return self._chains[rank]

    def blocks(self, u: np.ndarray) -> np.ndarray:
        """View of u as (block_count, d)."""
        return np.asarray(u, dtype=float).reshape(self.block_count, self.params.d)

    def component(self, i: int, u: np.ndarray) -> OracleResponse:
        d = self.params.d
        value = 0.0
        gradient = np.empty(self.total_dimension)
        rows, cols, vals = [], [], []
        for rank, sub in enumerate(self.blocks(u)):
            response = self._chains[rank].component(i, sub)
            offset = rank * d
            value += response.value
            gradient[offset:offset + d] = response.gradient
            rows.append(response.hessian.rows + offset)
            cols.append(response.hessian.cols + offset)
            vals.append(response.hessian.values)
        hessian = StructuredHessian(
            dim=self.total_dimension,
            diagonal_shift=self.params.lam,
            rows=np.concatenate(rows),
            cols=np.concatenate(cols),
            values=np.concatenate(vals),
        )
        return OracleResponse(value=value, gradient=gradient, hessian=hessian)

    def objective(self, u: np.ndarray) -> float:
        return float(sum(chain.objective(sub) for chain, sub in zip(self._chains, self.blocks(u))))

    def gradient(self, u: np.ndarray) -> np.ndarray:
        return np.concatenate([chain.gradient(sub) for chain, sub in zip(self._chains, self.blocks(u))])

    def optimum(self) -> np.ndarray:
        return block_optimum(self)

    def excess(self, u: np.ndarray) -> float:
        return float(sum(chain.excess(sub) for chain, sub in zip(self._chains, self.blocks(u))))


def eval_block_component(instance: BlockInstance, i: int, u: np.ndarray) -> OracleResponse:
    if not 1 <= i <= instance.n:
        raise InvalidQueryError(f"component index must be in [1, {instance.n}], got {i}")
    u = np.asarray(u, dtype=float)
    if u.shape != (instance.dim,):
        raise InvalidQueryError(f"point must have shape ({instance.dim},), got {u.shape}")
    return instance.component(i, u)


def block_optimum(instance: BlockInstance) -> np.ndarray:
    """Every block holds (q, q^2, ..., q^d)."""
    w_star = instance.chain(0).optimum()
    return np.tile(w_star, instance.block_count)


def per_block_heads(u: np.ndarray, n: int, d: int) -> List[int]:
    """Largest 1-based index with |value| > 1e-12 in each block, 0 for an all-zero block."""
    blocks = np.asarray(u, dtype=float).reshape(n ** (d - 1), d)
    heads = []
    for block in blocks:
        nonzero = np.flatnonzero(np.abs(block) > HEAD_TOLERANCE)
        heads.append(int(nonzero[-1]) + 1 if nonzero.size else 0)
    return heads
