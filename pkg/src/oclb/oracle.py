"""Counted second-order oracle over a finite sum.

Holds the structured Hessian representation, the oracle response triple, the
call ledger, the instance interface every construction implements, and the
uncounted measurements (suboptimality ratio, obliviousness audit).
"""

import logging
from abc import ABC, abstractmethod
from collections import Counter
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field

from oclb.config import settings
from oclb.errors import BudgetExceededError, DegenerateInstanceError, InvalidQueryError

logger = logging.getLogger(__name__)

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

LEDGER_COLUMNS = ["t", "index", "point_hash"]


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = FNV_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def point_hash(w: np.ndarray) -> str:
    """FNV-1a of the little-endian float64 byte image, as 16 lowercase hex digits."""
    image = np.ascontiguousarray(w, dtype="<f8").tobytes()
    return f"{fnv1a64(image):016x}"


class StructuredHessian(BaseModel):
    """Hessian as ``diagonal_shift * I + B^T S B``.

    ``S`` is the symmetric sparse core given as coordinate triplets (duplicates
    add up). ``B`` is the optional orthonormal basis with rows v_1..v_k; without
    it the core lives directly in the ambient coordinates.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    dim: int = Field(ge=1)
    diagonal_shift: float = 0.0
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    basis: Optional[np.ndarray] = None

    @classmethod
    def from_terms(
        cls,
        dim: int,
        diagonal_shift: float,
        terms: Iterable[Tuple[int, int, float]],
        basis: Optional[np.ndarray] = None,
    ) -> "StructuredHessian":
        terms = list(terms)
        rows = np.array([t[0] for t in terms], dtype=np.int64)
        cols = np.array([t[1] for t in terms], dtype=np.int64)
        values = np.array([t[2] for t in terms], dtype=float)
        return cls(dim=dim, diagonal_shift=diagonal_shift, rows=rows, cols=cols, values=values, basis=basis)

    @property
    def sparse_terms(self) -> List[Tuple[int, int, float]]:
        return [(int(r), int(c), float(v)) for r, c, v in zip(self.rows, self.cols, self.values)]

    @property
    def core_dim(self) -> int:
        return self.dim if self.basis is None else self.basis.shape[0]

    def core(self) -> sp.csr_matrix:
        size = self.core_dim
        return sp.coo_matrix((self.values, (self.rows, self.cols)), shape=(size, size)).tocsr()

    def is_symmetric(self, tol: float = 0.0) -> bool:
        asym = self.core() - self.core().T
        return asym.nnz == 0 or float(np.max(np.abs(asym.data))) <= tol

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.basis is None:
            return self.diagonal_shift * x + self.core() @ x
        return self.diagonal_shift * x + self.basis.T @ (self.core() @ (self.basis @ x))

    def to_sparse(self) -> sp.csr_matrix:
        shift = self.diagonal_shift * sp.identity(self.dim, format="csr")
        if self.basis is None:
            return (shift + self.core()).tocsr()
        rotated = self.basis.T @ (self.core() @ self.basis)
        return (shift + sp.csr_matrix(rotated)).tocsr()

    def to_dense(self, limit: Optional[int] = None) -> np.ndarray:
        limit = settings.dense_limit if limit is None else limit
        if self.dim > limit:
            raise BudgetExceededError(f"dense Hessian of dimension {self.dim} exceeds the limit {limit}")
        return self.to_sparse().toarray()


class OracleResponse(BaseModel):
    """Value, gradient and Hessian of one component at one point."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    value: float
    gradient: np.ndarray
    hessian: StructuredHessian


def average_hessian(hessians: Sequence[StructuredHessian]) -> sp.csr_matrix:
    """Mean of several structured Hessians as a sparse matrix."""
    if not hessians:
        raise ValueError("average_hessian needs at least one Hessian")
    total = hessians[0].to_sparse()
    for hessian in hessians[1:]:
        total = total + hessian.to_sparse()
    return (total / len(hessians)).tocsr()


class LedgerEntry(BaseModel):
    """One counted oracle call."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    t: int
    index: int
    point_hash: str
    point: Optional[np.ndarray] = None


class CallLedger:
    """Append-only record of oracle calls for one run.

    Steps are 1-based and consecutive. Full query points are kept only when
    ``record_points`` is set; a hash is always kept.
    """

    def __init__(self, record_points: Optional[bool] = None):
        self.record_points = settings.record_points if record_points is None else record_points
        self.entries: List[LedgerEntry] = []
        self.per_index_counts: Counter = Counter()

    @property
    def total(self) -> int:
        return len(self.entries)

    def record(self, index: int, w: np.ndarray) -> LedgerEntry:
        entry = LedgerEntry(
            t=self.total + 1,
            index=index,
            point_hash=point_hash(w),
            point=np.array(w, dtype=float, copy=True) if self.record_points else None,
        )
        self.entries.append(entry)
        self.per_index_counts[index] += 1
        return entry

    def indices(self) -> List[int]:
        return [entry.index for entry in self.entries]

    def points(self) -> List[np.ndarray]:
        if not self.record_points:
            raise ValueError("ledger was created without record_points; query points are not available")
        return [entry.point for entry in self.entries]

    def to_frame(self) -> pd.DataFrame:
        rows = [{"t": e.t, "index": e.index, "point_hash": e.point_hash} for e in self.entries]
        return pd.DataFrame(rows, columns=LEDGER_COLUMNS)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
        return path


class FiniteSumInstance(BaseModel, ABC):
    """F = (1/n) sum_i f_i with an exact oracle for each f_i and a known minimizer.

    Subclasses expose the component count as ``n`` and the ambient dimension as
    ``dim`` (either as fields or as properties).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @abstractmethod
    def component(self, i: int, w: np.ndarray) -> OracleResponse:
        """Exact response of f_i at w; no validation, no counting."""

    @abstractmethod
    def objective(self, w: np.ndarray) -> float:
        """Direct formula for F(w)."""

    @abstractmethod
    def optimum(self) -> np.ndarray:
        """Exact (or high-accuracy) minimizer of F."""

    def optimal_value(self) -> float:
        return self.objective(self.optimum())

    def excess(self, w: np.ndarray) -> float:
        """F(w) - F*; quadratic families override this with a sum-of-squares form."""
        return self.objective(w) - self.optimal_value()


def query(instance: FiniteSumInstance, w: np.ndarray, i: int, ledger: CallLedger) -> OracleResponse:
    """Counted oracle call.

    Args:
        instance: Finite-sum instance
        w: Query point of length ``instance.dim``
        i: 1-based component index
        ledger: The run's ledger; the call is appended to it

    Returns:
        Exact value, gradient and Hessian of f_i at w
    """
    if isinstance(i, bool) or not isinstance(i, (int, np.integer)) or not 1 <= int(i) <= instance.n:
        raise InvalidQueryError(f"component index must be in [1, {instance.n}], got {i!r}")
    w = np.asarray(w, dtype=float)
    if w.shape != (instance.dim,):
        raise InvalidQueryError(f"query point must have shape ({instance.dim},), got {w.shape}")
    ledger.record(int(i), w)
    return instance.component(int(i), w)


def suboptimality_ratio(instance: FiniteSumInstance, w: np.ndarray) -> float:
    """(F(w) - F*)/(F(0) - F*), uncounted.

    Raises:
        DegenerateInstanceError: when F(0) = F*
    """
    reference = instance.excess(np.zeros(instance.dim))
    if not reference > 0.0:
        raise DegenerateInstanceError(f"F(0) - F* = {reference!r}; suboptimality ratio is undefined")
    excess = instance.excess(np.asarray(w, dtype=float))
    if not np.isfinite(excess):
        return float("inf")
    return max(excess, 0.0) / reference


class AuditVerdict(BaseModel):
    """Pass/fail verdict with the first offending step, if any."""

    passed: bool
    step: Optional[int] = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.passed


def obliviousness_audit(
    ledger: Union[CallLedger, Sequence[int]],
    declared_schedule: Sequence[int],
) -> AuditVerdict:
    """Pass iff the ledger's index sequence is a prefix of the declared schedule."""
    indices = ledger.indices() if isinstance(ledger, CallLedger) else list(ledger)
    if len(indices) > len(declared_schedule):
        return AuditVerdict(
            passed=False,
            step=len(declared_schedule) + 1,
            detail=f"{len(indices)} calls made but only {len(declared_schedule)} declared",
        )
    for t, (actual, declared) in enumerate(zip(indices, declared_schedule), start=1):
        if int(actual) != int(declared):
            return AuditVerdict(passed=False, step=t, detail=f"step {t}: queried {actual}, declared {declared}")
    return AuditVerdict(passed=True)


def dense_average_hessian(instance: FiniteSumInstance, w: np.ndarray) -> np.ndarray:
    """Dense (1/n) sum_i Hessian of f_i at w; small dimensions only."""
    if instance.dim > settings.dense_limit:
        raise BudgetExceededError(f"dense Hessian of dimension {instance.dim} exceeds the limit {settings.dense_limit}")
    w = np.asarray(w, dtype=float)
    hessians = [instance.component(i, w).hessian for i in range(1, instance.n + 1)]
    return average_hessian(hessians).toarray()
