"""Problem parameters, rate constants and the analytic lower-bound envelopes."""

import logging
import math
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from oclb.config import settings
from oclb.errors import InvalidParameterError

logger = logging.getLogger(__name__)

# Past this exponent q**e is evaluated as exp(log(prefactor) + e*log(q))
LOG_SPACE_EXPONENT = 512.0


class ProblemParams(BaseModel):
    """Smoothness, strong convexity, component count, dimension and target accuracy.

    ``mu == lambda`` is admitted as the degenerate kappa = 1 case; every formula
    specializes continuously to q = 0 there.
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    mu: float = Field(gt=0)
    lam: float = Field(gt=0, alias="lambda")
    n: int = Field(ge=1)
    d: int = Field(ge=1)
    epsilon: float = Field(default=1e-6, gt=0, lt=1)

    @model_validator(mode="after")
    def _check_ordering(self) -> "ProblemParams":
        if self.mu < self.lam:
            raise InvalidParameterError(f"mu must be >= lambda, got mu={self.mu}, lambda={self.lam}")
        return self

    @property
    def degenerate(self) -> bool:
        return self.mu == self.lam

    @property
    def kappa(self) -> float:
        return condition_number(self.mu, self.lam, self.n, allow_degenerate=True)

    @property
    def rates(self) -> "RateConstants":
        return rate_constants(self.kappa)

    @property
    def smoothness_of_average(self) -> float:
        """Smoothness constant (mu - lambda)/n + lambda of the averaged chain objective."""
        return (self.mu - self.lam) / self.n + self.lam


class RateConstants(BaseModel):
    """Condition number with its geometric factor and boundary coefficient."""

    model_config = ConfigDict(frozen=True)

    kappa: float = Field(ge=1)
    q: float = Field(ge=0, lt=1)
    a_kappa: float = Field(ge=1, le=2)


class CallThresholds(BaseModel):
    """Advisory oracle-call thresholds with the hidden constants set from config."""

    t1: Optional[float] = None
    t2: float
    c: float
    c_prime: float


def condition_number(mu: float, lam: float, n: int, allow_degenerate: bool = False) -> float:
    """Condition number ((mu/lambda) - 1)/n + 1 of the averaged chain objective.

    Args:
        mu: Smoothness of each component
        lam: Strong convexity
        n: Number of components
        allow_degenerate: Accept mu == lambda (returns exactly 1)

    Returns:
        kappa >= 1
    """
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    if lam <= 0:
        raise InvalidParameterError(f"lambda must be positive, got {lam}")
    if mu < lam or (mu == lam and not allow_degenerate):
        raise InvalidParameterError(f"condition number needs mu > lambda, got mu={mu}, lambda={lam}")
    return ((mu / lam) - 1.0) / n + 1.0


def q_factor(kappa: float) -> float:
    """Geometric factor (sqrt(kappa) - 1)/(sqrt(kappa) + 1)."""
    if not kappa >= 1:
        raise InvalidParameterError(f"kappa must be >= 1, got {kappa}")
    root = math.sqrt(kappa)
    return (root - 1.0) / (root + 1.0)


def boundary_coefficient(kappa: float) -> float:
    """Coefficient a_kappa = (sqrt(kappa) + 3)/(sqrt(kappa) + 1) of the last chain coordinate."""
    if not kappa >= 1:
        raise InvalidParameterError(f"kappa must be >= 1, got {kappa}")
    root = math.sqrt(kappa)
    return (root + 3.0) / (root + 1.0)


def rate_constants(kappa: float) -> RateConstants:
    return RateConstants(kappa=kappa, q=q_factor(kappa), a_kappa=boundary_coefficient(kappa))


def _log_geometric(prefactor: float, q: float, exponent: float) -> float:
    if q == 0.0:
        return -math.inf if exponent > 0 else math.log(prefactor)
    return math.log(prefactor) + exponent * math.log(q)


def _geometric(prefactor: float, q: float, exponent: float) -> float:
    if q == 0.0:
        return 0.0 if exponent > 0 else prefactor
    if exponent > LOG_SPACE_EXPONENT:
        return math.exp(_log_geometric(prefactor, q, exponent))
    return prefactor * q ** exponent


def _thm1_terms(mu: float, lam: float, T: int):
    if lam <= 0 or mu <= 8.0 * lam:
        raise InvalidParameterError(f"the flattened construction needs mu > 8*lambda, got mu={mu}, lambda={lam}")
    if T < 0:
        raise InvalidParameterError(f"T must be >= 0, got {T}")
    kappa = mu / (8.0 * lam)
    prefactor = lam / (12.0 * mu * math.sqrt(kappa))
    return prefactor, q_factor(kappa), 2.0 * T


def thm1_envelope(mu: float, lam: float, T: int) -> float:
    """Lower bound lambda/(12 mu sqrt(kappa)) q^{2T} with kappa = mu/(8 lambda).

    Applies to the T-th point of any deterministic algorithm against the
    resisting oracle.
    """
    return _geometric(*_thm1_terms(mu, lam, T))


def log_thm1_envelope(mu: float, lam: float, T: int) -> float:
    return _log_geometric(*_thm1_terms(mu, lam, T))


def _thm2_terms(mu: float, lam: float, n: int, T: int):
    if T < 1:
        raise InvalidParameterError(f"T must be >= 1, got {T}")
    kappa = condition_number(mu, lam, n, allow_degenerate=True)
    prefactor = lam / (2.0 * mu * math.sqrt(kappa))
    return prefactor, q_factor(kappa), 4.0 * (T - 1) / n + 4.0


def thm2_envelope(mu: float, lam: float, n: int, T: int) -> float:
    """Lower bound lambda/(2 mu sqrt(kappa)) q^{4(T-1)/n + 4} for oblivious linear-algebraic methods."""
    return _geometric(*_thm2_terms(mu, lam, n, T))


def log_thm2_envelope(mu: float, lam: float, n: int, T: int) -> float:
    return _log_geometric(*_thm2_terms(mu, lam, n, T))


def recommended_dimension(n: int, T: int) -> int:
    """Smallest dimension d with d >= 2(1 + 2(T-1)/n)."""
    if n < 1 or T < 1:
        raise InvalidParameterError(f"need n >= 1 and T >= 1, got n={n}, T={T}")
    return math.ceil(2.0 * (1.0 + 2.0 * (T - 1) / n))


def thm3_envelope(mu: float, lam: float, n: int, T: int, d: int) -> float:
    """Block-instance bound; same form as thm2_envelope, valid once d reaches ``recommended_dimension``."""
    needed = recommended_dimension(n, T)
    if d < needed:
        raise InvalidParameterError(f"block envelope at T={T}, n={n} needs d >= {needed}, got {d}")
    return thm2_envelope(mu, lam, n, T)


def thm_call_thresholds(
    params: ProblemParams,
    c: Optional[float] = None,
    c_prime: Optional[float] = None,
) -> CallThresholds:
    """Symbolic call thresholds of both lower bounds.

    The universal constants are not fixed by the analysis; they default to the
    configured ``threshold_c``/``threshold_c_prime``. T1 is left unset when
    mu <= 8 lambda. Both numbers are advisory and never asserted.

    Args:
        params: Problem parameters (epsilon is the target accuracy)
        c: Multiplicative constant of T1
        c_prime: Constant inside the logarithm of T1

    Returns:
        CallThresholds with t1 (optional) and t2
    """
    c = settings.threshold_c if c is None else c
    c_prime = settings.threshold_c_prime if c_prime is None else c_prime
    if params.degenerate:
        raise InvalidParameterError("call thresholds need mu > lambda")

    ratio = params.lam / params.mu
    t1 = None
    if params.mu > 8.0 * params.lam:
        t1 = c * (math.sqrt(params.mu / (8.0 * params.lam)) - 1.0) * math.log(ratio ** 1.5 / (c_prime * params.epsilon))
    else:
        logger.debug("T1 threshold skipped: mu=%s <= 8*lambda=%s", params.mu, 8.0 * params.lam)

    n = params.n
    t2 = n + math.sqrt(n * params.mu / params.lam) * math.log(ratio ** 1.5 * math.sqrt(n) / params.epsilon)
    return CallThresholds(t1=t1, t2=t2, c=c, c_prime=c_prime)
