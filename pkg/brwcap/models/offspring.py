"""
Offspring distributions of critical Galton-Watson trees.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from brwcap.utils.errors import InvalidDistributionError

logger = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-12
MEAN_TOLERANCE = 1e-9
DEFAULT_TRUNCATION = 1e-12
POISSON_CUTOFF = 64


@dataclass(eq=False)
class OffspringDistribution:
    """
    Probability mass function mu(k), k = 0..K-1, of a critical offspring law.

    The constructor validates criticality (mean 1), a positive finite
    variance and normalization; ``truncation_mass`` records the tail that was
    cut off before renormalizing.
    """
    name: str
    pmf: np.ndarray
    truncation_mass: float = 0.0
    cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=np.float64)
        if pmf.ndim != 1 or pmf.size == 0:
            raise InvalidDistributionError(f"{self.name}: pmf must be a non-empty vector")
        if np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
            raise InvalidDistributionError(f"{self.name}: probabilities must be finite and non-negative")
        if abs(pmf.sum() - 1.0) > SUM_TOLERANCE:
            raise InvalidDistributionError(
                f"{self.name}: probabilities sum to {pmf.sum()!r}, not 1")
        if self.truncation_mass >= DEFAULT_TRUNCATION:
            raise InvalidDistributionError(
                f"{self.name}: truncation mass {self.truncation_mass:.3g} is not below {DEFAULT_TRUNCATION}")

        # drop trailing zeros so len(pmf) - 1 is the largest offspring count
        nonzero = np.flatnonzero(pmf)
        pmf = pmf[: nonzero[-1] + 1]
        self.pmf = pmf
        self.cdf = np.cumsum(pmf)

        if abs(self.mean - 1.0) > MEAN_TOLERANCE:
            raise InvalidDistributionError(f"{self.name}: mean {self.mean!r} is not 1 (not critical)")
        if not self.variance > 0:
            raise InvalidDistributionError(f"{self.name}: variance must be positive (mu = delta_1 excluded)")

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.pmf.size)

    @property
    def mean(self) -> float:
        return float(np.dot(self.support, self.pmf))

    @property
    def second_moment(self) -> float:
        """sum_j j^2 mu(j), the constant in the pair-count bound"""
        return float(np.dot(self.support.astype(np.float64) ** 2, self.pmf))

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean ** 2

    @property
    def max_children(self) -> int:
        return self.pmf.size - 1

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` offspring counts by inverse-CDF lookup."""
        draws = np.searchsorted(self.cdf, rng.random(size), side="right")
        return np.minimum(draws, self.max_children).astype(np.int64)

    def increments(self) -> "LukasiewiczIncrement":
        return LukasiewiczIncrement.from_offspring(self)

    def spec(self) -> str:
        return self.name

    # ------------------------------------------------------------------
    # Shipped laws

    @classmethod
    def geometric(cls, p: float = 0.5, truncation: float = DEFAULT_TRUNCATION) -> "OffspringDistribution":
        """mu(k) = p (1-p)^k, truncated where the tail drops below ``truncation``"""
        if not 0 < p < 1:
            raise InvalidDistributionError(f"geometric parameter must lie in (0, 1), got {p}")
        cutoff = int(math.ceil(math.log(truncation) / math.log(1.0 - p))) + 1
        k = np.arange(cutoff)
        pmf = p * (1.0 - p) ** k
        tail = (1.0 - p) ** cutoff
        return cls(name=f"geometric:{p:g}", pmf=pmf / pmf.sum(), truncation_mass=tail)

    @classmethod
    def binary(cls) -> "OffspringDistribution":
        return cls(name="binary", pmf=np.array([0.5, 0.0, 0.5]))

    @classmethod
    def poisson(cls, rate: float = 1.0, cutoff: int = POISSON_CUTOFF) -> "OffspringDistribution":
        k = np.arange(cutoff + 1)
        pmf = stats.poisson.pmf(k, rate)
        tail = float(stats.poisson.sf(cutoff, rate))
        return cls(name=f"poisson:{rate:g}", pmf=pmf / pmf.sum(), truncation_mass=tail)

    @classmethod
    def from_weights(cls, weights, name: Optional[str] = None) -> "OffspringDistribution":
        pmf = np.asarray(weights, dtype=np.float64)
        total = pmf.sum()
        if total <= 0:
            raise InvalidDistributionError("pmf weights must have positive total")
        label = name or "pmf:" + ",".join(f"{w:g}" for w in pmf)
        return cls(name=label, pmf=pmf / total)


@dataclass(eq=False)
class LukasiewiczIncrement:
    """Law of a step Y_1 = k with probability mu(k+1), k >= -1"""
    values: np.ndarray
    probabilities: np.ndarray

    @classmethod
    def from_offspring(cls, mu: OffspringDistribution) -> "LukasiewiczIncrement":
        return cls(values=mu.support - 1, probabilities=mu.pmf.copy())

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probabilities))

    @property
    def variance(self) -> float:
        return float(np.dot(self.values.astype(np.float64) ** 2, self.probabilities)) - self.mean ** 2


def parse_offspring(spec: str, truncation: float = DEFAULT_TRUNCATION) -> OffspringDistribution:
    """
    Parse a ``name:param`` offspring specification.

    Supported: ``geometric:p`` (critical only for p = 0.5), ``binary``,
    ``poisson:rate`` (critical only for rate = 1), ``pmf:p0,p1,...``.
    ``truncation`` is the tail mass at which the geometric law is cut.
    """
    name, _, param = spec.strip().partition(":")
    name = name.lower()
    try:
        if name == "geometric":
            return OffspringDistribution.geometric(float(param) if param else 0.5, truncation=truncation)
        if name == "binary":
            return OffspringDistribution.binary()
        if name == "poisson":
            return OffspringDistribution.poisson(float(param) if param else 1.0)
        if name == "pmf":
            weights = [float(w) for w in param.split(",") if w.strip()]
            return OffspringDistribution.from_weights(weights, name=f"pmf:{param}")
    except ValueError as e:
        if isinstance(e, InvalidDistributionError):
            raise
        raise InvalidDistributionError(f"Bad offspring specification {spec!r}: {e}") from e
    raise InvalidDistributionError(f"Unknown offspring distribution {spec!r}")
