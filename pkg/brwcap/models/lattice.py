"""
Finite-support step distributions on Z^d.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Dict, Optional, Sequence

import numpy as np

from brwcap.utils.errors import InvalidDistributionError

logger = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-12
MEAN_TOLERANCE = 1e-12
PERIOD_SEARCH_STEPS = 12
PERIOD_SEARCH_PAIRS = 2 * 10 ** 7


class AliasTable:
    """Vose alias table for O(1) draws from a finite distribution"""

    def __init__(self, probabilities: Sequence[float]):
        weights = np.asarray(probabilities, dtype=np.float64)
        n = weights.size
        if n == 0 or weights.sum() <= 0:
            raise InvalidDistributionError("Alias table needs positive total probability")
        scaled = weights * n / weights.sum()

        prob = np.ones(n)
        alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] -= 1.0 - scaled[s]
            if scaled[g] < 1.0:
                small.append(g)
            else:
                large.append(g)
        # leftovers are 1 up to rounding
        for i in small + large:
            prob[i] = 1.0
            alias[i] = i

        self.prob = prob
        self.alias = alias

    def __len__(self):
        return self.prob.size

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` indices."""
        column = rng.integers(0, self.prob.size, size=size)
        keep = rng.random(size) < self.prob[column]
        return np.where(keep, column, self.alias[column])


def lattice_index(vectors: np.ndarray) -> int:
    """
    Index [Z^d : L] of the lattice L spanned by integer ``vectors``.

    Integer row reduction column by column (Hermite form); returns 0 when the
    vectors do not span a full-rank lattice.
    """
    rows = [[int(v) for v in row] for row in np.asarray(vectors)]
    rows = [r for r in rows if any(r)]
    if not rows:
        return 0
    d = len(rows[0])
    pivots = []
    for col in range(d):
        while True:
            nonzero = [r for r in rows if r[col] != 0]
            if len(nonzero) <= 1:
                break
            nonzero.sort(key=lambda r: abs(r[col]))
            pivot = nonzero[0]
            for r in nonzero[1:]:
                q = r[col] // pivot[col]
                for k in range(d):
                    r[k] -= q * pivot[k]
            rows = [r for r in rows if any(r)]
        nonzero = [r for r in rows if r[col] != 0]
        if not nonzero:
            return 0
        pivot = nonzero[0]
        pivots.append(abs(pivot[col]))
        rows = [r for r in rows if r is not pivot]
    return reduce(lambda a, b: a * b, pivots, 1)


def _pack(points: np.ndarray, bound: int) -> np.ndarray:
    base = 2 * bound + 1
    keys = np.zeros(points.shape[0], dtype=np.int64)
    for axis in range(points.shape[1]):
        keys = keys * base + (points[:, axis] + bound)
    return keys


def return_time_period(points: np.ndarray, max_steps: int = PERIOD_SEARCH_STEPS) -> Optional[int]:
    """
    gcd of the times n <= max_steps at which the walk can sit at the origin.

    Breadth-first search over reachable sets; a return at time n is detected
    as R_{n-1} meeting -support, so R_n itself is only built when needed.
    Returns None if the search is cut off before any return is seen.
    """
    points = np.asarray(points, dtype=np.int64)
    step = int(np.abs(points).max()) if points.size else 0
    bound = step * max_steps + 1
    if (2 * bound + 1) ** points.shape[1] >= 2 ** 62:
        return None
    negated = np.sort(_pack(-points, bound))

    reach = np.zeros((1, points.shape[1]), dtype=np.int64)
    period = 0
    for n in range(1, max_steps + 1):
        keys = _pack(reach, bound)
        if np.isin(keys, negated, assume_unique=False).any():
            period = math.gcd(period, n)
            if period == 1:
                return 1
        if reach.shape[0] * points.shape[0] > PERIOD_SEARCH_PAIRS:
            break
        reach = np.unique((reach[:, None, :] + points[None, :, :]).reshape(-1, points.shape[1]), axis=0)
    return period or None


@dataclass(eq=False)
class LatticeStepDistribution:
    """
    Step law on Z^d with finite support.

    ``declared`` may pin any of the flags symmetric / aperiodic / irreducible;
    a declared flag that the verification contradicts is rejected.
    """
    name: str
    points: np.ndarray
    probabilities: np.ndarray
    declared: Dict[str, bool] = field(default_factory=dict)
    symmetric: bool = field(init=False)
    aperiodic: bool = field(init=False)
    irreducible: bool = field(init=False)
    period: Optional[int] = field(init=False)
    hyperoctahedral: bool = field(init=False)
    covariance: np.ndarray = field(init=False, repr=False)
    mean: np.ndarray = field(init=False, repr=False)
    max_norm: float = field(init=False)
    max_step: int = field(init=False)
    alias: AliasTable = field(init=False, repr=False)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.int64)
        probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if points.ndim != 2 or points.shape[0] != probabilities.size:
            raise InvalidDistributionError(f"{self.name}: points and probabilities do not match")
        if np.any(probabilities < 0):
            raise InvalidDistributionError(f"{self.name}: negative probability")

        # merge repeated support points, drop null ones
        unique, inverse = np.unique(points, axis=0, return_inverse=True)
        merged = np.zeros(unique.shape[0])
        np.add.at(merged, inverse.reshape(-1), probabilities)
        keep = merged > 0
        self.points = unique[keep]
        self.probabilities = merged[keep]

        if abs(self.probabilities.sum() - 1.0) > SUM_TOLERANCE:
            raise InvalidDistributionError(
                f"{self.name}: probabilities sum to {self.probabilities.sum()!r}, not 1")
        self.mean = self.probabilities @ self.points
        if np.max(np.abs(self.mean)) > MEAN_TOLERANCE:
            raise InvalidDistributionError(f"{self.name}: mean {self.mean} is not zero")

        centered = self.points - self.mean
        self.covariance = (centered * self.probabilities[:, None]).T @ centered
        self.max_norm = float(np.sqrt((self.points ** 2).sum(axis=1)).max())
        self.max_step = int(np.abs(self.points).max())

        self.symmetric = self._check_symmetric()
        self.irreducible = lattice_index(self.points) == 1
        self.period = return_time_period(self.points)
        if self.period is None:
            # a full-rank difference lattice has index equal to the period
            index = lattice_index(self.points[1:] - self.points[0]) if self.points.shape[0] > 1 else 0
            self.period = index or None
            logger.debug(f"{self.name}: period from difference lattice = {self.period}")
        self.aperiodic = self.period == 1
        self.hyperoctahedral = self._check_hyperoctahedral()

        for flag, value in self.declared.items():
            actual = getattr(self, flag)
            if bool(value) != actual:
                raise InvalidDistributionError(
                    f"{self.name}: declared {flag}={value} but verification gives {actual}")

        self.alias = AliasTable(self.probabilities)

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    def as_dict(self) -> Dict[tuple, float]:
        return {tuple(int(c) for c in p): float(q) for p, q in zip(self.points, self.probabilities)}

    def _is_invariant(self, transform) -> bool:
        table = self.as_dict()
        for point, prob in table.items():
            if table.get(transform(point)) != prob:
                return False
        return True

    def _check_symmetric(self) -> bool:
        return self._is_invariant(lambda p: tuple(-c for c in p))

    def _check_hyperoctahedral(self) -> bool:
        d = self.dim
        generators = [lambda p: (-p[0],) + p[1:],
                      lambda p: p[1:] + p[:1]]
        if d > 1:
            generators.append(lambda p: (p[1], p[0]) + p[2:])
        return all(self._is_invariant(g) for g in generators)

    def nearest_neighbour(self) -> bool:
        """True when every step is 0 or +-e_i"""
        return bool(np.all(np.abs(self.points).sum(axis=1) <= 1))

    # ------------------------------------------------------------------
    # Shipped laws

    @classmethod
    def srw(cls, dim: int) -> "LatticeStepDistribution":
        eye = np.eye(dim, dtype=np.int64)
        points = np.vstack([eye, -eye])
        return cls(name="srw", points=points, probabilities=np.full(2 * dim, 1.0 / (2 * dim)))

    @classmethod
    def lazy_srw(cls, dim: int, alpha: float = 0.5) -> "LatticeStepDistribution":
        if not 0 <= alpha < 1:
            raise InvalidDistributionError(f"lazy-srw holding probability must lie in [0, 1), got {alpha}")
        eye = np.eye(dim, dtype=np.int64)
        points = np.vstack([np.zeros((1, dim), dtype=np.int64), eye, -eye])
        probs = np.concatenate([[alpha], np.full(2 * dim, (1.0 - alpha) / (2 * dim))])
        return cls(name=f"lazy-srw:{alpha:g}", points=points, probabilities=probs)

    @classmethod
    def uniform_box(cls, dim: int, radius: int = 1) -> "LatticeStepDistribution":
        if radius < 1:
            raise InvalidDistributionError(f"uniform-box radius must be >= 1, got {radius}")
        axis = range(-radius, radius + 1)
        points = np.array([p for p in itertools.product(axis, repeat=dim) if any(p)], dtype=np.int64)
        probs = np.full(points.shape[0], 1.0 / points.shape[0])
        return cls(name=f"uniform-box:{radius}", points=points, probabilities=probs)


def parse_step_distribution(spec: str, dim: int) -> LatticeStepDistribution:
    """Parse ``srw``, ``lazy-srw:alpha`` or ``uniform-box:r`` for dimension ``dim``."""
    name, _, param = spec.strip().partition(":")
    name = name.lower()
    if dim < 1:
        raise InvalidDistributionError(f"dimension must be positive, got {dim}")
    if dim not in (3, 4, 5):
        logger.warning(f"Dimension {dim} is outside the supported range 3..5")
    try:
        if name == "srw":
            return LatticeStepDistribution.srw(dim)
        if name == "lazy-srw":
            return LatticeStepDistribution.lazy_srw(dim, float(param) if param else 0.5)
        if name == "uniform-box":
            return LatticeStepDistribution.uniform_box(dim, int(param) if param else 1)
    except ValueError as e:
        if isinstance(e, InvalidDistributionError):
            raise
        raise InvalidDistributionError(f"Bad step specification {spec!r}: {e}") from e
    raise InvalidDistributionError(f"Unknown step distribution {spec!r}")
