"""
Capacity of finite lattice sets: exact solve, Monte Carlo escape and bounds.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, onenormest
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from brwcap.controllers.green import GreenEvaluator
from brwcap.models.lattice import LatticeStepDistribution
from brwcap.models.records import CapacityResult
from brwcap.utils.config import Config, default_config
from brwcap.utils.errors import CapacitySolveError, QuadraticCostError
from brwcap.utils.seeding import make_rng

logger = logging.getLogger(__name__)

ESCAPE_SLACK = 1e-9
EXACT_NORM_SIZE = 64
ROW_BLOCK_CELLS = 1 << 20
EXACT_DIAMETER_POINTS = 2000


def distinct_points(points) -> np.ndarray:
    points = np.asarray(points, dtype=np.int64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("need a non-empty (m, d) array of lattice points")
    return np.unique(points, axis=0)


def multiset_weights(seq) -> tuple:
    """Distinct points of a position sequence with their multiplicities"""
    seq = np.asarray(seq, dtype=np.int64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise ValueError("need a non-empty (n, d) position sequence")
    points, counts = np.unique(seq, axis=0, return_counts=True)
    return points, counts.astype(np.float64)


def weighted_row_sums(ev: GreenEvaluator, rows: np.ndarray, cols: np.ndarray,
                      weights: Optional[np.ndarray] = None) -> np.ndarray:
    """sum_j w_j G(rows_i, cols_j) for every row, without holding the full matrix"""
    if weights is None:
        weights = np.ones(cols.shape[0])
    out = np.empty(rows.shape[0])
    block = max(1, ROW_BLOCK_CELLS // max(1, cols.shape[0]))
    for start in range(0, rows.shape[0], block):
        chunk = rows[start:start + block]
        out[start:start + chunk.shape[0]] = ev.green_matrix(chunk, cols) @ weights
    return out


def set_diameter(points: np.ndarray) -> float:
    """Euclidean diameter; twice the centroid radius above EXACT_DIAMETER_POINTS"""
    if points.shape[0] < 2:
        return 0.0
    if points.shape[0] <= EXACT_DIAMETER_POINTS:
        return float(pdist(points.astype(np.float64)).max())
    centroid = points.mean(axis=0)
    return 2.0 * float(np.sqrt(((points - centroid) ** 2).sum(axis=1)).max())


# ----------------------------------------------------------------------
# Exact solve


def cap_exact(A, ev: GreenEvaluator, config: Optional[Config] = None) -> CapacityResult:
    """
    Solve G_A esc = 1 on the distinct points of A; capacity is sum(esc).

    Cholesky for symmetric eta, LU with partial pivoting otherwise.
    """
    config = config or default_config()
    points = distinct_points(A)
    m = points.shape[0]
    ceiling = int(config.get("solve_ceiling"))
    if m > ceiling:
        raise QuadraticCostError(f"exact capacity of {m} points exceeds the solve ceiling {ceiling}")

    matrix = ev.green_matrix(points)
    ones = np.ones(m)
    try:
        if ev.dist.symmetric:
            factor = linalg.cho_factor(matrix, lower=False, check_finite=True)

            def solve(b, transpose=False):
                return linalg.cho_solve(factor, b)
            factorization = "cholesky"
        else:
            factor = linalg.lu_factor(matrix, check_finite=True)

            def solve(b, transpose=False):
                return linalg.lu_solve(factor, b, trans=1 if transpose else 0)
            factorization = "lu"
    except (linalg.LinAlgError, ValueError) as e:
        raise CapacitySolveError(f"Green matrix of {m} points could not be factorized: {e}") from e

    if m <= EXACT_NORM_SIZE:
        inverse_norm = float(np.abs(solve(np.eye(m))).sum(axis=0).max())
    else:
        operator = LinearOperator((m, m), matvec=solve,
                                  rmatvec=lambda b: solve(b, transpose=True), dtype=np.float64)
        inverse_norm = float(onenormest(operator))
    condition = float(np.abs(matrix).sum(axis=0).max()) * inverse_norm
    if not np.isfinite(condition) or condition > float(config.get("condition_ceiling")):
        raise CapacitySolveError(
            f"Green matrix of {m} points is ill-conditioned (estimate {condition:.3e}); "
            f"check for a Green table inconsistency")

    escape = solve(ones)
    if np.any(escape < -ESCAPE_SLACK) or np.any(escape > 1.0 + ESCAPE_SLACK):
        worst = escape[np.argmax(np.abs(escape - 0.5))]
        raise CapacitySolveError(f"escape probability {worst!r} outside [0, 1]: Green values inconsistent")

    residual = float(np.abs(matrix @ escape - ones).max())
    value = float(escape.sum())
    logger.debug(f"cap_exact: {m} points, value {value:.6f}, residual {residual:.2e}, condition {condition:.2e}")
    return CapacityResult(value=value, method="exact-solve", error=inverse_norm * m * residual,
                          escape_probs=escape,
                          params={"points": m, "residual": residual, "condition": condition,
                                  "factorization": factorization})


# ----------------------------------------------------------------------
# Monte Carlo


class _Membership:
    """Vectorized 'is this position in A' via packed keys inside A's bounding box"""

    def __init__(self, points: np.ndarray):
        self.low = points.min(axis=0)
        self.high = points.max(axis=0)
        self.base = (self.high - self.low + 1).astype(np.int64)
        self.keys = np.sort(self._pack(points))

    def _pack(self, points: np.ndarray) -> np.ndarray:
        shifted = points - self.low
        keys = np.zeros(points.shape[0], dtype=np.int64)
        for axis in range(points.shape[1]):
            keys = keys * self.base[axis] + shifted[:, axis]
        return keys

    def contains(self, positions: np.ndarray) -> np.ndarray:
        inside = np.all((positions >= self.low) & (positions <= self.high), axis=1)
        result = np.zeros(positions.shape[0], dtype=bool)
        if np.any(inside):
            keys = self._pack(positions[inside])
            pos = np.minimum(np.searchsorted(self.keys, keys), self.keys.size - 1)
            result[inside] = self.keys[pos] == keys
        return result


def cap_monte_carlo(A, eta: LatticeStepDistribution, ev: GreenEvaluator, rng,
                    walkers: Optional[int] = None, radius_factor: Optional[float] = None,
                    config: Optional[Config] = None) -> CapacityResult:
    """
    Escape frequencies of W walkers per source point.

    A walker escapes when it leaves the ball of radius rho (diam + 1) around
    the centroid before returning to A. The reported error is
    ``sigma + bias + pending``:

    * ``sigma`` is the 1-sigma binomial spread of the escape frequencies,
      with a finite-population term when only some sources are walked.
    * ``bias`` bounds the escapes counted for walkers that leave the ball
      and later return to A, which the estimate wrongly keeps. A walker
      outside the ball is at least ``sep = (rho - 1) (diam + 1)`` from every
      point of A, so it hits A with probability at most
      ``m C_d,eta (sep / sqrt(lambda_max(Sigma)))^-(d-2)``, the Green
      function asymptote summed over the m points. ``bias`` is ``value``
      times that probability, clipped at 1.
    * ``pending`` is the largest share of the estimate the walkers still
      running at the step budget could add.
    """
    config = config or default_config()
    walkers = int(walkers or config.get("mc_walkers"))
    rho = float(radius_factor or config.get("mc_radius_factor"))
    if rho < 2:
        raise ValueError(f"radius factor must be at least 2, got {rho}")
    rng = make_rng(rng)
    points = distinct_points(A)
    m, d = points.shape

    diameter = set_diameter(points)
    centroid = points.mean(axis=0)
    radius = rho * (diameter + 1.0)

    max_sources = int(config.get("mc_max_sources"))
    if m > max_sources:
        sources = np.sort(rng.choice(m, size=max_sources, replace=False))
    else:
        sources = np.arange(m)
    k = sources.size

    membership = _Membership(points)
    owner = np.repeat(np.arange(k), walkers)
    position = np.repeat(points[sources], walkers, axis=0)
    escaped = np.zeros(owner.size, dtype=bool)
    resolved = np.zeros(owner.size, dtype=bool)
    active = np.arange(owner.size)
    step_budget = max(1, int(float(config.get("mc_step_budget")) // walkers))
    steps_taken = 0

    while active.size and steps_taken < step_budget:
        moves = eta.points[eta.alias.sample(rng, active.size)]
        position[active] += moves
        here = position[active]
        out = ((here - centroid) ** 2).sum(axis=1) > radius ** 2
        back = ~out & membership.contains(here)
        escaped[active[out]] = True
        resolved[active[out | back]] = True
        active = active[~(out | back)]
        steps_taken += 1

    unresolved = int(active.size)
    if unresolved:
        logger.warning(f"cap_monte_carlo: {unresolved} walkers still running after {step_budget} steps")

    escapes = np.bincount(owner, weights=escaped.astype(np.float64), minlength=k)
    frequency = escapes / walkers
    scale = m / k
    value = scale * float(frequency.sum())
    variance = scale ** 2 * float((frequency * (1.0 - frequency)).sum()) / walkers
    if k < m and k > 1:
        variance += m ** 2 * (1.0 - k / m) * float(frequency.var(ddof=1)) / k
    sigma = math.sqrt(variance)

    separation = (rho - 1.0) * (diameter + 1.0)
    largest_scale = math.sqrt(float(np.linalg.eigvalsh(eta.covariance).max()))
    return_chance = min(1.0, m * ev.c_d_eta * (separation / largest_scale) ** (-(d - 2)))
    bias = value * return_chance
    pending = scale * unresolved / walkers

    return CapacityResult(value=value, method="monte-carlo", error=sigma + bias + pending,
                          params={"walkers": walkers, "radius_factor": rho, "radius": radius,
                                  "sources": k, "sigma": sigma, "bias": bias,
                                  "unresolved": unresolved, "steps": steps_taken,
                                  "partial": bool(unresolved)})


# ----------------------------------------------------------------------
# Bounds and Green sums


@dataclass
class GreenSum:
    value: float
    stderr: float = 0.0
    method: str = "exact"

    def __float__(self):
        return self.value


def green_sum(points, ev: GreenEvaluator, weights=None, config: Optional[Config] = None,
              rng=None) -> GreenSum:
    """
    sum_{x,y} w_x w_y G(x, y).

    Exact double sum up to the ceiling; above it, pairs are drawn with
    probability proportional to w_x w_y and the sum is estimated unbiasedly.
    """
    config = config or default_config()
    points = np.asarray(points, dtype=np.int64)
    weights = np.ones(points.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    total = float(weights.sum())

    if points.shape[0] <= int(config.get("green_sum_ceiling")):
        value = float(weights @ weighted_row_sums(ev, points, points, weights))
        return GreenSum(value=value, method="exact")

    rng = make_rng(0 if rng is None else rng)
    samples = int(config.get("green_sum_samples"))
    probabilities = weights / total
    i = rng.choice(points.shape[0], size=samples, p=probabilities)
    j = rng.choice(points.shape[0], size=samples, p=probabilities)
    values = ev.green_many(points[j] - points[i])
    value = total ** 2 * float(values.mean())
    stderr = total ** 2 * float(values.std(ddof=1)) / math.sqrt(samples)
    return GreenSum(value=value, stderr=stderr, method="sampled")


def cap_lower_bound(A, ev: GreenEvaluator, k="auto", config: Optional[Config] = None,
                    rng=None) -> CapacityResult:
    """#A/(k+1) - sum_{x,y in A} G(x, y) / (k(k+1)); ``k="auto"`` takes ceil(2 sum G / #A)"""
    points = distinct_points(A)
    m = points.shape[0]
    gsum = green_sum(points, ev, config=config, rng=rng)
    if k == "auto":
        k = max(1, int(math.ceil(2.0 * gsum.value / m)))
    k = int(k)
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    value = m / (k + 1) - gsum.value / (k * (k + 1))
    return CapacityResult(value=value, method="lower-bound", error=gsum.stderr / (k * (k + 1)),
                          params={"k": k, "green_sum": gsum.value, "green_sum_method": gsum.method,
                                  "negative": value < 0})


def cap_upper_bound(seq, ev: GreenEvaluator, config: Optional[Config] = None) -> CapacityResult:
    """
    (n+1) / min_i sum_j G(V_i, V_j) over a position sequence with multiplicity.

    Above the quadratic ceiling every row sum is replaced by its near-field
    part, which never exceeds it, so total / min(near) is still an upper
    bound and is the reported value. The full row sums of the candidates with
    the smallest near-field sums only give ``params["sampled"]``: a minimum
    over some rows is not a bound.
    """
    config = config or default_config()
    points, weights = multiset_weights(seq)
    total = float(weights.sum())
    distinct = points.shape[0]

    if distinct <= int(config.get("quadratic_ceiling")):
        sums = weighted_row_sums(ev, points, points, weights)
        return CapacityResult(value=total / float(sums.min()), method="upper-bound",
                              params={"distinct": distinct, "candidates": distinct})

    near_radius = float(config.get("upper_bound_near_radius"))
    tree = cKDTree(points)
    pairs = tree.query_pairs(near_radius, output_type="ndarray")
    near = weights * ev.green(np.zeros(ev.dim, dtype=np.int64))
    if pairs.size:
        diffs = points[pairs[:, 1]] - points[pairs[:, 0]]
        forward = ev.green_many(diffs)
        backward = forward if ev.dist.symmetric else ev.green_many(-diffs)
        near += np.bincount(pairs[:, 0], weights=weights[pairs[:, 1]] * forward, minlength=distinct)
        near += np.bincount(pairs[:, 1], weights=weights[pairs[:, 0]] * backward, minlength=distinct)
    certified = total / float(near.min())

    count = min(distinct, int(config.get("upper_bound_candidates")))
    candidates = np.argsort(near, kind="stable")[:count]
    sums = weighted_row_sums(ev, points[candidates], points, weights)
    sampled = total / float(sums.min())
    return CapacityResult(value=certified, method="upper-bound",
                          params={"distinct": distinct, "candidates": count, "sampled": sampled,
                                  "near_radius": near_radius})
