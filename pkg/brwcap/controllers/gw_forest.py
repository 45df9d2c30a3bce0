"""
Galton-Watson forest construction and tree-metric queries.

Every sampler draws i.i.d. offspring counts in depth-first order and hands
them to forest_from_offspring, which decodes the Lukasiewicz path into parents,
depths and subtree blocks.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from brwcap.models.forest import Forest, forest_array_bytes
from brwcap.models.offspring import OffspringDistribution
from brwcap.utils.config import Config, default_config
from brwcap.utils.errors import (AcceptanceFloorError, ForestInvariantError, ForestSizeError,
                                 InvalidDistributionError, QuadraticCostError)
from brwcap.utils.memory_monitor import memory_monitor
from brwcap.utils.seeding import make_rng

logger = logging.getLogger(__name__)

MIN_CHUNK = 1024
MAX_MULTINOMIAL_BATCH = 1 << 16
LADDER_BATCH_CELLS = 1 << 22


# ----------------------------------------------------------------------
# Encoding


def lukasiewicz_from_counts(counts: np.ndarray) -> np.ndarray:
    """Y_0 = 0, Y_k = sum_{i<k} (counts_i - 1)"""
    counts = np.asarray(counts, dtype=np.int64)
    path = np.zeros(counts.size + 1, dtype=np.int64)
    np.cumsum(counts - 1, out=path[1:])
    return path


def hitting_times(path: np.ndarray) -> np.ndarray:
    """inf{k >= 1 : Y_k = -m} for m = 1, 2, ... as far as the path reaches"""
    path = np.asarray(path, dtype=np.int64)
    running_min = np.minimum.accumulate(path)
    return np.flatnonzero(path[1:] < running_min[:-1]) + 1


def forest_from_offspring(counts, complete: bool = True, spine_tail: bool = True) -> Forest:
    """
    Decode DFS-ordered offspring counts into a Forest.

    Block m starts where the Lukasiewicz path first reaches -m. With
    ``complete`` the counts must close their last block exactly; with
    ``spine_tail`` the next spine vertex is appended after it. Otherwise the
    counts are a DFS prefix and the last block may be open.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 1 or counts.size == 0:
        raise ValueError("offspring counts must be a non-empty vector")
    if np.any(counts < 0):
        raise ValueError("offspring counts must be non-negative")

    n = counts.size
    path = lukasiewicz_from_counts(counts)
    running_min = np.minimum.accumulate(path)
    completed = int(-running_min[n])
    if complete and not path[n] < running_min[n - 1]:
        raise ValueError("offspring counts do not close their last subtree")

    offsets = np.concatenate([[0], hitting_times(path)]).astype(np.int64)
    add_tail = complete and spine_tail
    total = n + 1 if add_tail else n
    memory_monitor.check_allocation(forest_array_bytes(total), f"forest with {total} vertices")

    # parent of u_i is the last j < i with Y_j <= Y_i; block roots hang off the spine
    levels = path[:n].tolist()
    blocks = (-running_min[:n]).tolist()
    parent = [0] * total
    depth = [0] * total
    stack: List[int] = []
    spine_root = -1
    for i in range(n):
        y = levels[i]
        while stack and levels[stack[-1]] > y:
            stack.pop()
        if stack:
            p = stack[-1]
            parent[i] = p
            depth[i] = depth[p] + 1
        else:
            parent[i] = spine_root
            depth[i] = blocks[i]
            spine_root = i
        stack.append(i)

    spine_index = np.empty(total, dtype=np.int32)
    spine_index[:n] = -running_min[:n]
    offspring = np.empty(total, dtype=np.int32)
    offspring[:n] = counts
    if add_tail:
        parent[n] = spine_root
        depth[n] = completed
        spine_index[n] = completed
        offspring[n] = -1

    is_spine = np.zeros(total, dtype=bool)
    is_spine[offsets[offsets < total]] = True

    return Forest(parent=np.asarray(parent, dtype=np.int32),
                  depth=np.asarray(depth, dtype=np.int32),
                  spine_index=spine_index,
                  is_spine=is_spine,
                  subtree_offsets=offsets,
                  offspring=offspring,
                  complete=complete)


def _extend_to_level(mu: OffspringDistribution, rng: np.random.Generator,
                     level: int, target: int, budget: int, chunk: int,
                     partial: bool = False) -> List[np.ndarray]:
    """
    Draw offspring counts until the Lukasiewicz walk first reaches ``target``.

    With ``partial`` an exhausted budget returns what was drawn instead of raising.
    """
    pieces = []
    drawn = 0
    while level > target:
        size = min(chunk, budget - drawn)
        if size <= 0:
            if partial:
                return pieces
            raise ForestSizeError(
                f"Forest exceeds the vertex ceiling while waiting for level {target} "
                f"(walk at {level} after {drawn} extra vertices)")
        draws = mu.sample(rng, size)
        walk = level + np.cumsum(draws - 1)
        hit = np.flatnonzero(walk <= target)
        if hit.size:
            pieces.append(draws[: hit[0] + 1])
            break
        pieces.append(draws)
        drawn += size
        level = int(walk[-1])
        chunk *= 2
    return pieces


def _check_level(config: Config) -> float:
    return 1.0 if config.get("debug_checks") else float(config.get("release_check_fraction"))


def build_forest_by_vertices(mu: OffspringDistribution, n_vertices: int, rng,
                             complete_subtree: bool = True,
                             config: Optional[Config] = None) -> Forest:
    """
    Forest holding u_0 .. u_{n_vertices-1}.

    With ``complete_subtree`` the forest is extended to the end of the block
    containing u_{n_vertices-1} and the next spine vertex is appended. Without
    it the forest is exactly that DFS prefix.
    """
    if n_vertices < 1:
        raise ValueError(f"n_vertices must be positive, got {n_vertices}")
    config = config or default_config()
    ceiling = int(config.get("forest_vertex_ceiling"))
    if n_vertices > ceiling:
        raise ForestSizeError(f"{n_vertices} vertices requested, ceiling is {ceiling}")
    rng = make_rng(rng)

    counts = mu.sample(rng, n_vertices)
    if complete_subtree:
        steps = counts - 1
        lowest = min(0, int(np.cumsum(steps[:-1]).min())) if n_vertices > 1 else 0
        target = lowest - 1
        level = int(steps.sum())
        extra = _extend_to_level(mu, rng, level, target, ceiling - n_vertices,
                                 max(MIN_CHUNK, n_vertices))
        counts = np.concatenate([counts] + extra)

    forest = forest_from_offspring(counts, complete=complete_subtree)
    validate_forest(forest, _check_level(config))
    logger.debug(f"Built forest: {forest.num_vertices} vertices, {forest.num_subtrees} subtrees")
    return forest


def build_forest_by_subtrees(mu: OffspringDistribution, m: int, rng,
                             config: Optional[Config] = None, allow_partial: bool = False) -> Forest:
    """
    Forest made of T_0 .. T_{m-1} followed by the spine vertex w_m.

    With ``allow_partial`` a forest that would pass the vertex ceiling is cut
    back to the subtrees completed within it, so num_subtrees may be below m.
    ForestSizeError is still raised when not even T_0 fits.
    """
    if m < 1:
        raise ValueError(f"subtree count must be positive, got {m}")
    config = config or default_config()
    ceiling = int(config.get("forest_vertex_ceiling"))
    rng = make_rng(rng)

    pieces = _extend_to_level(mu, rng, 0, -m, ceiling, max(MIN_CHUNK, 4 * m), partial=allow_partial)
    counts = np.concatenate(pieces) if pieces else np.zeros(0, dtype=np.int64)
    ends = hitting_times(lukasiewicz_from_counts(counts))
    if ends.size < m:
        if ends.size == 0:
            raise ForestSizeError(f"T_0 alone exceeds the vertex ceiling {ceiling}")
        logger.warning(f"Vertex ceiling {ceiling} reached after {ends.size} of {m} subtrees; "
                       f"keeping the completed ones")
        counts = counts[: ends[-1]]
    forest = forest_from_offspring(counts, complete=True)
    validate_forest(forest, _check_level(config))
    logger.debug(f"Built {m} subtrees: {forest.num_vertices} vertices")
    return forest


# ----------------------------------------------------------------------
# Conditioned trees


def lattice_span(mu: OffspringDistribution) -> int:
    support = np.flatnonzero(mu.pmf > 0)
    return int(np.gcd.reduce(support - support[0])) if support.size > 1 else 0


def conditioned_acceptance(mu: OffspringDistribution, n: int) -> float:
    """
    Local-limit estimate of P(sum of n offspring counts = n - 1).

    Zero when the lattice span of mu makes total progeny n impossible.
    """
    span = lattice_span(mu)
    first = int(np.flatnonzero(mu.pmf > 0)[0])
    if span == 0 or (n * (first - 1) + 1) % span != 0:
        return 0.0
    return min(1.0, span / math.sqrt(2.0 * math.pi * n * mu.variance))


def sample_conditioned_tree(mu: OffspringDistribution, n: int, rng,
                            config: Optional[Config] = None) -> Forest:
    """
    GW tree conditioned on exactly n vertices.

    Rejection-sample an offspring histogram whose Lukasiewicz bridge ends at
    -1, shuffle it, then rotate to start right after the first minimum of the
    partial sums (cycle lemma).
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if mu.pmf[0] <= 0:
        raise InvalidDistributionError(f"{mu.name}: conditioning needs mu(0) > 0")
    if n == 1:
        return forest_from_offspring([0], complete=True, spine_tail=False)

    config = config or default_config()
    rng = make_rng(rng)
    acceptance = conditioned_acceptance(mu, n)
    floor = float(config.get("conditioned_acceptance_floor"))
    if acceptance < floor:
        raise AcceptanceFloorError(
            f"{mu.name}: acceptance {acceptance:.3g} for n={n} is below the floor {floor:g}")

    support = mu.support
    max_attempts = int(config.get("conditioned_max_attempts"))
    batch = int(min(MAX_MULTINOMIAL_BATCH, max(64, math.ceil(4.0 / acceptance))))
    attempts = 0
    while True:
        if attempts >= max_attempts:
            raise AcceptanceFloorError(
                f"{mu.name}: no bridge accepted for n={n} after {attempts} attempts")
        histograms = rng.multinomial(n, mu.pmf, size=batch)
        accepted = np.flatnonzero(histograms @ support == n - 1)
        attempts += batch
        if accepted.size:
            histogram = histograms[accepted[0]]
            break

    counts = rng.permutation(np.repeat(support, histogram))
    start = int(np.argmin(np.cumsum(counts - 1))) + 1
    counts = np.roll(counts, -start)
    logger.debug(f"Conditioned tree n={n} accepted after {attempts} histogram draws")
    return forest_from_offspring(counts, complete=True, spine_tail=False)


# ----------------------------------------------------------------------
# Distances


class DepthRangeMin:
    """Sparse table answering min(depth[lo..hi]) for arrays of ranges"""

    def __init__(self, depth: np.ndarray):
        levels = [np.asarray(depth, dtype=np.int32)]
        span = 1
        while 2 * span <= levels[0].size:
            previous = levels[-1]
            levels.append(np.minimum(previous[:-span], previous[span:]))
            span *= 2
        self.levels = levels

    def query(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Inclusive ranges, lo <= hi elementwise"""
        lo = np.asarray(lo, dtype=np.int64)
        hi = np.asarray(hi, dtype=np.int64)
        level = np.frexp((hi - lo + 1).astype(np.float64))[1] - 1
        out = np.empty(lo.size, dtype=np.int32)
        for k in np.unique(level):
            sel = level == k
            table = self.levels[int(k)]
            out[sel] = np.minimum(table[lo[sel]], table[hi[sel] - (1 << int(k)) + 1])
        return out


def _range_min(f: Forest) -> DepthRangeMin:
    if f._depth_rmq is None:
        memory_monitor.check_allocation(4 * f.num_vertices * max(1, f.num_vertices.bit_length()),
                                        "depth range-minimum table")
        f._depth_rmq = DepthRangeMin(f.depth)
    return f._depth_rmq


def graph_distance(f: Forest, i: int, j: int) -> int:
    """d(u_i, u_j) by climbing parent pointers to the common ancestor"""
    parent, depth = f.parent, f.depth
    a, b = int(i), int(j)
    while depth[a] > depth[b]:
        a = parent[a]
    while depth[b] > depth[a]:
        b = parent[b]
    while a != b:
        a = parent[a]
        b = parent[b]
    return int(depth[i]) + int(depth[j]) - 2 * int(depth[a])


def graph_distances(f: Forest, i, j) -> np.ndarray:
    """
    Vectorized d(u_i, u_j).

    In DFS preorder the common ancestor of a < b has depth
    min(depth[a], min(depth[a+1..b]) - 1).
    """
    i = np.atleast_1d(np.asarray(i, dtype=np.int64))
    j = np.atleast_1d(np.asarray(j, dtype=np.int64))
    a = np.minimum(i, j)
    b = np.maximum(i, j)
    depth = f.depth.astype(np.int64)
    distance = np.zeros(a.size, dtype=np.int64)
    apart = np.flatnonzero(a != b)
    if apart.size:
        lo, hi = a[apart], b[apart]
        lca = np.minimum(depth[lo], _range_min(f).query(lo + 1, hi).astype(np.int64) - 1)
        distance[apart] = depth[lo] + depth[hi] - 2 * lca
    return distance


@dataclass
class PairDistanceCounts:
    """c[k] = #{(i, j) : 0 <= i <= j <= n, d(u_i, u_j) = k}"""
    counts: np.ndarray
    n: int
    estimated: bool = False
    stderr: Optional[np.ndarray] = None
    samples: int = 0


def pair_distance_counts(f: Forest, n: int, k_max: int, mode: str = "auto",
                         samples: Optional[int] = None, rng=None,
                         config: Optional[Config] = None) -> PairDistanceCounts:
    """
    Distance histogram over pairs among u_0 .. u_n.

    mode "exact" is O(n^2) and refused above the quadratic ceiling; mode
    "sampled" draws ordered pairs uniformly and weights off-diagonal hits by
    1/2, which is unbiased for the unordered count.
    """
    if not 0 <= n < f.num_vertices:
        raise ValueError(f"n={n} outside forest of {f.num_vertices} vertices")
    if k_max < 0:
        raise ValueError("k_max must be non-negative")
    config = config or default_config()
    ceiling = int(config.get("quadratic_ceiling"))
    if mode == "auto":
        mode = "exact" if n <= ceiling else "sampled"

    if mode == "exact":
        if n > ceiling:
            raise QuadraticCostError(f"exact pair counts for n={n} exceed the ceiling {ceiling}")
        depth = f.depth[: n + 1].astype(np.int64)
        counts = np.zeros(k_max + 1, dtype=np.int64)
        counts[0] = n + 1
        for i in range(n):
            tail = depth[i + 1:]
            lca = np.minimum(depth[i], np.minimum.accumulate(tail) - 1)
            distance = depth[i] + tail - 2 * lca
            counts += np.bincount(distance[distance <= k_max], minlength=k_max + 1)
        return PairDistanceCounts(counts=counts, n=n)

    if mode != "sampled":
        raise ValueError(f"unknown pair count mode {mode!r}")
    rng = make_rng(0 if rng is None else rng)
    samples = int(samples or config.get("green_sum_samples"))
    i = rng.integers(0, n + 1, size=samples)
    j = rng.integers(0, n + 1, size=samples)
    distance = graph_distances(f, i, j)
    weight = np.where(i == j, 1.0, 0.5)
    keep = distance <= k_max
    first = np.bincount(distance[keep], weights=weight[keep], minlength=k_max + 1) / samples
    second = np.bincount(distance[keep], weights=weight[keep] ** 2, minlength=k_max + 1) / samples
    scale = float(n + 1) ** 2
    stderr = scale * np.sqrt(np.maximum(second - first ** 2, 0.0) / samples)
    return PairDistanceCounts(counts=scale * first, n=n, estimated=True, stderr=stderr, samples=samples)


def pair_count_bound(k: int, n: int, eps: float, c4: float) -> float:
    """
    Bound on the mean number of pairs at graph distance k among u_0..u_n on F_eps(n).

    (k+1)^2 n^{1/2+eps} + C4 (k+1) n^{1+2 eps}
    """
    return (k + 1) ** 2 * n ** (0.5 + eps) + c4 * (k + 1) * n ** (1.0 + 2.0 * eps)


def max_depth_event(f: Forest, n: int, eps: float) -> bool:
    """max_{0<=i<=n} d(root, u_i) < n^{1/2+eps}"""
    return bool(f.depth[: n + 1].max() < float(n) ** (0.5 + eps))


# ----------------------------------------------------------------------
# Heights


@dataclass
class HeightStats:
    zeta: int
    heights: np.ndarray
    max_depth: int


def height_and_spine_stats(f: Forest, n: int) -> HeightStats:
    """zeta_n, H_0 .. H_n and the maximal depth among u_0 .. u_n"""
    if not 0 <= n < f.num_vertices:
        raise ValueError(f"n={n} outside forest of {f.num_vertices} vertices")
    spine = f.spine_index[: n + 1]
    return HeightStats(zeta=int(spine.max()),
                       heights=(f.depth[: n + 1] - spine).astype(np.int64),
                       max_depth=int(f.depth[: n + 1].max()))


def lukasiewicz_path(f: Forest) -> np.ndarray:
    return f.lukasiewicz_path()


def height_from_lukasiewicz(path: np.ndarray, n: int) -> int:
    """H_n = #{0 <= j < n : Y_j = min_{j<=l<=n} Y_l}"""
    head = np.asarray(path[: n + 1], dtype=np.int64)
    suffix_min = np.minimum.accumulate(head[::-1])[::-1]
    return int(np.count_nonzero(head[:n] == suffix_min[:n]))


def _walk_batches(mu: OffspringDistribution, n: int, size: int, rng):
    rng = make_rng(rng)
    batch = max(1, LADDER_BATCH_CELLS // max(1, n))
    done = 0
    while done < size:
        rows = min(batch, size - done)
        steps = mu.sample(rng, rows * n).reshape(rows, n) - 1
        walk = np.zeros((rows, n + 1), dtype=np.int64)
        np.cumsum(steps, axis=1, out=walk[:, 1:])
        yield done, walk
        done += rows


def ladder_epoch_count(mu: OffspringDistribution, n: int, size: int, rng) -> np.ndarray:
    """#{1 <= k <= n : Y_k = max_{0<=j<=k} Y_j} for ``size`` independent walks"""
    out = np.empty(size, dtype=np.int64)
    for start, walk in _walk_batches(mu, n, size, rng):
        running_max = np.maximum.accumulate(walk, axis=1)
        out[start:start + walk.shape[0]] = np.count_nonzero(walk[:, 1:] == running_max[:, 1:], axis=1)
    return out


def height_samples(mu: OffspringDistribution, n: int, size: int, rng) -> np.ndarray:
    """H_n of ``size`` independent forests, read off their Lukasiewicz paths"""
    out = np.empty(size, dtype=np.int64)
    for start, walk in _walk_batches(mu, n, size, rng):
        suffix_min = np.minimum.accumulate(walk[:, ::-1], axis=1)[:, ::-1]
        out[start:start + walk.shape[0]] = np.count_nonzero(walk[:, :n] == suffix_min[:, :n], axis=1)
    return out


def generation_sizes(mu: OffspringDistribution, k_max: int, n_trees: int, rng) -> np.ndarray:
    """Z_1 .. Z_{k_max} for ``n_trees`` independent GW trees, shape (n_trees, k_max)"""
    rng = make_rng(rng)
    sizes = np.zeros((n_trees, k_max), dtype=np.int64)
    current = np.ones(n_trees, dtype=np.int64)
    owners = np.arange(n_trees)
    for k in range(k_max):
        total = int(current.sum())
        if total == 0:
            break
        draws = mu.sample(rng, total)
        current = np.bincount(np.repeat(owners, current), weights=draws,
                              minlength=n_trees).astype(np.int64)
        sizes[:, k] = current
    return sizes


# ----------------------------------------------------------------------
# Invariants


def validate_forest(f: Forest, fraction: float = 1.0, rng=None):
    """
    Check the structural invariants on a fraction of the vertices.

    The Lukasiewicz hitting-time identity is always checked in full.
    """
    n = f.num_vertices
    if n == 0 or f.parent[0] != -1 or f.depth[0] != 0:
        raise ForestInvariantError("u_0 must be the root at depth 0")

    if fraction >= 1.0:
        idx = np.arange(1, n)
    else:
        rng = make_rng(0 if rng is None else rng)
        size = min(n - 1, max(1, int(fraction * n)))
        idx = np.sort(rng.choice(np.arange(1, n), size=size, replace=False)) if n > 1 else np.arange(0)

    parent = f.parent[idx].astype(np.int64)
    if np.any(parent < 0) or np.any(parent >= idx):
        raise ForestInvariantError("parent index must precede the child")
    if np.any(f.depth[idx] != f.depth[parent] + 1):
        raise ForestInvariantError("depth must exceed the parent depth by one")

    offsets = f.subtree_offsets
    block = np.searchsorted(offsets, idx, side="right") - 1
    if np.any(f.spine_index[idx] != block):
        raise ForestInvariantError("spine_index does not match the subtree blocks")
    heights = f.depth[idx] - f.spine_index[idx]
    if np.any(heights < 0) or np.any(heights[f.is_spine[idx]] != 0):
        raise ForestInvariantError("depth must split as spine coordinate plus height")

    spine = f.is_spine[idx]
    same_block = f.spine_index[parent] == f.spine_index[idx]
    if np.any(~same_block & ~spine):
        raise ForestInvariantError("non-spine vertex has a parent outside its block")
    if np.any(spine & ~(f.is_spine[parent] & (f.spine_index[parent] == f.spine_index[idx] - 1))):
        raise ForestInvariantError("spine vertex w_m must be the child of w_{m-1}")

    expected = hitting_times(f.lukasiewicz_path())
    if not np.array_equal(expected, offsets[1:]):
        raise ForestInvariantError("subtree offsets differ from the Lukasiewicz hitting times")
