"""
Tree-indexed random walk on a forest and the statistics of its range.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

from brwcap.controllers.lattice_walks import sample_steps
from brwcap.models.forest import Forest
from brwcap.models.lattice import LatticeStepDistribution
from brwcap.utils.memory_monitor import memory_monitor
from brwcap.utils.seeding import make_rng

logger = logging.getLogger(__name__)

POSITION_LIMIT = 2 ** 31 - 1


@dataclass(eq=False)
class PositionedForest:
    """V_{u_i} for every vertex in DFS order, with V_root = 0"""
    forest: Forest
    positions: np.ndarray
    theta: LatticeStepDistribution

    @property
    def dim(self) -> int:
        return int(self.positions.shape[1])

    def increments(self) -> np.ndarray:
        """V_u - V_parent(u) for every non-root vertex"""
        parent = self.forest.parent[1:].astype(np.int64)
        return self.positions[1:].astype(np.int64) - self.positions[parent].astype(np.int64)


def assign_positions(f: Forest, theta: LatticeStepDistribution, rng) -> PositionedForest:
    """
    One independent theta-step per edge.

    Steps are drawn in DFS order, so the result depends only on the seed;
    positions are then filled generation by generation.
    """
    rng = make_rng(rng)
    n = f.num_vertices
    memory_monitor.check_allocation(n * theta.dim * (8 + 8 + 4), "tree walk positions")
    steps = sample_steps(theta, rng, n)
    steps[0] = 0

    positions = np.zeros((n, theta.dim), dtype=np.int64)
    order = np.argsort(f.depth, kind="stable")
    sorted_depth = f.depth[order]
    bounds = np.searchsorted(sorted_depth, np.arange(int(sorted_depth[-1]) + 2))
    parent = f.parent.astype(np.int64)
    for level in range(1, bounds.size - 1):
        members = order[bounds[level]:bounds[level + 1]]
        positions[members] = positions[parent[members]] + steps[members]

    if n and np.abs(positions).max() > POSITION_LIMIT:
        raise OverflowError("tree walk positions exceed 32-bit coordinates")
    return PositionedForest(forest=f, positions=positions.astype(np.int32), theta=theta)


@dataclass
class RangeAccounting:
    """
    Statistics of R[0, n].

    points and local_times are only filled when requested; they list the
    distinct sites of the range and L^x_n for each of them.
    """
    n: int
    range_size: int
    sum_L: int
    sum_L2: int
    max_abs_pos: int
    points: Optional[np.ndarray] = None
    local_times: Optional[np.ndarray] = None

    def cauchy_schwarz_holds(self) -> bool:
        """#R[0,n] >= (n+1)^2 / sum_x (L^x_n)^2, compared in integers"""
        return self.range_size * self.sum_L2 >= (self.n + 1) ** 2


class _PrefixSeries:
    """Cumulative range statistics for every DFS prefix, from one pass"""

    def __init__(self, positions: np.ndarray):
        n = positions.shape[0]
        _, inverse = np.unique(positions, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        order = np.argsort(inverse, kind="stable")
        grouped = inverse[order]
        starts = np.searchsorted(grouped, grouped, side="left")
        earlier = np.empty(n, dtype=np.int64)
        earlier[order] = np.arange(n) - starts

        # L^x rises from `earlier` to `earlier + 1` at step i
        self.sum_L2 = np.cumsum(2 * earlier + 1)
        self.range_size = np.cumsum(earlier == 0)
        norms = np.ceil(np.sqrt((positions.astype(np.float64) ** 2).sum(axis=1)) - 1e-9).astype(np.int64)
        self.max_abs_pos = np.maximum.accumulate(norms)


def _snapshot(pf: PositionedForest, series: _PrefixSeries, n: int, with_points: bool) -> RangeAccounting:
    accounting = RangeAccounting(n=n,
                                 range_size=int(series.range_size[n]),
                                 sum_L=n + 1,
                                 sum_L2=int(series.sum_L2[n]),
                                 max_abs_pos=int(series.max_abs_pos[n]))
    if with_points:
        points, counts = np.unique(pf.positions[: n + 1], axis=0, return_counts=True)
        accounting.points = points
        accounting.local_times = counts.astype(np.int64)
        accounting.sum_L = int(counts.sum())
    return accounting


def range_accounting(pf: PositionedForest, checkpoints: Iterable[int],
                     with_points: bool = False) -> List[RangeAccounting]:
    """RangeAccounting at each checkpoint n (sorted, below the forest size)"""
    checkpoints = [int(n) for n in checkpoints]
    if checkpoints != sorted(checkpoints):
        raise ValueError("checkpoints must be sorted")
    if checkpoints and (checkpoints[0] < 0 or checkpoints[-1] >= pf.forest.num_vertices):
        raise ValueError(f"checkpoints must lie in [0, {pf.forest.num_vertices - 1}]")
    if not checkpoints:
        return []
    series = _PrefixSeries(pf.positions[: checkpoints[-1] + 1])
    return [_snapshot(pf, series, n, with_points) for n in checkpoints]


def range_subtree_mode(pf: PositionedForest, m: int, with_points: bool = False) -> RangeAccounting:
    """Statistics over the first m subtrees, i.e. the prefix ending at subtree_offsets[m] - 1"""
    f = pf.forest
    if not 1 <= m <= f.num_subtrees:
        raise ValueError(f"m must lie in [1, {f.num_subtrees}], got {m}")
    return range_accounting(pf, [int(f.subtree_offsets[m]) - 1], with_points)[0]


def range_points(pf: PositionedForest, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Distinct sites of R[0, n] and their local times"""
    points, counts = np.unique(pf.positions[: n + 1], axis=0, return_counts=True)
    return points, counts


def spine_increments(pf: PositionedForest) -> np.ndarray:
    """V_{w_{j+1}} - V_{w_j} along the spine"""
    spine = pf.forest.spine_vertices()
    return pf.positions[spine[1:]].astype(np.int64) - pf.positions[spine[:-1]].astype(np.int64)


def export_range_csv(pf: PositionedForest, n: int, path: str) -> str:
    """Write R[0, n] as x1,..,xd,local_time"""
    points, counts = range_points(pf, n)
    frame = pd.DataFrame(points, columns=[f"x{i + 1}" for i in range(pf.dim)])
    frame["local_time"] = counts
    frame.to_csv(path, index=False)
    logger.info(f"Exported {len(frame)} range points to {path}")
    return path


def load_points_csv(path: str) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Read a point list written by export_range_csv (local_time column optional)"""
    frame = pd.read_csv(path)
    columns = [c for c in frame.columns if c.startswith("x")]
    if not columns:
        raise ValueError(f"{path}: no coordinate columns x1..xd")
    points = frame[columns].to_numpy(dtype=np.int64)
    weights = frame["local_time"].to_numpy(dtype=np.int64) if "local_time" in frame.columns else None
    return points, weights
