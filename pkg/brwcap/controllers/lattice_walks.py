"""
Sampling and exact transition probabilities of lattice step laws.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, signal

from brwcap.models.lattice import LatticeStepDistribution
from brwcap.utils.config import Config, default_config
from brwcap.utils.errors import InvalidDistributionError
from brwcap.utils.memory_monitor import memory_monitor
from brwcap.utils.seeding import make_rng

logger = logging.getLogger(__name__)


def sample_step(dist: LatticeStepDistribution, rng) -> np.ndarray:
    """One step drawn through the alias table"""
    return sample_steps(dist, rng, 1)[0]


def sample_steps(dist: LatticeStepDistribution, rng, size: int) -> np.ndarray:
    """``size`` independent steps, shape (size, d)"""
    rng = make_rng(rng)
    return dist.points[dist.alias.sample(rng, size)]


@dataclass
class TransitionTable:
    """pi_m(x) on the box [-radius, radius]^d, stored densely with 0 at the centre"""
    steps: int
    radius: int
    probs: np.ndarray
    leak: float = 0.0

    @property
    def dim(self) -> int:
        return self.probs.ndim

    def __getitem__(self, x) -> float:
        idx = tuple(int(c) + self.radius for c in x)
        if any(i < 0 or i > 2 * self.radius for i in idx):
            return 0.0
        return float(self.probs[idx])

    def total(self) -> float:
        return float(self.probs.sum())

    def coordinates(self) -> np.ndarray:
        """Lattice points of every cell, shape (cells, d)"""
        axes = np.indices(self.probs.shape).reshape(self.dim, -1).T
        return axes - self.radius

    def items(self):
        """Non-zero entries as (point, probability)"""
        flat = self.probs.reshape(-1)
        support = np.flatnonzero(flat)
        points = self.coordinates()[support]
        return [(tuple(int(c) for c in p), float(flat[k])) for p, k in zip(points, support)]

    def covariance(self) -> np.ndarray:
        return covariance_of(self)


def _shift_add(target: np.ndarray, source: np.ndarray, offset, weight: float):
    target_slices, source_slices = [], []
    for shift, size in zip(offset, source.shape):
        if shift >= 0:
            target_slices.append(slice(shift, size))
            source_slices.append(slice(0, max(size - shift, 0)))
        else:
            target_slices.append(slice(0, max(size + shift, 0)))
            source_slices.append(slice(-shift, size))
    target[tuple(target_slices)] += weight * source[tuple(source_slices)]


def _table_bytes(radius: int, dim: int) -> int:
    return 2 * 8 * (2 * radius + 1) ** dim


def transition_pmf(dist: LatticeStepDistribution, m: int, radius: Optional[int] = None,
                   config: Optional[Config] = None) -> TransitionTable:
    """
    Exact pi_m by repeated convolution with the step law.

    With the default radius m * max_step nothing leaves the box; a smaller
    radius drops the escaping mass and records it as ``leak``.
    """
    if m < 0:
        raise ValueError(f"step count must be non-negative, got {m}")
    config = config or default_config()
    if radius is None:
        radius = m * dist.max_step
    max_steps = int(config.get("transition_max_steps"))
    max_radius = int(config.get("transition_max_radius"))
    if m > max_steps or radius > max_radius:
        raise ValueError(f"transition table m={m}, r={radius} exceeds the caps m<={max_steps}, r<={max_radius}")
    memory_monitor.check_allocation(_table_bytes(radius, dist.dim), f"transition table r={radius}")

    shape = (2 * radius + 1,) * dist.dim
    table = np.zeros(shape)
    table[(radius,) * dist.dim] = 1.0
    for _ in range(m):
        step = np.zeros(shape)
        for point, prob in zip(dist.points, dist.probabilities):
            _shift_add(step, table, point, prob)
        table = step

    if dist.symmetric:
        table = 0.5 * (table + np.flip(table))
    leak = max(0.0, 1.0 - float(table.sum()))
    if leak > 1e-12:
        logger.debug(f"pi_{m} on radius {radius} leaked mass {leak:.3e}")
    return TransitionTable(steps=m, radius=radius, probs=table, leak=leak)


def convolve(first: TransitionTable, second: TransitionTable) -> TransitionTable:
    """pi_{m1} * pi_{m2} on the combined box"""
    probs = signal.convolve(first.probs, second.probs, method="direct")
    leak = max(0.0, 1.0 - float(probs.sum()))
    return TransitionTable(steps=first.steps + second.steps, radius=first.radius + second.radius,
                           probs=probs, leak=leak)


def covariance_of(table: TransitionTable) -> np.ndarray:
    points = table.coordinates().astype(np.float64)
    weights = table.probs.reshape(-1)
    mean = weights @ points
    centered = points - mean
    return (centered * weights[:, None]).T @ centered


def total_variation(first: TransitionTable, second: TransitionTable) -> float:
    """Half the l1 distance between two tables on a common box"""
    radius = max(first.radius, second.radius)
    padded = []
    for table in (first, second):
        pad = radius - table.radius
        padded.append(np.pad(table.probs, pad))
    return 0.5 * float(np.abs(padded[0] - padded[1]).sum())


def _lclt_tail(dist: LatticeStepDistribution, x: np.ndarray, start: int) -> float:
    """sum_{m >= start} of the Gaussian local limit, as an integral from start - 1/2"""
    d = dist.dim
    precision = np.linalg.inv(dist.covariance)
    j2 = float(x @ precision @ x)
    scale = 1.0 / math.sqrt(np.linalg.det(dist.covariance))

    def density(t):
        return scale * (2.0 * math.pi * t) ** (-d / 2.0) * math.exp(-j2 / (2.0 * t))

    value, _ = integrate.quad(density, start - 0.5, np.inf, limit=200, epsabs=1e-13, epsrel=1e-12)
    return value


def green_transition_sum(dist: LatticeStepDistribution, x: Sequence[int],
                         horizons: Sequence[int] = (32, 64, 128)) -> float:
    """
    Independent estimate of G(x) = sum_m pi_m(x).

    Exact terms for m < M plus a local-limit tail, at geometrically spaced
    horizons M, combined by repeated Richardson extrapolation. The tail
    error expands in M^{-d/2}, M^{-d/2-1}, ..., and each level removes one
    of these terms.
    """
    if not dist.aperiodic:
        raise InvalidDistributionError(f"{dist.name}: the transition-sum estimate needs an aperiodic walk")
    x = np.asarray(x, dtype=np.int64)
    horizons = sorted(int(h) for h in horizons)
    ratios = {horizons[k + 1] / horizons[k] for k in range(len(horizons) - 1)}
    if len(ratios) > 1:
        raise ValueError(f"horizons must be geometrically spaced, got {horizons}")
    longest = horizons[-1]
    # a path from 0 to x in fewer than M steps stays inside this box
    radius = (longest * dist.max_step + int(np.abs(x).max(initial=0))) // 2 + dist.max_step + 1
    memory_monitor.check_allocation(_table_bytes(radius, dist.dim), f"transition sweep r={radius}")

    shape = (2 * radius + 1,) * dist.dim
    index = tuple(int(c) + radius for c in x)
    table = np.zeros(shape)
    table[(radius,) * dist.dim] = 1.0
    partial = np.zeros(longest + 1)
    for m in range(longest):
        partial[m + 1] = partial[m] + table[index]
        step = np.zeros(shape)
        for point, prob in zip(dist.points, dist.probabilities):
            _shift_add(step, table, point, prob)
        table = step

    values = np.array([partial[h] + _lclt_tail(dist, x.astype(np.float64), h) for h in horizons])
    ratio = ratios.pop() if ratios else 1.0
    for level in range(len(horizons) - 1):
        factor = ratio ** (dist.dim / 2.0 + level)
        values = (factor * values[1:] - values[:-1]) / (factor - 1.0)
    return float(values[-1])
