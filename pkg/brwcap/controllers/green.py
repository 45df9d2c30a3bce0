"""
Green's function of an aperiodic lattice walk.

Near the origin G is evaluated exactly from its Fourier integral, split as

    1/(1 - phi(t)) = 1/sum_i c_i (1 - cos t_i) + remainder(t),    c_i = Sigma_ii.

The first part is the Green's function of a continuous-time nearest-neighbour
walk and equals int_0^inf prod_i ive(|x_i|, c_i s) ds, integrated by the
trapezoid rule in log s.  The remainder is bounded and is integrated on
periodic grids of size N and 2N (one FFT each) with Richardson extrapolation;
it vanishes for walks whose steps are 0 or +-e_i.

Far from the origin the local-limit asymptotic C / J(x)^{d-2} is used.
"""

import logging
import math
from collections import Counter
from functools import reduce
from typing import Optional

import numpy as np
import pandas as pd
from scipy import special

from brwcap.models.lattice import LatticeStepDistribution
from brwcap.utils.config import Config, default_config
from brwcap.utils.errors import InvalidDistributionError, ToleranceNotMetError
from brwcap.utils.memory_monitor import memory_monitor

logger = logging.getLogger(__name__)

LOG_S_MIN = -35.0
# ive loses accuracy and then returns nan for arguments past about 1e9
BESSEL_ARGUMENT_MAX = 1e8
ROW_CHUNK = 2048


def green_constant(dim: int, covariance: np.ndarray) -> float:
    """C_{d,eta} = Gamma(d/2) / ((d-2) pi^{d/2} sqrt(det Sigma))"""
    return special.gamma(dim / 2.0) / ((dim - 2) * math.pi ** (dim / 2.0) * math.sqrt(np.linalg.det(covariance)))


class _PackedCache:
    """Sorted int64 keys with their values; vectorized lookup and merge"""

    def __init__(self):
        self.keys = np.empty(0, dtype=np.int64)
        self.values = np.empty(0, dtype=np.float64)

    def __len__(self):
        return self.keys.size

    def lookup(self, keys: np.ndarray):
        if self.keys.size == 0:
            return np.full(keys.size, np.nan), np.zeros(keys.size, dtype=bool)
        pos = np.minimum(np.searchsorted(self.keys, keys), self.keys.size - 1)
        found = self.keys[pos] == keys
        return np.where(found, self.values[pos], np.nan), found

    def insert(self, keys: np.ndarray, values: np.ndarray):
        merged_keys = np.concatenate([self.keys, keys])
        merged_values = np.concatenate([self.values, values])
        order = np.argsort(merged_keys, kind="stable")
        self.keys = merged_keys[order]
        self.values = merged_values[order]


class GreenEvaluator:
    """
    Exact-near / asymptotic-far evaluator of G_eta.

    The evaluator is warmed up on construction (tables, remainder grid,
    crossover check) and only reads afterwards, apart from filling its cache.
    """

    def __init__(self, dist: LatticeStepDistribution, r_exact: Optional[int] = None,
                 config: Optional[Config] = None, warm: bool = True):
        config = config or default_config()
        if dist.dim < 3:
            raise InvalidDistributionError(f"{dist.name}: the walk must be transient (d >= 3)")
        if not dist.aperiodic:
            raise InvalidDistributionError(f"{dist.name}: periodic walks are not supported (period {dist.period})")
        if not dist.irreducible:
            raise InvalidDistributionError(f"{dist.name}: the support does not generate Z^{dist.dim}")
        covariance = dist.covariance
        if np.max(np.abs(covariance - np.diag(np.diag(covariance)))) > 1e-12:
            raise InvalidDistributionError(f"{dist.name}: only diagonal step covariance is supported")

        self.dist = dist
        self.dim = dist.dim
        self.config = config
        self.sigma_inverse = np.linalg.inv(covariance)
        self.axis_scale = np.diag(covariance).copy()
        self.c_d_eta = green_constant(self.dim, covariance)
        direct = math.exp(special.gammaln(self.dim / 2.0) - (self.dim / 2.0) * math.log(math.pi)
                          - 0.5 * math.log(np.linalg.det(covariance))) / (self.dim - 2)
        if abs(direct - self.c_d_eta) > 1e-12 * max(1.0, self.c_d_eta):
            raise ToleranceNotMetError(f"C_d,eta mismatch: {self.c_d_eta!r} vs {direct!r}")

        self.r_exact = int(r_exact or config.get("green_r_exact"))
        self.r_exact_max = max(self.r_exact, int(config.get("green_r_exact_max")))
        self.tolerance = float(config.get("green_tolerance"))
        self.log_step = float(config.get("green_log_step"))
        self.method_counts = Counter()
        self.remainder_error = 0.0
        self.fft_size = 0

        self._cache = _PackedCache()
        self._pack_offset = self.r_exact_max
        self._pack_base = 2 * self.r_exact_max + 1
        self._setup_quadrature()
        self._build_tables()
        if warm:
            self.warm_up()

    # ------------------------------------------------------------------
    # Setup

    def _setup_quadrature(self):
        log_s_max = math.log(BESSEL_ARGUMENT_MAX / float(np.max(self.axis_scale)))
        intervals = int(round((log_s_max - LOG_S_MIN) / self.log_step))
        intervals += intervals % 2
        u = np.linspace(LOG_S_MIN, log_s_max, intervals + 1)
        h = (log_s_max - LOG_S_MIN) / intervals
        self._log_h = h
        self._nodes = np.exp(u)

        fine = np.full(u.size, h)
        fine[[0, -1]] = h / 2
        coarse = np.full(u[::2].size, 2 * h)
        coarse[[0, -1]] = h
        self._weights_fine = fine * self._nodes
        self._weights_coarse = coarse * self._nodes[::2]

    def _bessel_tables(self):
        """ive(n, c_i s) for n = 0..r_exact on the quadrature nodes, one table per distinct c_i"""
        orders = np.arange(self.r_exact + 1)[:, None]
        tables = {}
        self._axis_tables = []
        for c in self.axis_scale:
            key = float(c)
            if key not in tables:
                table = special.ive(orders, c * self._nodes[None, :])
                if not np.all(np.isfinite(table)):
                    raise ToleranceNotMetError(f"{self.dist.name}: non-finite Bessel table for c={key:g}")
                tables[key] = table
            self._axis_tables.append(tables[key])

    def _build_tables(self):
        self._bessel_tables()
        self._remainder = None
        if not self.dist.nearest_neighbour():
            self._build_remainder()
        self._cache = _PackedCache()

    def _remainder_grid(self, n: int) -> np.ndarray:
        """Rectangle-rule remainder on the periodic grid of size n, as values R(x) for x mod n"""
        d = self.dim
        t = 2.0 * np.pi * np.arange(n) / n
        memory_monitor.check_allocation(3 * 16 * n ** d, f"remainder grid {n}^{d}")

        phi = np.zeros((n,) * d, dtype=np.complex128)
        for point, prob in zip(self.dist.points, self.dist.probabilities):
            phases = [np.exp(1j * t * int(y)) for y in point]
            phi += prob * reduce(np.multiply.outer, phases)
        reference = reduce(np.add.outer, [c * (1.0 - np.cos(t)) for c in self.axis_scale])

        with np.errstate(divide="ignore", invalid="ignore"):
            integrand = 1.0 / (1.0 - phi) - 1.0 / reference
        integrand[(0,) * d] = 0.0
        return np.real(np.fft.fftn(integrand)) / n ** d

    def _build_remainder(self):
        d = self.dim
        max_points = int(self.config.get("green_fft_max_points"))
        n = max(int(self.config.get("green_fft_min_size")), 2 * (self.r_exact + 1))
        n += n % 2
        largest = int(math.floor(max_points ** (1.0 / d))) // 2
        if n > largest:
            n = largest - largest % 2
            radius = n // 2 - 1
            if radius < 1:
                raise ToleranceNotMetError(f"FFT point cap {max_points} is too small for d={d}")
            logger.warning(f"{self.dist.name}: exact radius lowered from {self.r_exact} to {radius} "
                           f"to fit the remainder grid")
            self.r_exact = radius
            self._bessel_tables()

        offsets = np.arange(-self.r_exact, self.r_exact + 1)
        coarse = self._remainder_grid(n)[np.ix_(*[offsets % n] * d)]
        fine = self._remainder_grid(2 * n)[np.ix_(*[offsets % (2 * n)] * d)]
        factor = 2.0 ** d
        self._remainder = (factor * fine - coarse) / (factor - 1.0)
        self.remainder_error = float(np.max(np.abs(self._remainder - fine)))
        self.fft_size = n
        limit = float(self.config.get("green_remainder_tolerance"))
        if self.remainder_error > limit:
            raise ToleranceNotMetError(
                f"{self.dist.name}: remainder refinement stalled at {self.remainder_error:.3e} (limit {limit:g})")
        logger.debug(f"Remainder grid N={n}: refinement change {self.remainder_error:.3e}")

    def warm_up(self):
        """Fill the shell values and raise r_exact until the crossover is continuous"""
        limit = float(self.config.get("green_crossover_jump"))
        while True:
            jump = self.crossover_jump()
            if not np.isfinite(jump):
                raise ToleranceNotMetError(f"{self.dist.name}: non-finite Green values on the r_exact shell")
            if jump <= limit:
                break
            if self.r_exact >= self.r_exact_max or self._remainder is not None:
                logger.warning(f"{self.dist.name}: crossover jump {jump:.2e} at r_exact={self.r_exact} "
                               f"is above {limit:g} and cannot be raised further")
                break
            raised = min(2 * self.r_exact, self.r_exact_max)
            logger.warning(f"{self.dist.name}: crossover jump {jump:.2e} above {limit:g}, "
                           f"raising r_exact {self.r_exact} -> {raised}")
            self.r_exact = raised
            self._build_tables()
        self.crossover = jump
        logger.info(f"Green evaluator for {self.dist.name} in d={self.dim}: G(0)={self.green_exact(np.zeros(self.dim)):.12f}, "
                    f"r_exact={self.r_exact}, crossover jump {jump:.2e}")

    # ------------------------------------------------------------------
    # Keys

    def _canonical(self, points: np.ndarray) -> np.ndarray:
        if self.dist.hyperoctahedral:
            return np.sort(np.abs(points), axis=1)
        if self.dist.symmetric and points.size:
            nonzero = points != 0
            first = np.argmax(nonzero, axis=1)
            lead = points[np.arange(points.shape[0]), first]
            return np.where((lead < 0)[:, None], -points, points)
        return points

    def _pack(self, points: np.ndarray) -> np.ndarray:
        keys = np.zeros(points.shape[0], dtype=np.int64)
        for axis in range(self.dim):
            keys = keys * self._pack_base + (points[:, axis] + self._pack_offset)
        return keys

    def _unpack(self, keys: np.ndarray) -> np.ndarray:
        points = np.empty((keys.size, self.dim), dtype=np.int64)
        rest = keys.copy()
        for axis in reversed(range(self.dim)):
            points[:, axis] = rest % self._pack_base - self._pack_offset
            rest //= self._pack_base
        return points

    # ------------------------------------------------------------------
    # Evaluation

    def _reference(self, points: np.ndarray) -> np.ndarray:
        """
        int_0^inf prod_i ive(|x_i|, c_i s) ds

        Trapezoid rule in u = log s up to the last node, with the Euler-Maclaurin
        endpoint terms taken from the large-s expansion (the integrand still
        decays only like s^{1-d/2} there); the rest is _reference_tail.
        """
        absolute = np.abs(points)
        out = np.empty(points.shape[0])
        worst = 0.0
        h = self._log_h
        for start in range(0, points.shape[0], ROW_CHUNK):
            block = absolute[start:start + ROW_CHUNK]
            product = np.ones((block.shape[0], self._nodes.size))
            for axis, table in enumerate(self._axis_tables):
                product *= table[block[:, axis]]
            first_derivative, third_derivative = self._endpoint_derivatives(block)
            fine = (product @ self._weights_fine
                    - h ** 2 / 12.0 * first_derivative + h ** 4 / 720.0 * third_derivative)
            coarse = (product[:, ::2] @ self._weights_coarse
                      - (2 * h) ** 2 / 12.0 * first_derivative + (2 * h) ** 4 / 720.0 * third_derivative)
            worst = max(worst, float(np.max(np.abs(fine - coarse))))
            out[start:start + block.shape[0]] = fine
        if not worst <= self.tolerance:
            raise ToleranceNotMetError(f"log-s quadrature changed by {worst:.3e} on step halving")
        return out + self._reference_tail(absolute)

    def _tail_expansion(self, absolute: np.ndarray):
        """prod_i ive(|x_i|, c_i s) ~ base s^{-d/2} (1 - first / s), from ive(n, z) ~ (2 pi z)^{-1/2} (1 - (4n^2 - 1)/(8z))"""
        base = float(np.prod((2.0 * np.pi * self.axis_scale) ** -0.5))
        first = ((4.0 * absolute.astype(np.float64) ** 2 - 1.0) / 8.0 / self.axis_scale).sum(axis=1)
        return base, first

    def _endpoint_derivatives(self, absolute: np.ndarray):
        """First and third u-derivatives of s prod_i ive(|x_i|, c_i s) at the last node"""
        base, first = self._tail_expansion(absolute)
        upper = self._nodes[-1]
        a = 1.0 - self.dim / 2.0
        lead = upper ** a
        correction = first * upper ** (a - 1.0)
        return (base * (a * lead - (a - 1.0) * correction),
                base * (a ** 3 * lead - (a - 1.0) ** 3 * correction))

    def _reference_tail(self, absolute: np.ndarray) -> np.ndarray:
        """Integral beyond the last node"""
        d = self.dim
        upper = self._nodes[-1]
        base, first = self._tail_expansion(absolute)
        return base * (upper ** (1.0 - d / 2.0) / (d / 2.0 - 1.0)
                       - first * upper ** (-d / 2.0) / (d / 2.0))

    def _compute_exact(self, points: np.ndarray) -> np.ndarray:
        values = self._reference(points)
        if self._remainder is not None:
            index = tuple((points + self.r_exact).T)
            values = values + self._remainder[index]
        return values

    def _exact_many(self, points: np.ndarray) -> np.ndarray:
        canonical = self._canonical(points)
        keys = self._pack(canonical)
        unique, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
        values, found = self._cache.lookup(unique)
        if not np.all(found):
            missing = np.flatnonzero(~found)
            computed = self._compute_exact(canonical[first[missing]])
            values[missing] = computed
            self._cache.insert(unique[missing], computed)
        return values[inverse.reshape(-1)]

    def _asymptotic_many(self, points: np.ndarray) -> np.ndarray:
        x = points.astype(np.float64)
        j2 = np.einsum("ij,jk,ik->i", x, self.sigma_inverse, x)
        return self.c_d_eta / j2 ** ((self.dim - 2) / 2.0)

    def green_exact(self, x) -> float:
        """G(x) from the Fourier integral; |x| must not exceed r_exact"""
        point = np.asarray(x, dtype=np.int64).reshape(1, self.dim)
        if np.sqrt((point.astype(np.float64) ** 2).sum()) > self.r_exact:
            raise ValueError(f"|x| exceeds r_exact={self.r_exact}")
        self.method_counts["exact"] += 1
        return float(self._exact_many(point)[0])

    def green_asymptotic(self, x) -> float:
        """C_{d,eta} / J(x)^{d-2}"""
        point = np.asarray(x, dtype=np.int64).reshape(1, self.dim)
        if not np.any(point):
            raise ValueError("the asymptotic form is undefined at x = 0")
        self.method_counts["asymptotic"] += 1
        return float(self._asymptotic_many(point)[0])

    def green(self, x) -> float:
        return float(self.green_many(np.asarray(x).reshape(1, self.dim))[0])

    def green_many(self, points) -> np.ndarray:
        """G at every row of ``points``: exact within r_exact, asymptotic beyond"""
        points = np.asarray(points, dtype=np.int64).reshape(-1, self.dim)
        out = np.empty(points.shape[0])
        near = (points.astype(np.float64) ** 2).sum(axis=1) <= self.r_exact ** 2
        if np.any(near):
            out[near] = self._exact_many(points[near])
        if not np.all(near):
            out[~near] = self._asymptotic_many(points[~near])
        self.method_counts["exact"] += int(near.sum())
        self.method_counts["asymptotic"] += int((~near).sum())
        return out

    def green_matrix(self, rows, cols=None) -> np.ndarray:
        """M[i, j] = G(rows_i, cols_j) = G(cols_j - rows_i)"""
        rows = np.asarray(rows, dtype=np.int64).reshape(-1, self.dim)
        cols = rows if cols is None else np.asarray(cols, dtype=np.int64).reshape(-1, self.dim)
        memory_monitor.check_allocation(8 * rows.shape[0] * cols.shape[0], "Green matrix")
        out = np.empty((rows.shape[0], cols.shape[0]))
        block = max(1, (1 << 20) // max(1, cols.shape[0]))
        for start in range(0, rows.shape[0], block):
            chunk = rows[start:start + block]
            diffs = (cols[None, :, :] - chunk[:, None, :]).reshape(-1, self.dim)
            out[start:start + chunk.shape[0]] = self.green_many(diffs).reshape(chunk.shape[0], cols.shape[0])
        return out

    def harmonicity_residual(self, x) -> float:
        """G(x) - 1[x = 0] - sum_y eta(y) G(x - y)"""
        x = np.asarray(x, dtype=np.int64)
        neighbours = self.green_many(x[None, :] - self.dist.points)
        return self.green(x) - float(not np.any(x)) - float(self.dist.probabilities @ neighbours)

    def shell_points(self, radius: int) -> np.ndarray:
        d = self.dim
        axis = np.zeros(d, dtype=np.int64)
        axis[0] = radius
        plane = np.zeros(d, dtype=np.int64)
        plane[:2] = int(math.floor(radius / math.sqrt(2)))
        diagonal = np.full(d, int(math.floor(radius / math.sqrt(d))), dtype=np.int64)
        return np.vstack([axis, plane, diagonal])

    def crossover_jump(self) -> float:
        """Largest relative gap between exact and asymptotic values on the r_exact shell"""
        shell = self.shell_points(self.r_exact)
        exact = self._exact_many(shell)
        return float(np.max(np.abs(exact - self._asymptotic_many(shell)) / exact))

    def table_size(self) -> int:
        return len(self._cache)

    def export_table_csv(self, path: str) -> str:
        """Write every cached exact value as x1,..,xd,G"""
        points = self._unpack(self._cache.keys)
        frame = pd.DataFrame(points, columns=[f"x{i + 1}" for i in range(self.dim)])
        frame["G"] = self._cache.values
        frame.to_csv(path, index=False)
        logger.info(f"Exported {len(frame)} Green values to {path}")
        return path
