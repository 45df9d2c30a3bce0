"""
Oracle and invariant suite behind the ``selftest`` command.

Each check compares two independent computations (or an exact identity) at
sizes that run in minutes on a desktop.
"""

import time
import logging
import traceback
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
from scipy import stats

from brwcap.controllers.capacity import cap_exact, cap_lower_bound, cap_monte_carlo, cap_upper_bound
from brwcap.controllers.green import GreenEvaluator, green_constant
from brwcap.controllers.gw_forest import (build_forest_by_vertices, generation_sizes, height_from_lukasiewicz,
                                          height_samples, hitting_times, ladder_epoch_count,
                                          lukasiewicz_from_counts, sample_conditioned_tree)
from brwcap.controllers.harness import subadditivity_split
from brwcap.controllers.lattice_walks import green_transition_sum
from brwcap.controllers.tree_walk import assign_positions, range_accounting
from brwcap.models.lattice import LatticeStepDistribution
from brwcap.models.offspring import OffspringDistribution
from brwcap.utils.config import Config, default_config
from brwcap.utils.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

ORACLE_POINTS = ((0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1), (2, 1, 0))


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    elapsed_s: float = 0.0


@dataclass
class SuiteSizes:
    """Sample sizes of the suite; ``quick`` keeps every check under a few seconds"""
    random_sets: int = 50
    set_points: int = 200
    mc_sets: int = 20
    mc_walkers: int = 4000
    forests: int = 1000
    forest_vertices: int = 2000
    trees: int = 100000
    ks_samples: int = 100000
    ks_lengths: tuple = (64, 256)

    @classmethod
    def quick(cls) -> "SuiteSizes":
        return cls(random_sets=8, set_points=40, mc_sets=3, mc_walkers=2000, forests=50,
                   forest_vertices=500, trees=20000, ks_samples=5000, ks_lengths=(64,))


class SelfTest:
    """Runs the oracle suite and collects one CheckResult per check"""

    def __init__(self, sizes: Optional[SuiteSizes] = None, seed: int = 2024,
                 config: Optional[Config] = None,
                 progress_callback: Optional[Callable[[int, str], None]] = None):
        self.sizes = sizes or SuiteSizes()
        self.seed = seed
        self.config = config or default_config()
        self.progress_callback = progress_callback
        self.eta = LatticeStepDistribution.lazy_srw(3, 0.5)
        self.theta = LatticeStepDistribution.srw(3)
        self.mu = OffspringDistribution.geometric(0.5)
        self._ev: Optional[GreenEvaluator] = None

    @property
    def ev(self) -> GreenEvaluator:
        if self._ev is None:
            self._ev = GreenEvaluator(self.eta, config=self.config)
        return self._ev

    def rng(self, label: str) -> np.random.Generator:
        return make_rng(derive_seed(self.seed, label))

    def report_progress(self, value, status_text=None):
        if self.progress_callback:
            self.progress_callback(value, status_text)

    def checks(self):
        return [
            ("green-oracle", self.check_green_oracle),
            ("green-harmonic", self.check_harmonicity),
            ("green-constant", self.check_green_constant),
            ("capacity-closed-forms", self.check_closed_forms),
            ("capacity-sandwich", self.check_sandwich),
            ("capacity-monte-carlo", self.check_monte_carlo),
            ("tree-identities", self.check_tree_identities),
            ("criticality", self.check_criticality),
            ("height-law", self.check_height_law),
            ("subadditivity", self.check_subadditivity),
        ]

    def run(self) -> List[CheckResult]:
        results = []
        checks = self.checks()
        for index, (name, check) in enumerate(checks):
            self.report_progress(int(100 * index / len(checks)), f"Running {name}...")
            started = time.perf_counter()
            try:
                passed, detail = check()
            except Exception as e:
                logger.error(f"Self-test {name} raised: {str(e)}")
                logger.debug(traceback.format_exc())
                passed, detail = False, f"{type(e).__name__}: {e}"
            result = CheckResult(name, bool(passed), detail, time.perf_counter() - started)
            level = logging.INFO if result.passed else logging.ERROR
            logger.log(level, f"{name}: {'PASS' if result.passed else 'FAIL'} ({detail})")
            results.append(result)
        self.report_progress(100, "Self-test finished.")
        return results

    # ------------------------------------------------------------------
    # Green's function

    def check_green_oracle(self):
        worst = 0.0
        for point in ORACLE_POINTS:
            exact = self.ev.green_exact(point)
            oracle = green_transition_sum(self.eta, point)
            worst = max(worst, abs(exact - oracle))
        return worst < 1e-6, f"max |G - transition sum| = {worst:.2e} over {len(ORACLE_POINTS)} points"

    def check_harmonicity(self):
        shell = self.ev.shell_points(3)
        worst = max(abs(self.ev.harmonicity_residual(x)) for x in np.vstack([shell, np.zeros((1, 3), int)]))
        return worst < 1e-8, f"max harmonicity residual {worst:.2e}"

    def check_green_constant(self):
        value = green_constant(3, np.eye(3))
        gap = abs(value - 1.0 / (2.0 * np.pi))
        return gap < 1e-12, f"C_3(I) - 1/(2 pi) = {gap:.1e}"

    # ------------------------------------------------------------------
    # Capacity

    def _random_set(self, rng, size: int) -> np.ndarray:
        """Range of a short simple random walk, so the set is connected-ish and varied"""
        steps = self.theta.points[self.theta.alias.sample(rng, size)]
        return np.unique(np.cumsum(steps, axis=0), axis=0)

    def check_closed_forms(self):
        g0 = self.ev.green(np.zeros(3, dtype=np.int64))
        single = cap_exact(np.zeros((1, 3), dtype=np.int64), self.ev, self.config)
        x = np.array([2, 1, 0])
        pair = cap_exact(np.vstack([np.zeros(3, dtype=np.int64), x]), self.ev, self.config)
        expected = 2.0 / (g0 + self.ev.green(x))
        gaps = (abs(single.value - 1.0 / g0), abs(pair.value - expected))
        return max(gaps) < 1e-9, f"singleton gap {gaps[0]:.1e}, two-point gap {gaps[1]:.1e}"

    def check_sandwich(self):
        rng = self.rng("sandwich")
        violations = 0
        for _ in range(self.sizes.random_sets):
            size = int(rng.integers(2, self.sizes.set_points + 1))
            points = self._random_set(rng, size)
            exact = cap_exact(points, self.ev, self.config).value
            lower = cap_lower_bound(points, self.ev, config=self.config).value
            upper = cap_upper_bound(points, self.ev, config=self.config).value
            if not lower <= exact + 1e-9 or not exact <= upper + 1e-9:
                violations += 1
        return violations == 0, f"{violations} violations on {self.sizes.random_sets} sets"

    def check_monte_carlo(self):
        rng = self.rng("monte-carlo")
        outside = 0
        for _ in range(self.sizes.mc_sets):
            points = self._random_set(rng, int(rng.integers(2, self.sizes.set_points + 1)))
            exact = cap_exact(points, self.ev, self.config)
            mc = cap_monte_carlo(points, self.eta, self.ev, rng, walkers=self.sizes.mc_walkers,
                                 config=self.config)
            sigma = mc.params["sigma"]
            if abs(mc.value - exact.value) > 3.0 * sigma + mc.params["bias"] + exact.error:
                outside += 1
        return outside == 0, f"{outside} of {self.sizes.mc_sets} estimates outside 3 sigma plus bias"

    # ------------------------------------------------------------------
    # Trees

    def check_tree_identities(self):
        rng = self.rng("forests")
        failures = []
        n = self.sizes.forest_vertices
        for _ in range(self.sizes.forests):
            f = build_forest_by_vertices(self.mu, n, rng, complete_subtree=False, config=self.config)
            pf = assign_positions(f, self.theta, rng)
            checkpoint = n - 1
            acc = range_accounting(pf, [checkpoint], with_points=True)[0]
            if acc.sum_L != checkpoint + 1:
                failures.append("local times")
            path = lukasiewicz_from_counts(f.offspring)
            height = height_from_lukasiewicz(path, checkpoint)
            if int(f.depth[checkpoint]) != int(f.spine_index[checkpoint]) + height:
                failures.append("depth split")
            block_sizes = np.bincount(f.spine_index, minlength=f.num_subtrees + 1)[: f.num_subtrees]
            if not np.array_equal(block_sizes, np.diff(np.concatenate([[0], hitting_times(path)]))):
                failures.append("subtree sizes")
        return not failures, (f"{len(failures)} failures ({', '.join(sorted(set(failures)))})"
                              if failures else f"{self.sizes.forests} forests of {n} vertices")

    def check_criticality(self):
        sizes = generation_sizes(self.mu, 10, self.sizes.trees, self.rng("criticality"))
        means = sizes.mean(axis=0)
        errors = sizes.std(axis=0, ddof=1) / np.sqrt(self.sizes.trees)
        z = np.abs(means - 1.0) / errors
        return bool(np.all(z < 4.0)), f"max |mean Z_k - 1| / se = {z.max():.2f}"

    def check_height_law(self):
        rng = self.rng("height-law")
        details, passed = [], True
        for n in self.sizes.ks_lengths:
            heights = height_samples(self.mu, n, self.sizes.ks_samples, rng)
            ladders = ladder_epoch_count(self.mu, n, self.sizes.ks_samples, rng)
            p = float(stats.ks_2samp(heights, ladders).pvalue)
            passed &= p >= 0.01
            details.append(f"n={n}: p={p:.3f}")
        return passed, ", ".join(details)

    def check_subadditivity(self):
        rng = self.rng("subadditivity")
        tree = sample_conditioned_tree(self.mu, 401, rng, config=self.config)
        pf = assign_positions(tree, self.theta, rng)
        split = subadditivity_split(pf, 0.5, self.ev, rng, policy="exact", config=self.config)
        return split["holds"], (f"cap {split['cap_whole']:.3f} <= "
                                f"{split['cap_first']:.3f} + {split['cap_second']:.3f}")
