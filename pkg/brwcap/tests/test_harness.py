#!/usr/bin/env python3
"""
Tests for the experiment harness: runs, resumption, persistence and exponent fits.
"""

import os
import shutil
import tempfile
import unittest

import numpy as np
import pandas as pd

from brwcap.controllers.green import GreenEvaluator
from brwcap.controllers.gw_forest import sample_conditioned_tree
from brwcap.controllers.harness import (_WORKER_STATE, ExperimentRunner, exponent_target, fit_all,
                                        fit_exponent, init_worker, judge, load_records, slope_trend,
                                        subadditivity_split)
from brwcap.controllers.tree_walk import assign_positions
from brwcap.models.lattice import LatticeStepDistribution
from brwcap.models.offspring import OffspringDistribution
from brwcap.models.records import CSV_COLUMNS, ExperimentConfig, TrialRecord
from brwcap.utils.config import Config
from brwcap.utils.errors import InsufficientDataError


def rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def planted(statistic_column, local_slopes, mode="vertices", dim=3, trials=1, noise=0.0, seed=0):
    """Records whose mean log statistic follows the given slope between successive n = 2^k"""
    generator = rng(seed)
    log_values = np.concatenate([[0.0], np.cumsum(np.asarray(local_slopes) * np.log(2.0))])
    rows = []
    for k, log_value in enumerate(log_values):
        for t in range(trials):
            factor = 1.0 + noise * generator.standard_normal()
            rows.append({"mode": mode, "dim": dim, "n": 2 ** k, "trial": t,
                         statistic_column: float(np.exp(log_value) * factor)})
    return pd.DataFrame(rows)


class TestExperimentRunner(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.config = Config.defaults()

    def tearDown(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def _cfg(self, **overrides):
        settings = dict(mode="vertices", dim=3, mu="geometric:0.5", theta="srw", eta="lazy-srw:0.5",
                        n_min=32, n_max=128, ratio=2.0, trials=2, seed=7,
                        out=os.path.join(self.test_dir, "results.csv"))
        settings.update(overrides)
        return ExperimentConfig(**settings)

    def test_vertices_run_writes_every_record(self):
        cfg = self._cfg()
        records = ExperimentRunner(cfg, config=self.config, workers=1).run()
        self.assertEqual(len(records), 6)
        self.assertTrue(all(r.error_tag is None for r in records))
        self.assertTrue(all(r.sandwich_holds() for r in records))
        self.assertTrue(all(r.cap_method == "exact-solve" for r in records))

        frame = pd.read_csv(cfg.out)
        self.assertEqual(list(frame.columns), CSV_COLUMNS)
        self.assertEqual(len(frame), 6)
        self.assertEqual(sorted(frame["n"].unique().tolist()), [32, 64, 128])
        self.assertTrue((frame["num_vertices"] == frame["n"] + 1).all())
        self.assertTrue((frame["range_size"] * frame["sum_L2"] >= frame["num_vertices"] ** 2).all())

        # one forest per trial: every checkpoint of a trial shares the seed
        self.assertEqual(frame.groupby("trial")["seed"].nunique().max(), 1)

    def test_same_config_same_rows(self):
        first = self._cfg(out=os.path.join(self.test_dir, "a.csv"))
        second = self._cfg(out=os.path.join(self.test_dir, "b.csv"))
        ExperimentRunner(first, config=self.config).run()
        ExperimentRunner(second, config=self.config).run()
        a = pd.read_csv(first.out).drop(columns=["elapsed_ms"])
        b = pd.read_csv(second.out).drop(columns=["elapsed_ms"])
        pd.testing.assert_frame_equal(a, b)
        self.assertEqual(first.config_hash(), second.config_hash())

    def test_resume_skips_finished_tasks(self):
        cfg = self._cfg(trials=1)
        ExperimentRunner(cfg, config=self.config).run()
        again = ExperimentRunner(cfg, config=self.config).run()
        self.assertEqual(again, [])
        self.assertEqual(len(pd.read_csv(cfg.out)), 3)

        # a different seed is a different configuration and appends
        ExperimentRunner(self._cfg(trials=1, seed=8), config=self.config).run()
        frame = pd.read_csv(cfg.out)
        self.assertEqual(len(frame), 6)
        self.assertEqual(frame["config_hash"].nunique(), 2)

    def test_conditioned_mode(self):
        cfg = self._cfg(mode="conditioned", n_min=16, n_max=32)
        runner = ExperimentRunner(cfg, config=self.config)
        self.assertEqual(len(runner.tasks()), 4)
        records = runner.run()
        self.assertEqual([r.num_vertices for r in records], [16, 16, 32, 32])
        self.assertTrue(all(r.num_subtrees == 1 for r in records))

    def test_subtrees_mode(self):
        cfg = self._cfg(mode="subtrees", n_min=2, n_max=8, capacity_policy="bounds")
        records = ExperimentRunner(cfg, config=self.config).run()
        self.assertEqual(len(records), 6)
        self.assertEqual(sorted({r.num_subtrees for r in records}), [2, 4, 8])
        self.assertTrue(all(r.cap_value is None and r.cap_lower is not None for r in records))

    def test_subtrees_mode_keeps_records_below_the_ceiling(self):
        self.config.update({"forest_vertex_ceiling": 200})
        cfg = self._cfg(mode="subtrees", n_min=1, n_max=256, trials=3, capacity_policy="bounds")
        records = ExperimentRunner(cfg, config=self.config).run()
        self.assertEqual(len(records), 27)
        # 256 subtrees need at least 256 vertices
        self.assertTrue(all(r.error_tag == "ForestSizeError" for r in records if r.n == 256))
        survivors = [r for r in records if r.error_tag is None]
        self.assertTrue(any(r.n == 1 for r in survivors))
        self.assertTrue(all(r.num_vertices <= 200 for r in survivors))
        for t in range(3):
            tags = [r.error_tag for r in sorted(records, key=lambda r: r.n) if r.trial == t]
            failed = [tag is not None for tag in tags]
            self.assertEqual(failed, sorted(failed))

    def test_worker_reads_pmf_truncation(self):
        cfg = self._cfg()
        knobs = dict(self.config.as_dict(), pmf_truncation=1e-15)
        init_worker(cfg.to_dict(), knobs)
        self.assertEqual(_WORKER_STATE["mu"].pmf.size, 51)
        self.assertLess(_WORKER_STATE["mu"].truncation_mass, 1e-15)

    def test_progress_callback(self):
        seen = []
        ExperimentRunner(self._cfg(trials=1), config=self.config,
                         progress_callback=lambda value, text: seen.append(value)).run()
        self.assertEqual(seen[0], 0)
        self.assertEqual(seen[-1], 100)

    def test_load_records_drops_bad_rows(self):
        cfg = self._cfg(trials=1)
        ExperimentRunner(cfg, config=self.config).run()
        frame = pd.read_csv(cfg.out)
        frame.loc[0, "cap_lower"] = frame.loc[0, "cap_value"] + 10.0
        frame.loc[1, "error_tag"] = "MemoryBudgetError"
        frame.to_csv(cfg.out, index=False)
        loaded = load_records(cfg.out, cfg.config_hash())
        self.assertEqual(len(loaded), 1)
        self.assertEqual(len(load_records(cfg.out, "0" * 16)), 0)


class TestSandwichIngest(unittest.TestCase):

    def test_violation_is_tagged(self):
        cfg = ExperimentConfig(out=os.path.join(tempfile.gettempdir(), "unused.csv"))
        runner = ExperimentRunner(cfg, config=Config.defaults())
        record = TrialRecord(config_hash="x", mode="vertices", dim=3, mu="m", theta="t", eta="e",
                             n=10, trial=0, seed=1, cap_lower=2.0, cap_value=1.0, cap_error=0.1,
                             cap_upper=3.0)
        runner.ingest(record)
        self.assertEqual(record.error_tag, "SandwichViolation")
        self.assertEqual(runner.sandwich_violations, 1)


class TestSubadditivity(unittest.TestCase):

    def test_split_of_a_conditioned_tree(self):
        mu = OffspringDistribution.geometric(0.5)
        tree = sample_conditioned_tree(mu, 201, rng(1))
        pf = assign_positions(tree, LatticeStepDistribution.srw(3), rng(2))
        ev = GreenEvaluator(LatticeStepDistribution.lazy_srw(3, 0.5), config=Config.defaults())
        split = subadditivity_split(pf, 0.5, ev, rng(3), policy="exact")
        self.assertEqual(split["n"], 201)
        self.assertEqual(split["cut"], 100)
        self.assertTrue(split["holds"])
        self.assertLessEqual(max(split["cap_first"], split["cap_second"]), split["cap_whole"] + 1e-9)
        with self.assertRaises(ValueError):
            subadditivity_split(pf, 1.0, ev, rng(4))


class TestExponentFits(unittest.TestCase):

    def test_targets(self):
        self.assertEqual(exponent_target("vertices", "cap", 5), (0.75, "eq", 0.15))
        self.assertEqual(exponent_target("subtrees", "cap", 3)[0], 0.5)
        self.assertEqual(exponent_target("vertices", "green_sum", 3)[0], 1.25)
        self.assertIsNone(exponent_target("conditioned", "sum_L2", 3))
        self.assertTrue(judge(0.3, 0.25, "eq", 0.1))
        self.assertTrue(judge(2.0, 1.0, "at-least", 0.1))
        self.assertFalse(judge(1.3, 1.0, "at-most", 0.15))
        with self.assertRaises(ValueError):
            judge(1.0, 1.0, "near", 0.1)

    def test_exact_planted_slope(self):
        frame = planted("range_size", [0.75] * 7)
        fit = fit_exponent(frame, "range_size")
        self.assertAlmostEqual(fit.slope, 0.75, places=10)
        self.assertAlmostEqual(fit.r_squared, 1.0, places=10)
        self.assertEqual(fit.target, 0.75)
        self.assertEqual(fit.verdict, "pass")

    def test_noisy_planted_slope(self):
        frame = planted("max_depth", [0.5] * 7, trials=20, noise=0.05, seed=3)
        fit = fit_exponent(frame, "max_depth")
        self.assertAlmostEqual(fit.slope, 0.5, delta=0.03)
        self.assertEqual(fit.verdict, "pass")

    def test_cap_column_and_range_restriction(self):
        frame = planted("cap_value", [0.25] * 4 + [1.0] * 3)
        self.assertAlmostEqual(fit_exponent(frame, "cap", n_max=16).slope, 0.25, places=10)
        self.assertAlmostEqual(fit_exponent(frame, "cap", n_min=16).slope, 1.0, places=10)

    def test_approaching_and_diverging(self):
        approaching = fit_exponent(planted("cap_value", [0.9, 0.8, 0.7, 0.6, 0.5, 0.45, 0.42]), "cap")
        self.assertEqual(approaching.verdict, "approaching")
        self.assertEqual(len(approaching.trend), 5)
        self.assertTrue(np.all(np.diff(approaching.trend) < 0))

        diverging = fit_exponent(planted("cap_value", [0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1]), "cap")
        self.assertEqual(diverging.verdict, "diverging")

    def test_slope_trend_windows(self):
        trend = slope_trend(planted("sum_L2", [1.0] * 5), "sum_L2", window=3)
        self.assertEqual(len(trend), 4)
        np.testing.assert_allclose(trend["slope"], 1.0)
        self.assertEqual(trend["n_lo"].tolist(), [1, 2, 4, 8])

    def test_insufficient_data(self):
        frame = planted("range_size", [0.75])
        with self.assertRaises(InsufficientDataError):
            fit_exponent(frame, "range_size")
        with self.assertRaises(InsufficientDataError):
            fit_exponent(frame, "not_a_column")
        self.assertEqual(fit_all(frame, statistics=("range_size", "cap")), [])


if __name__ == "__main__":
    unittest.main()
