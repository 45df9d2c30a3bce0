#!/usr/bin/env python3
"""
Tests for records, configuration, seeding and the memory guard.
"""

import os
import shutil
import tempfile
import unittest
from unittest import mock

import numpy as np

from brwcap.models.records import CSV_COLUMNS, CapacityResult, ExperimentConfig, TrialRecord
from brwcap.utils.config import Config, load_document
from brwcap.utils.errors import BrwcapError, InvalidDistributionError, MemoryBudgetError
from brwcap.utils.memory_monitor import MemoryMonitor
from brwcap.utils.seeding import derive_seed, make_rng


class TestExperimentConfig(unittest.TestCase):

    def test_grid(self):
        self.assertEqual(ExperimentConfig(n_min=4, n_max=64).grid(), [4, 8, 16, 32, 64])
        self.assertEqual(ExperimentConfig(n_min=4, n_max=60).grid(), [4, 8, 16, 32])
        self.assertEqual(ExperimentConfig(n_min=10, n_max=10).grid(), [10])
        self.assertEqual(ExperimentConfig(n_min=1, n_max=4, ratio=1.5).grid(), [1, 2, 3])

    def test_validation(self):
        with self.assertRaises(ValueError):
            ExperimentConfig(mode="sideways")
        with self.assertRaises(ValueError):
            ExperimentConfig(capacity_policy="guess")
        with self.assertRaises(ValueError):
            ExperimentConfig(n_min=100, n_max=10)
        with self.assertRaises(ValueError):
            ExperimentConfig(trials=0)
        with self.assertRaises(ValueError):
            ExperimentConfig(n_min=2, n_max=8, ratio=1.0)

    def test_hash_ignores_output_path(self):
        a = ExperimentConfig(out="a.csv")
        b = ExperimentConfig(out="b.csv")
        self.assertEqual(a.config_hash(), b.config_hash())
        self.assertEqual(len(a.config_hash()), 16)
        self.assertNotEqual(a.config_hash(), ExperimentConfig(seed=43).config_hash())

    def test_from_mapping(self):
        cfg = ExperimentConfig.from_mapping({"n-min": 16, "n_max": 64, "colour": "red", "dim": None})
        self.assertEqual((cfg.n_min, cfg.n_max, cfg.dim), (16, 64, 3))


class TestTrialRecord(unittest.TestCase):

    def _record(self, **values):
        return TrialRecord(config_hash="h", mode="vertices", dim=3, mu="m", theta="t", eta="e",
                           n=8, trial=0, seed=1, **values)

    def test_row_order(self):
        self.assertEqual(list(self._record().to_row()), CSV_COLUMNS)

    def test_sandwich(self):
        self.assertTrue(self._record().sandwich_holds())
        self.assertTrue(self._record(cap_lower=1.0, cap_value=1.5, cap_upper=2.0).sandwich_holds())
        self.assertTrue(self._record(cap_lower=1.6, cap_value=1.5, cap_error=0.2).sandwich_holds())
        self.assertFalse(self._record(cap_value=2.5, cap_error=0.1, cap_upper=2.0).sandwich_holds())

    def test_capacity_result_dict(self):
        result = CapacityResult(value=2.0, method="exact-solve", params={"points": np.int64(4)})
        record = result.to_dict()
        self.assertEqual(record["points"], 4)
        self.assertIsInstance(record["points"], int)
        self.assertEqual(record["error"], 0.0)


class TestConfig(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def test_persisted_defaults_and_missing_keys(self):
        config = Config(self.test_dir)
        self.assertTrue(os.path.exists(config.config_file))
        self.assertEqual(config.get("solve_ceiling"), 4000)
        config.set("solve_ceiling", 10)
        self.assertEqual(Config(self.test_dir).get("solve_ceiling"), 10)

    def test_update_ignores_unknown_keys(self):
        config = Config.defaults()
        config.update({"green_r_exact": 32, "nonsense": 1})
        self.assertEqual(config.get("green_r_exact"), 32)
        self.assertNotIn("nonsense", config.as_dict())
        self.assertEqual(Config.defaults().get("green_r_exact"), 64)

    def test_document_formats(self):
        lines = os.path.join(self.test_dir, "exp.conf")
        with open(lines, "w", encoding="utf-8") as f:
            f.write("# experiment\nmode = subtrees\nn-min=8\nratio=1.5\n\ntheta=lazy-srw:0.5  # tree steps\n")
        self.assertEqual(load_document(lines),
                         {"mode": "subtrees", "n_min": 8, "ratio": 1.5, "theta": "lazy-srw:0.5"})

        document = os.path.join(self.test_dir, "exp.json")
        with open(document, "w", encoding="utf-8") as f:
            f.write('{"n-max": 1024, "trials": 3}')
        self.assertEqual(load_document(document), {"n_max": 1024, "trials": 3})

        broken = os.path.join(self.test_dir, "broken.conf")
        with open(broken, "w", encoding="utf-8") as f:
            f.write("mode vertices\n")
        with self.assertRaises(ValueError):
            load_document(broken)


class TestSeeding(unittest.TestCase):

    def test_derived_seeds(self):
        self.assertEqual(derive_seed(42, 1024, 3), derive_seed(42, 1024, 3))
        self.assertNotEqual(derive_seed(42, 1024, 3), derive_seed(42, 1024, 4))
        self.assertNotEqual(derive_seed(42, 1024, 3), derive_seed(43, 1024, 3))
        self.assertLess(derive_seed(7, "x"), 2 ** 63)

    def test_make_rng(self):
        generator = make_rng(5)
        self.assertIs(make_rng(generator), generator)
        self.assertEqual(make_rng(5).integers(1 << 30), np.random.Generator(np.random.PCG64(5)).integers(1 << 30))


class TestMemoryGuard(unittest.TestCase):

    def test_check_allocation(self):
        monitor = MemoryMonitor()
        fake = mock.Mock(available=1000 * 2 ** 20)
        with mock.patch("brwcap.utils.memory_monitor.psutil.virtual_memory", return_value=fake):
            monitor.check_allocation(700 * 2 ** 20, "small table")
            with self.assertRaises(MemoryBudgetError):
                monitor.check_allocation(900 * 2 ** 20, "large table")
            monitor.memory_fraction = 0.95
            monitor.check_allocation(900 * 2 ** 20, "large table")

    def test_error_hierarchy(self):
        self.assertTrue(issubclass(MemoryBudgetError, MemoryError))
        self.assertTrue(issubclass(InvalidDistributionError, ValueError))
        self.assertTrue(issubclass(InvalidDistributionError, BrwcapError))


if __name__ == "__main__":
    unittest.main()
