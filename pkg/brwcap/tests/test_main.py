#!/usr/bin/env python3
"""
Tests for command-line parsing and the experiment settings merge.
"""

import os
import shutil
import tempfile
import unittest

from brwcap.main import _parse_overrides, experiment_settings, parse_arguments
from brwcap.models.records import ExperimentConfig


class TestArguments(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def test_run_flags(self):
        args = parse_arguments(["--debug", "--set", "solve_ceiling=100", "run", "--mode", "subtrees",
                                "--dim", "5", "--n-min", "8", "--n-max", "64", "--capacity-policy", "bounds"])
        self.assertTrue(args.debug)
        self.assertEqual(args.command, "run")
        self.assertEqual(args.set, ["solve_ceiling=100"])
        settings = experiment_settings(args)
        self.assertEqual(settings, {"mode": "subtrees", "dim": 5, "n_min": 8, "n_max": 64,
                                    "capacity_policy": "bounds"})
        cfg = ExperimentConfig.from_mapping(settings)
        self.assertEqual(cfg.grid(), [8, 16, 32, 64])

    def test_flags_override_document(self):
        path = os.path.join(self.test_dir, "exp.conf")
        with open(path, "w", encoding="utf-8") as f:
            f.write("mode=conditioned\ndim=4\ntrials=3\nworkers=2\n")
        args = parse_arguments(["run", "--config", path, "--dim", "6"])
        settings = experiment_settings(args)
        self.assertEqual(settings["mode"], "conditioned")
        self.assertEqual(settings["dim"], 6)
        self.assertEqual(settings["trials"], 3)
        self.assertEqual(settings["workers"], 2)

    def test_other_commands(self):
        fit = parse_arguments(["fit", "--in", "results.csv", "--stat", "cap", "--stat", "range_size"])
        self.assertEqual(fit.input, "results.csv")
        self.assertEqual(fit.stat, ["cap", "range_size"])
        self.assertEqual(fit.window, 4)
        report = parse_arguments(["report", "--in", "results.csv", "--fits", "fits.json"])
        self.assertEqual(report.out_dir, "report")
        selftest = parse_arguments(["selftest", "--quick"])
        self.assertTrue(selftest.quick)
        table = parse_arguments(["green-table", "--dim", "4", "--radius", "2"])
        self.assertEqual((table.eta, table.dim, table.radius), ("lazy-srw:0.5", 4, 2))

    def test_rejections(self):
        with self.assertRaises(SystemExit):
            parse_arguments(["run", "--mode", "sideways"])
        with self.assertRaises(SystemExit):
            parse_arguments([])

    def test_overrides(self):
        self.assertEqual(_parse_overrides(["green-r-exact=32", "debug_checks=true", "green_tolerance=1e-8"]),
                         {"green_r_exact": 32, "debug_checks": True, "green_tolerance": 1e-8})
        with self.assertRaises(ValueError):
            _parse_overrides(["solve_ceiling"])


if __name__ == "__main__":
    unittest.main()
