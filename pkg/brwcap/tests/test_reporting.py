#!/usr/bin/env python3
"""
Tests for the markdown and SVG report writers.
"""

import os
import shutil
import tempfile
import unittest

import numpy as np

from brwcap.models.records import ExponentFit
from brwcap.utils.reporting import ExperimentReport, load_fits, save_fits


def make_fit(statistic="cap", slope=0.74, target=0.75, verdict="pass", trend=None):
    log_n = np.log([64.0, 128.0, 256.0, 512.0]).tolist()
    return ExponentFit(statistic=statistic, log_n=log_n,
                       mean_log=[0.1 + slope * x for x in log_n],
                       slope=slope, intercept=0.1, stderr=0.01, r_squared=0.999,
                       target=target, kind="eq",
                       margin=0.15 if target is not None else None, verdict=verdict,
                       trend=trend or [])


class TestExperimentReport(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.report = ExperimentReport(self.test_dir)

    def tearDown(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def test_summary_table(self):
        self.report.add_fits([make_fit()])
        table = self.report.summary_table(["cap", "range_size"]).splitlines()
        self.assertEqual(len(table), 4)
        self.assertIn("| cap | 0.740 | 0.010 | 0.999 | 0.750 | eq | 0.15 | pass |", table)
        self.assertTrue(table[3].startswith("| range_size |"))
        self.assertTrue(table[3].endswith("| no data |"))
        self.assertEqual(table[3].count("|"), 9)

    def test_markdown_lists_trends_and_sections(self):
        self.report.set_summary_stats({"records": 12})
        self.report.add_detail_section("Configuration", {"dim": 5})
        self.report.add_fits([make_fit(slope=1.2, verdict="approaching", trend=[1.4, 1.1, 0.9])])
        text = self.report.generate_markdown_report()
        self.assertIn("- records: 12", text)
        self.assertIn("## Configuration", text)
        self.assertIn("- cap (target 0.750): 1.400, 1.100, 0.900", text)
        self.assertTrue(os.path.exists(os.path.join(self.test_dir, "summary.md")))

    def test_fit_plot_carries_target_guide(self):
        path = self.report.plot_fit(make_fit())
        with open(path, "r", encoding="utf-8") as f:
            svg = f.read()
        self.assertIn('id="mean-points"', svg)
        self.assertIn('id="fit-line"', svg)
        self.assertIn('id="target-guide"', svg)
        self.assertIn("target=0.75", svg)

    def test_fit_plot_without_target(self):
        path = self.report.plot_fit(make_fit(statistic="num_vertices", target=None, verdict="n/a"))
        with open(path, "r", encoding="utf-8") as f:
            svg = f.read()
        self.assertNotIn('id="target-guide"', svg)
        self.assertIn("target=none", svg)

    def test_write_all_without_fits(self):
        paths = self.report.write_all(statistics=["cap"])
        self.assertEqual([os.path.basename(p) for p in paths], ["summary.md", "no_data.svg"])
        with open(paths[0], "r", encoding="utf-8") as f:
            self.assertIn("| cap |", f.read())

    def test_fits_json(self):
        fits = [make_fit(), make_fit(statistic="range_size", target=None)]
        path = save_fits(fits, os.path.join(self.test_dir, "fits.json"))
        loaded = load_fits(path)
        self.assertEqual([fit.statistic for fit in loaded], ["cap", "range_size"])
        self.assertEqual(loaded[0].target, 0.75)
        self.assertIsNone(loaded[1].target)

        self.report.add_fits(fits)
        json_path = self.report.save_json_report("report.json")
        self.assertTrue(os.path.exists(json_path))


if __name__ == "__main__":
    unittest.main()
