#!/usr/bin/env python3
"""
Unit tests for the Green's function evaluator.
"""

import os
import math
import shutil
import tempfile
import unittest

import numpy as np
import pandas as pd

from brwcap.controllers.green import BESSEL_ARGUMENT_MAX, GreenEvaluator, green_constant
from brwcap.controllers.lattice_walks import green_transition_sum
from brwcap.models.lattice import LatticeStepDistribution
from brwcap.utils.config import Config
from brwcap.utils.errors import InvalidDistributionError

# G(0) of the simple random walk on Z^3 is 1.516386059151978; holding half the time doubles it
LAZY_G0 = 2 * 1.516386059151978


def skewed_law() -> LatticeStepDistribution:
    """Mean zero, diagonal covariance, not symmetric"""
    points = np.array([[1, 0, 0], [-2, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]])
    probs = np.array([2 / 9, 1 / 9, 1 / 6, 1 / 6, 1 / 6, 1 / 6])
    return LatticeStepDistribution("skewed", points, probs)


def remainder_config() -> Config:
    config = Config.defaults()
    config.update({"green_fft_min_size": 64, "green_remainder_tolerance": 1e-4})
    return config


class TestGreenEvaluator(unittest.TestCase):
    """Exact values, symmetries and the asymptotic regime for the lazy walk."""

    @classmethod
    def setUpClass(cls):
        cls.eta = LatticeStepDistribution.lazy_srw(3, 0.5)
        cls.ev = GreenEvaluator(cls.eta, config=Config.defaults())

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def test_origin_value(self):
        self.assertAlmostEqual(self.ev.green_exact((0, 0, 0)), LAZY_G0, delta=1e-6)

    def test_symmetries(self):
        x = np.array([3, -1, 2])
        value = self.ev.green(x)
        self.assertEqual(self.ev.green(-x), value)
        self.assertEqual(self.ev.green(np.array([1, 2, -3])), value)

    def test_decreasing_along_axis(self):
        values = self.ev.green_many([[k, 0, 0] for k in range(0, 10)])
        self.assertTrue(np.all(np.diff(values) < 0))
        self.assertTrue(np.all(values > 0))

    def test_harmonicity(self):
        for x in ([0, 0, 0], [1, 0, 0], [2, 1, 0], [3, 3, 3]):
            self.assertLess(abs(self.ev.harmonicity_residual(x)), 1e-8)

    def test_constant(self):
        self.assertAlmostEqual(green_constant(3, np.eye(3)), 1.0 / (2.0 * math.pi), places=12)
        self.assertAlmostEqual(self.ev.c_d_eta, 6 ** 1.5 / (2 * math.pi), places=12)

    def test_asymptotic_regime(self):
        far = np.array([self.ev.r_exact + 5, 0, 0])
        self.assertAlmostEqual(self.ev.green(far), self.ev.green_asymptotic(far), places=15)
        self.assertLessEqual(self.ev.crossover, 1e-3)
        near = np.array([30, 10, 0])
        relative = abs(self.ev.green_exact(near) - self.ev.green_asymptotic(near)) / self.ev.green_exact(near)
        self.assertLess(relative, 5e-3)
        with self.assertRaises(ValueError):
            self.ev.green_asymptotic((0, 0, 0))
        with self.assertRaises(ValueError):
            self.ev.green_exact(far)

    def test_matrix_orientation(self):
        rows = np.array([[0, 0, 0], [1, 0, 0]])
        cols = np.array([[0, 2, 0], [1, 0, 0], [4, 4, 1]])
        matrix = self.ev.green_matrix(rows, cols)
        self.assertEqual(matrix.shape, (2, 3))
        self.assertAlmostEqual(matrix[1, 1], LAZY_G0, delta=1e-6)
        self.assertEqual(matrix[0, 2], self.ev.green([4, 4, 1]))
        self.assertEqual(matrix[1, 0], self.ev.green([-1, 2, 0]))

    def test_cache_and_export(self):
        self.ev.green_many([[0, 0, 1], [1, 0, 0], [0, -1, 0]])
        self.assertGreater(self.ev.table_size(), 0)
        path = self.ev.export_table_csv(os.path.join(self.test_dir, "green.csv"))
        frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), ["x1", "x2", "x3", "G"])
        row = frame[(frame.x1 == 0) & (frame.x2 == 0) & (frame.x3 == 1)]
        self.assertEqual(len(row), 1)
        self.assertAlmostEqual(float(row.G.iloc[0]), self.ev.green([1, 0, 0]), places=12)

    def test_nearest_neighbour_law_has_no_remainder(self):
        self.assertEqual(self.ev.remainder_error, 0.0)
        self.assertEqual(self.ev.fft_size, 0)

    def test_bessel_tables_finite(self):
        self.assertLessEqual(self.ev._nodes[-1] * float(np.max(self.ev.axis_scale)),
                             BESSEL_ARGUMENT_MAX * (1 + 1e-12))
        for table in self.ev._axis_tables:
            self.assertTrue(np.all(np.isfinite(table)))
        values = self.ev.green_many([[0, 0, 0], [5, 0, 0], [self.ev.r_exact, 0, 0]])
        self.assertTrue(np.all(np.isfinite(values)))
        self.assertAlmostEqual(values[0], LAZY_G0, delta=1e-6)


class TestGreenRemainder(unittest.TestCase):
    """Laws with steps beyond the nearest neighbours go through the FFT remainder."""

    @classmethod
    def setUpClass(cls):
        cls.box = LatticeStepDistribution.uniform_box(3, 1)
        cls.ev = GreenEvaluator(cls.box, r_exact=8, config=remainder_config())

    def test_remainder_grid_used(self):
        self.assertEqual(self.ev.fft_size, 64)
        self.assertLess(self.ev.remainder_error, 1e-4)

    def test_agrees_with_transition_sum(self):
        for x in ((0, 0, 0), (1, 1, 0)):
            expected = green_transition_sum(self.box, x, horizons=(16, 32, 64))
            self.assertAlmostEqual(self.ev.green_exact(x), expected, delta=1e-3)

    def test_harmonicity(self):
        for x in ([0, 0, 0], [1, 0, 0], [2, 1, 0], [1, 1, 1]):
            self.assertLess(abs(self.ev.harmonicity_residual(x)), 1e-5)

    def test_skewed_law(self):
        law = skewed_law()
        self.assertFalse(law.symmetric)
        ev = GreenEvaluator(law, r_exact=8, config=remainder_config())
        self.assertGreater(ev.fft_size, 0)
        for x in ([0, 0, 0], [1, 0, 0], [-1, 1, 0]):
            self.assertLess(abs(ev.harmonicity_residual(x)), 1e-5)
        self.assertNotAlmostEqual(ev.green((1, 0, 0)), ev.green((-1, 0, 0)), places=6)


class TestGreenRejections(unittest.TestCase):
    """Laws the evaluator refuses."""

    def test_periodic(self):
        with self.assertRaises(InvalidDistributionError):
            GreenEvaluator(LatticeStepDistribution.srw(3), warm=False)

    def test_recurrent_dimension(self):
        with self.assertRaises(InvalidDistributionError):
            GreenEvaluator(LatticeStepDistribution.lazy_srw(2), warm=False)

    def test_reducible(self):
        points = np.array([[0, 0, 0], [2, 0, 0], [-2, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]])
        dist = LatticeStepDistribution("even-x", points, np.full(7, 1 / 7))
        with self.assertRaises(InvalidDistributionError):
            GreenEvaluator(dist, warm=False)


class TestGreenHigherDimensions(unittest.TestCase):

    def test_five_dimensions(self):
        ev = GreenEvaluator(LatticeStepDistribution.lazy_srw(5, 0.5), r_exact=16, config=Config.defaults())
        g0 = ev.green((0,) * 5)
        self.assertGreater(g0, 2.0)
        self.assertLess(abs(ev.harmonicity_residual((1, 0, 0, 0, 0))), 1e-8)
        self.assertLess(ev.green((1, 1, 0, 0, 0)), ev.green((1, 0, 0, 0, 0)))


if __name__ == "__main__":
    unittest.main()
