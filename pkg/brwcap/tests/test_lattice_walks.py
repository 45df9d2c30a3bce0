#!/usr/bin/env python3
"""
Unit tests for step sampling and transition tables.
"""

import unittest

import numpy as np

from brwcap.controllers.lattice_walks import (convolve, covariance_of, green_transition_sum,
                                              sample_step, sample_steps, total_variation,
                                              transition_pmf)
from brwcap.models.lattice import LatticeStepDistribution
from brwcap.utils.errors import InvalidDistributionError


def rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


class TestSampling(unittest.TestCase):

    def test_steps_in_support(self):
        box = LatticeStepDistribution.uniform_box(3, 2)
        steps = sample_steps(box, rng(1), 5000)
        self.assertEqual(steps.shape, (5000, 3))
        self.assertLessEqual(int(np.abs(steps).max()), 2)
        self.assertTrue(np.all(np.abs(steps).sum(axis=1) > 0))
        self.assertEqual(sample_step(box, rng(2)).shape, (3,))

    def test_empirical_covariance(self):
        lazy = LatticeStepDistribution.lazy_srw(4, 0.5)
        steps = sample_steps(lazy, rng(3), 400000).astype(float)
        np.testing.assert_allclose(np.cov(steps.T), lazy.covariance, atol=0.01)

    def test_same_seed_same_steps(self):
        srw = LatticeStepDistribution.srw(5)
        np.testing.assert_array_equal(sample_steps(srw, rng(4), 100), sample_steps(srw, rng(4), 100))


class TestTransitionTables(unittest.TestCase):

    def setUp(self):
        self.lazy = LatticeStepDistribution.lazy_srw(3, 0.5)

    def test_mass_and_symmetry(self):
        table = transition_pmf(self.lazy, 6)
        self.assertEqual(table.radius, 6)
        self.assertAlmostEqual(table.total(), 1.0, places=12)
        self.assertLess(table.leak, 1e-12)
        np.testing.assert_array_equal(table.probs, np.flip(table.probs))
        self.assertAlmostEqual(table[(1, 0, 0)], table[(0, 0, -1)], places=13)
        self.assertEqual(table[(7, 0, 0)], 0.0)

    def test_one_step_is_the_law(self):
        table = transition_pmf(self.lazy, 1)
        for point, prob in self.lazy.as_dict().items():
            self.assertAlmostEqual(table[point], prob, places=15)
        self.assertEqual(len(table.items()), 7)

    def test_covariance_grows_linearly(self):
        table = transition_pmf(self.lazy, 5)
        np.testing.assert_allclose(covariance_of(table), 5 * self.lazy.covariance, atol=1e-12)

    def test_semigroup(self):
        composed = convolve(transition_pmf(self.lazy, 3), transition_pmf(self.lazy, 4))
        direct = transition_pmf(self.lazy, 7)
        self.assertEqual(composed.steps, 7)
        self.assertLess(total_variation(composed, direct), 1e-12)

    def test_truncated_radius_leaks(self):
        table = transition_pmf(self.lazy, 8, radius=2)
        self.assertGreater(table.leak, 0.0)
        self.assertAlmostEqual(table.total() + table.leak, 1.0, places=12)

    def test_local_bound(self):
        # (1+m)^{d/2} max_x pi_m(x) stays bounded and settles at the local-limit constant
        steps = (0, 1, 2, 4, 8, 16, 32, 64)
        scaled = np.array([(1 + m) ** 1.5 * transition_pmf(self.lazy, m).probs.max() for m in steps])
        c7 = scaled.max()
        self.assertLess(c7, 2.0)
        limit = (2 * np.pi * 64) ** -1.5 / np.sqrt(np.linalg.det(self.lazy.covariance)) * 65 ** 1.5
        self.assertAlmostEqual(scaled[-1] / limit, 1.0, delta=0.05)

    def test_caps(self):
        with self.assertRaises(ValueError):
            transition_pmf(self.lazy, 129)
        with self.assertRaises(ValueError):
            transition_pmf(self.lazy, 10, radius=300)
        with self.assertRaises(ValueError):
            transition_pmf(self.lazy, -1)


class TestTransitionSum(unittest.TestCase):

    def test_periodic_walk_rejected(self):
        with self.assertRaises(InvalidDistributionError):
            green_transition_sum(LatticeStepDistribution.srw(3), (0, 0, 0))

    def test_horizons_must_be_geometric(self):
        with self.assertRaises(ValueError):
            green_transition_sum(LatticeStepDistribution.lazy_srw(3), (0, 0, 0), horizons=(8, 16, 40))

    def test_origin_of_the_lazy_walk(self):
        # twice the simple random walk value 1.516386059...
        value = green_transition_sum(LatticeStepDistribution.lazy_srw(3, 0.5), (0, 0, 0))
        self.assertAlmostEqual(value, 3.0327721183, delta=1e-3)


if __name__ == "__main__":
    unittest.main()
