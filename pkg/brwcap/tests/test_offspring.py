#!/usr/bin/env python3
"""
Unit tests for the offspring laws.
"""

import unittest

import numpy as np

from brwcap.models.offspring import OffspringDistribution, parse_offspring
from brwcap.utils.errors import InvalidDistributionError


class TestOffspringDistribution(unittest.TestCase):
    """Tests for OffspringDistribution and parse_offspring."""

    def test_geometric_is_critical_after_truncation(self):
        mu = OffspringDistribution.geometric(0.5)
        self.assertAlmostEqual(mu.mean, 1.0, places=9)
        self.assertAlmostEqual(mu.variance, 2.0, places=6)
        self.assertLess(mu.truncation_mass, 1e-12)
        self.assertAlmostEqual(mu.pmf.sum(), 1.0, places=12)

    def test_binary_law(self):
        mu = OffspringDistribution.binary()
        self.assertEqual(mu.max_children, 2)
        self.assertAlmostEqual(mu.variance, 1.0)
        self.assertAlmostEqual(mu.second_moment, 2.0)

    def test_poisson_law(self):
        mu = parse_offspring("poisson:1")
        self.assertAlmostEqual(mu.mean, 1.0, places=9)
        self.assertAlmostEqual(mu.variance, 1.0, places=6)

    def test_non_critical_law_is_rejected(self):
        with self.assertRaises(InvalidDistributionError):
            OffspringDistribution.from_weights([0.2, 0.8])
        with self.assertRaises(InvalidDistributionError):
            parse_offspring("geometric:0.3")
        with self.assertRaises(InvalidDistributionError):
            parse_offspring("poisson:2")

    def test_degenerate_law_is_rejected(self):
        with self.assertRaises(InvalidDistributionError):
            OffspringDistribution.from_weights([0.0, 1.0])

    def test_pmf_spec_and_trailing_zeros(self):
        mu = parse_offspring("pmf:0.25,0.5,0.25,0,0")
        self.assertEqual(mu.max_children, 2)
        self.assertEqual(mu.name, "pmf:0.25,0.5,0.25,0,0")

    def test_geometric_truncation(self):
        default = parse_offspring("geometric:0.5")
        finer = parse_offspring("geometric:0.5", truncation=1e-15)
        self.assertLess(finer.truncation_mass, 1e-15)
        self.assertEqual(default.pmf.size, 41)
        self.assertEqual(finer.pmf.size, 51)
        with self.assertRaises(InvalidDistributionError):
            parse_offspring("geometric:0.5", truncation=1e-3)

    def test_unknown_spec(self):
        with self.assertRaises(InvalidDistributionError):
            parse_offspring("zipf:2")
        with self.assertRaises(InvalidDistributionError):
            parse_offspring("geometric:abc")

    def test_samples_stay_in_support_and_average_one(self):
        mu = OffspringDistribution.geometric(0.5)
        rng = np.random.Generator(np.random.PCG64(7))
        draws = mu.sample(rng, 200000)
        self.assertGreaterEqual(draws.min(), 0)
        self.assertLessEqual(draws.max(), mu.max_children)
        # sd of the mean is sqrt(2 / 200000) ~ 0.0032
        self.assertAlmostEqual(draws.mean(), 1.0, delta=0.02)

    def test_lukasiewicz_increment(self):
        inc = OffspringDistribution.binary().increments()
        np.testing.assert_array_equal(inc.values, [-1, 0, 1])
        self.assertAlmostEqual(inc.mean, 0.0)
        self.assertAlmostEqual(inc.variance, 1.0)


if __name__ == "__main__":
    unittest.main()
