import math
import unittest

import numpy as np

from geometry import build_geometry
from model import make_grid
from spaces import besov_norm, besov_norms, besov_star_norm, bstar0_trend, compare_variants, duality_check, \
                   dyadic_decomposition, embedding_constant, increasing_trend, inclusion_chain_check, \
                   strict_inclusion_witness


class TestDyadicDecomposition(unittest.TestCase):

    def setUp(self):
        self.geom = build_geometry(make_grid('line-1d', 1.0 / 32, 32.0), 1.0, 1.0)
        self.decomp = dyadic_decomposition(self.geom)

    def test_partition(self):
        """
        Every node lies in exactly one ring
        """
        indices = np.concatenate(self.decomp.rings)
        self.assertEqual(indices.size, self.geom.size)
        self.assertEqual(np.unique(indices).size, self.geom.size)

    def test_complete_rings(self):
        """
        f(32) = 2 sqrt(32) - 1 holds the rings 1, 2 and 4 completely but not 8
        """
        self.assertEqual(self.decomp.nu_max, 3)
        self.assertEqual(self.decomp.complete, (True, True, True, False))

    def test_unknown_coordinate(self):
        """
        Only f-based and r-based rings exist
        """
        with self.assertRaises(ValueError):
            dyadic_decomposition(self.geom, 'x-based')

    def test_ring_indicator(self):
        """
        The indicator of ring nu has B norm R_nu^(1/2) mass and B* norm R_nu^(-1/2) mass
        """
        nu = 2
        psi = np.zeros(self.geom.size)
        psi[self.decomp.rings[nu]] = 1.0
        mass = math.sqrt(self.geom.spacing * self.decomp.rings[nu].size)
        self.assertAlmostEqual(besov_norm(psi, self.decomp), 2.0 * mass)
        self.assertAlmostEqual(besov_star_norm(psi, self.decomp), 0.5 * mass)


class TestNorms(unittest.TestCase):

    def setUp(self):
        self.geom = build_geometry(make_grid('line-1d', 1.0 / 32, 32.0), 1.0, 1.0)
        self.decomp = dyadic_decomposition(self.geom)
        rng = np.random.default_rng(7)
        self.samples = [rng.standard_normal(self.geom.size) + 1j * rng.standard_normal(self.geom.size)
                        for _ in range(5)]

    def test_duality(self):
        """
        |<psi, phi>| <= ||psi||_B ||phi||_B*
        """
        for psi, phi in zip(self.samples, self.samples[1:]):
            lhs, rhs = duality_check(psi, phi, self.decomp)
            self.assertLessEqual(lhs, rhs)

    def test_inclusion_chain(self):
        """
        The inclusion chain holds with its ring-wise constants
        """
        x = self.geom.x
        for psi in self.samples + [np.exp(-x ** 2), 1.0 / (1.0 + np.abs(x))]:
            for s in (0.75, 1.0, 2.0):
                chain = inclusion_chain_check(psi, self.decomp, s)
                self.assertTrue(chain.passed, msg="s={}: {}".format(s, chain.values))

    def test_inclusion_chain_rejects(self):
        """
        s <= 1/2 and r-based rings are rejected
        """
        with self.assertRaises(ValueError):
            inclusion_chain_check(self.samples[0], self.decomp, 0.5)
        with self.assertRaises(ValueError):
            inclusion_chain_check(self.samples[0], dyadic_decomposition(self.geom, 'r-based'), 1.0)

    def test_embedding_constant(self):
        """
        c_s^2 = 1 / (1 - 2^(1-2s))
        """
        self.assertAlmostEqual(embedding_constant(1.0), math.sqrt(2.0))

    def test_report(self):
        """
        The report collects both norms, the tails and weighted norms
        """
        psi = np.exp(-self.geom.x ** 2)
        report = besov_norms(psi, self.decomp, s_values=(0.5, -0.5))
        self.assertAlmostEqual(report.besov_B, besov_norm(psi, self.decomp))
        self.assertAlmostEqual(report.besov_Bstar, besov_star_norm(psi, self.decomp))
        self.assertEqual(len(report.tail_rows()), self.decomp.nu_max + 1)
        self.assertTrue(report.is_Bstar0_numerically)
        self.assertFalse(report.truncated)
        record = report.to_record()
        self.assertIn('H_0.5', record)
        self.assertIn('H_-0.5', record)

    def test_truncated_sup(self):
        """
        A vector living on the outermost ring flags a truncated sup
        """
        psi = np.zeros(self.geom.size)
        psi[self.decomp.rings[-1]] = 1.0
        self.assertTrue(besov_norms(psi, self.decomp).truncated)


class TestBstar0Trend(unittest.TestCase):

    def test_trends(self):
        """
        Decaying tails pass, flat ones fail, zero passes
        """
        complete = (True, True, True, True, False)
        self.assertTrue(bstar0_trend([1.0, 0.5, 0.25, 0.125, 0.1], complete))
        self.assertFalse(bstar0_trend([1.0, 1.0, 1.0, 1.0, 1.0], complete))
        self.assertTrue(bstar0_trend([0.0] * 5, complete))

    def test_reference(self):
        """
        With a reference tail the ratio decides
        """
        complete = (True, True, True, False)
        self.assertTrue(bstar0_trend([0.01, 0.01, 0.01, 5.0], complete, reference=[1.0, 1.0, 1.0, 1.0]))
        self.assertFalse(bstar0_trend([0.5, 0.5, 0.5, 0.0], complete, reference=[1.0, 1.0, 1.0, 1.0]))

    def test_undecidable(self):
        """
        Fewer than two complete rings cannot decide
        """
        self.assertFalse(bstar0_trend([0.0, 0.0], (True, False)))

    def test_increasing(self):
        """
        Strictly growing tails
        """
        self.assertTrue(increasing_trend([1.0, 2.0, 3.0]))
        self.assertFalse(increasing_trend([1.0, 1.0]))


class TestVariants(unittest.TestCase):

    def test_witness(self):
        """
        At eps = 2 a vector with flat f-based tail has a growing r-based tail
        """
        geom = build_geometry(make_grid('line-1d', 1.0 / 32, 160.0), 2.0, 1.0)
        psi, r_report, f_report, witness = strict_inclusion_witness(geom)
        self.assertGreaterEqual(len(witness), 2)
        f_tails = f_report.tail_values
        r_tails = r_report.tail_values
        for nu_f, _ in witness:
            self.assertAlmostEqual(f_tails[nu_f], 1.0, places=9)
        r_rings = [nu_r for _, nu_r in witness]
        self.assertTrue(increasing_trend(r_tails[r_rings]), msg="r-based tails {}".format(r_tails[r_rings]))

    def test_witness_needs_eps_two(self):
        """
        The strict inclusion is only built at eps = 2
        """
        geom = build_geometry(make_grid('line-1d', 1.0 / 32, 16.0), 1.0, 1.0)
        with self.assertRaises(ValueError):
            strict_inclusion_witness(geom)

    def test_compare(self):
        """
        Both ring families give finite B* norms
        """
        geom = build_geometry(make_grid('line-1d', 1.0 / 32, 32.0), 1.0, 1.0)
        comparison = compare_variants(np.exp(-geom.x ** 2), geom)
        self.assertTrue(np.isfinite(comparison.ratio))
        self.assertEqual(comparison.r_based.coordinate, 'r-based')


if __name__ == '__main__':
    unittest.main()
