import math
import unittest

import numpy as np

from classical import ORBIT_COLUMNS, asymptotic_rate, exact_orbit_eps2, f_over_t_plateau, halving_error, \
                      integrate_orbit, self_similar_data, time_reversal_error
from exceptions import OriginPassage, Undecided


class TestIntegrator(unittest.TestCase):

    def test_constant_force(self):
        """
        At eps = 1 the force is constant and Verlet reproduces 1 + t + t^2/2
        """
        traj = integrate_orbit(1.0, 1.0, 1.0, 1000.0, 1e-2)
        t = traj.times[-1]
        exact = 1.0 + t + 0.5 * t ** 2
        self.assertLess(abs(traj.positions[-1][0] - exact) / exact, 1e-9)
        self.assertLess(traj.energy_drift, 1e-9)

    def test_harmonic_repeller(self):
        """
        At eps = 2 the orbit follows the closed form and the error is second order in dt
        """
        traj = integrate_orbit(1.0, 0.5, 2.0, 5.0, 1e-3)
        exact = exact_orbit_eps2(1.0, 0.5, traj.times)
        self.assertLess(np.max(np.abs(traj.positions[:, 0] - exact) / exact), 1e-4)

        ratio = halving_error(1.0, 0.5, 2.0, 2.0, 0.01) / halving_error(1.0, 0.5, 2.0, 2.0, 0.005)
        self.assertTrue(3.0 < ratio < 5.0, msg="halving ratio {}".format(ratio))

    def test_time_reversal(self):
        """
        Running back from the end point with reversed momentum returns to the start
        """
        traj = integrate_orbit(1.0, 1.0, 1.0, 10.0, 0.01)
        self.assertLess(time_reversal_error(traj), 1e-8)

    def test_origin_passage(self):
        """
        Orbits that launch near or cross the origin are refused for eps < 2
        """
        with self.assertRaises(OriginPassage):
            integrate_orbit(0.01, 1.0, 1.0, 1.0, 0.01)
        with self.assertRaises(OriginPassage):
            integrate_orbit(1.0, -3.0, 1.0, 2.0, 0.01)

    def test_rows(self):
        """
        One row per time with every exported column
        """
        traj = integrate_orbit(1.0, 1.0, 1.0, 1.0, 0.1)
        rows = traj.rows()
        self.assertEqual(len(rows), 11)
        self.assertEqual(len(rows[0]), len(ORBIT_COLUMNS))
        self.assertTrue(math.isnan(rows[0][-1]))

    def test_several_dimensions(self):
        """
        Radial data in two dimensions stays on its ray
        """
        traj = integrate_orbit([1.0, 1.0], [1.0, 1.0], 1.0, 10.0, 0.01)
        self.assertTrue(np.allclose(traj.positions[:, 0], traj.positions[:, 1]))


class TestEscapeRates(unittest.TestCase):

    def test_exponential(self):
        """
        At eps = 2 |x| grows like exp(sqrt(2) t)
        """
        fit = asymptotic_rate(integrate_orbit(1.0, 1.0, 2.0, 100.0, 0.01))
        self.assertEqual(fit.growth_class, 'exponential')
        self.assertAlmostEqual(fit.rate, math.sqrt(2.0), places=3)

    def test_power_law(self):
        """
        For eps < 2 |x| grows like t^(2/(2 - eps)) along the self-similar orbit
        """
        for eps in (0.5, 1.5):
            x0, p0 = self_similar_data(eps, 3.0)
            fit = asymptotic_rate(integrate_orbit(x0, p0, eps, 1e4, 0.1))
            growth_class, _ = fit
            alpha = 2.0 / (2.0 - eps)
            self.assertTrue(growth_class.startswith('power'), msg="eps={}: {}".format(eps, growth_class))
            self.assertAlmostEqual(fit.rate, alpha, delta=1e-2, msg="eps={}".format(eps))

    def test_flow_plateau(self):
        """
        f(x(t))/t settles at sqrt(2) for eps = 1
        """
        mean, _ = f_over_t_plateau(integrate_orbit(1.0, 1.0, 1.0, 1000.0, 0.01))
        self.assertAlmostEqual(mean, math.sqrt(2.0), delta=1e-2)

    def test_undecided(self):
        """
        An orbit that has not escaped cannot be classified
        """
        with self.assertRaises(Undecided):
            asymptotic_rate(integrate_orbit(1.0, 0.0, 1.0, 1.0, 0.01))

    def test_self_similar_range(self):
        """
        Self-similar orbits need eps < 2
        """
        with self.assertRaises(ValueError):
            self_similar_data(2.0, 1.0)


if __name__ == '__main__':
    unittest.main()
