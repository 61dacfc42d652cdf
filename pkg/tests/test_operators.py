import unittest
from unittest import mock

import numpy as np

import operators
from exceptions import BranchCut, NoAdmissibleConstants, NotSatisfiable
from geometry import build_geometry, cutoff_jet, refinement_slope, smooth_cutoff, theta_weight
from model import build_hamiltonian, make_grid, make_potential, potential_field, select_r_lambda
from operators import PROBE_LARGE_FACTORS, PROBE_SAMPLES, PROBE_SMALL_CONSTANTS, PROBE_TOLERANCE, build_B, \
                      build_conjugate_A, build_phases, commutator_identity_check, cutoff_limit, divergence_form, \
                      factorization_check, hermiticity_defect, interior_bumps, momentum, positivity_probe, \
                      smooth_bump, virial_identity_check, BOUNDARY_MARGIN


class OperatorCase(unittest.TestCase):

    def setUp(self):
        self.spec = make_potential(epsilon=1.0, q1='0.3*r*f**-1', q2='0.5*f**-2*sin(r)', tau=1.0)
        self.grid = make_grid('line-1d', 1.0 / 32, 32.0)
        self.geom = build_geometry(self.grid, self.spec.epsilon, self.spec.rho)
        self.H = build_hamiltonian(self.spec, self.grid)
        self.A = build_conjugate_A(self.geom)


class TestConjugateOperators(OperatorCase):

    def test_hermitian(self):
        """
        A and B are symmetric matrices
        """
        self.assertLess(hermiticity_defect(self.A), 1e-12)
        self.assertLess(hermiticity_defect(build_B(self.geom)), 1e-12)

    def test_kinetic_stencil(self):
        """
        p 1 p is twice the kinetic part of H
        """
        kinetic = self.H.matrix.toarray() - np.diag(potential_field(self.spec, self.grid))
        stencil = divergence_form(np.ones(self.grid.n_points), self.grid).toarray()
        self.assertTrue(np.allclose(stencil, 2.0 * kinetic))

    def test_momentum_on_plane_wave(self):
        """
        P exp(ikx) = sin(kh)/h exp(ikx) away from the ends
        """
        k = 0.5
        x = self.grid.nodes
        wave = np.exp(1j * k * x)
        image = momentum(self.grid) @ wave
        expected = np.sin(k * self.grid.spacing) / self.grid.spacing * wave
        self.assertTrue(np.allclose(image[1:-1], expected[1:-1]))

    def test_bumps(self):
        """
        Random bumps stay clear of the grid ends
        """
        samples = interior_bumps(self.grid, 10, np.random.default_rng(3))
        self.assertEqual(samples.shape, (10, self.grid.n_points))
        self.assertTrue(np.all(samples[:, :BOUNDARY_MARGIN] == 0))
        self.assertTrue(np.all(samples[:, -BOUNDARY_MARGIN:] == 0))
        self.assertEqual(float(smooth_bump(np.array([5.0]), 0.0, 1.0)[0]), 0.0)


class TestPhases(OperatorCase):

    def test_imaginary_floors(self):
        """
        The phases keep their imaginary floors on both sides of the real axis
        """
        for sign, z in (('upper', 1.0 + 0.01j), ('lower', 1.0 - 0.01j)):
            phases = build_phases(z, self.spec, self.geom, select_r_lambda(self.spec, 1.0, self.geom), sign)
            self.assertTrue(phases.bounds['im_a_floor'], msg=sign)
            self.assertTrue(phases.bounds['im_b_floor'], msg=sign)
            self.assertTrue(phases.bounds['re_a_nonnegative'], msg=sign)

    def test_branch_cut(self):
        """
        A negative square root argument where eta_lambda is active raises BranchCut
        """
        with self.assertRaises(BranchCut):
            build_phases(complex(-5.0), self.spec, self.geom, 1.0)

    def test_wkb_limit(self):
        """
        a approaches |grad r| r^(-eps/2) sqrt(2 (z + r^eps)) far out
        """
        phases = build_phases(complex(1.0), self.spec, self.geom, select_r_lambda(self.spec, 1.0, self.geom))
        far = self.geom.x > 16.0
        r = self.geom.r[far]
        leading = r ** -0.5 * np.sqrt(2.0 * (1.0 + r))
        self.assertTrue(np.allclose(phases.a.real[far], leading, rtol=0.05))


class TestCommutators(OperatorCase):

    def test_identity_check(self):
        """
        Brute force and term by term commutators agree on interior vectors
        """
        theta = theta_weight(self.geom, 1, 0.5)
        form = commutator_identity_check(self.spec, self.geom, theta, 0.25, self.H, self.A, seed=11)
        self.assertLess(form.discrepancy, 0.1)
        self.assertLess(form.chi_identity_error, 1e-2)
        record = form.to_record()
        self.assertEqual(record['nu'], 1)
        self.assertEqual(record['delta'], 0.5)

    def test_factorization(self):
        """
        Both sides of the factorization of H - z agree and q3 is bounded
        """
        z = 1.0 + 0.1j
        phases = build_phases(z, self.spec, self.geom, select_r_lambda(self.spec, 1.0, self.geom))
        form = factorization_check(z, self.spec, self.geom, phases, self.H, seed=5)
        self.assertLess(form.factorization_mismatch, 0.05)
        self.assertTrue(np.isfinite(form.q3_bound))

    def test_second_order_refinement(self):
        """
        The brute force and term by term commutators converge to each other at second order
        """
        spacings = [1.0 / 16, 1.0 / 32, 1.0 / 64]
        discrepancies = []
        for h in spacings:
            geom = build_geometry(make_grid('line-1d', h, 16.0), self.spec.epsilon, self.spec.rho)
            bumps = np.vstack([smooth_bump(geom.x, center, 2.5) for center in (-9.0, -4.5, 5.0, 10.0)])
            samples = np.vstack([bumps, bumps * np.exp(1j * geom.f)])
            form = commutator_identity_check(self.spec, geom, theta_weight(geom, 1, 0.5), 0.25, samples=samples)
            discrepancies.append(form.discrepancy)
        slope = refinement_slope(spacings, discrepancies)
        self.assertGreater(slope, 1.5, msg="refinement slope {} from {}".format(slope, discrepancies))

    def test_virial_identity(self):
        """
        2 Im <chi (H - lambda)> equals the commutator side on any smooth vector
        """
        R = 4.0
        chi_bar = 1.0 - cutoff_jet(self.geom.f / R)[0]
        chi_prime = -cutoff_jet(self.geom.f / R)[1] / R
        phi = smooth_bump(self.geom.x, 12.0, 10.0) * np.exp(1j * self.geom.f)
        phases = build_phases(complex(1.0), self.spec, self.geom, select_r_lambda(self.spec, 1.0, self.geom))
        lhs, rhs = virial_identity_check(self.H, self.A, phi, 1.0, chi_bar, chi_prime, phases.a)
        self.assertGreater(rhs, 0)
        self.assertLess(abs(lhs - rhs), 1e-2 * abs(rhs))


class TestPositivityConstants(OperatorCase):

    def test_bounded_weight_constants(self):
        """
        The bounded-weight search finds admissible constants across nu and delta
        """
        z = 1.0 + 0.1j
        limit = cutoff_limit(self.geom)
        for nu in (0, 1, 2):
            for delta in (0.25, 0.5):
                theta = theta_weight(self.geom, nu, delta)
                report = positivity_probe(z, self.spec, self.geom, theta, H=self.H, A=self.A, seed=2)
                label = "nu={} delta={}".format(nu, delta)
                self.assertTrue(report.passed, msg=label)
                self.assertEqual(report.n_samples, 3 * PROBE_SAMPLES, msg=label)
                self.assertIn(report.c, PROBE_SMALL_CONSTANTS, msg=label)
                self.assertLessEqual(report.n, limit, msg=label)
                self.assertLessEqual(report.C, PROBE_LARGE_FACTORS[-1] * report.form_scale, msg=label)
                self.assertGreaterEqual(report.min_rayleigh, -PROBE_TOLERANCE * report.form_scale, msg=label)
                self.assertTrue(0.0 <= report.absorbed_share <= 1.0, msg=label)
                self.assertEqual(report.to_record()['variant'], 'bounded')

    def test_weighted_constants(self):
        """
        The weighted search finds admissible constants across nu, delta and beta
        """
        z = 1.0 + 0.1j
        phases = build_phases(z, self.spec, self.geom, select_r_lambda(self.spec, 1.0, self.geom))
        for nu, delta, beta in ((0, 0.5, 0.25), (1, 0.5, 0.5), (2, 0.25, 1.0)):
            theta = theta_weight(self.geom, nu, delta)
            report = positivity_probe(z, self.spec, self.geom, theta, beta, variant='weighted', phases=phases,
                                      H=self.H, A=self.A, seed=3)
            label = "nu={} delta={} beta={}".format(nu, delta, beta)
            self.assertTrue(report.passed, msg=label)
            self.assertGreaterEqual(report.n_samples, PROBE_SAMPLES, msg=label)
            self.assertEqual(report.n, 0, msg=label)
            self.assertLessEqual(report.C, PROBE_LARGE_FACTORS[-1] * report.form_scale, msg=label)
            self.assertGreaterEqual(report.min_rayleigh, -PROBE_TOLERANCE * report.form_scale, msg=label)
            self.assertEqual(report.to_record()['variant'], 'weighted')

    def test_cutoff_limit(self):
        """
        chi_n at the limit vanishes on the outer half of the f range, one step further it does not
        """
        f = self.geom.f
        outer = f >= 0.5 * f.max()
        limit = cutoff_limit(self.geom)
        self.assertEqual(limit, 1)
        self.assertTrue(np.all(smooth_cutoff(f[outer] / 2.0 ** limit, self.geom.cutoff) == 0))
        self.assertTrue(np.any(smooth_cutoff(f[outer] / 2.0 ** (limit + 1), self.geom.cutoff) > 0))

    def test_cutoff_beyond_limit(self):
        """
        A cutoff reaching the outer half of the grid, or a grid with no room for one, is refused
        """
        theta = theta_weight(self.geom, 1, 0.5)
        with self.assertRaises(ValueError):
            positivity_probe(1.0 + 0.1j, self.spec, self.geom, theta, n_cut=cutoff_limit(self.geom) + 1,
                             H=self.H, A=self.A, n_samples=4)

        short = build_geometry(make_grid('line-1d', 1.0 / 16, 4.0), self.spec.epsilon, self.spec.rho)
        self.assertEqual(cutoff_limit(short), -1)
        with self.assertRaises(NotSatisfiable):
            positivity_probe(1.0 + 0.1j, self.spec, short, theta_weight(short, 0, 0.5), n_samples=4)

    def test_broken_form(self):
        """
        A form lowered by 1000 |psi|^2 admits no constants
        """
        search = operators._search_constants

        def lowered(parts, norms, floor, n_values, scale):
            F0, P, X = parts
            return search((F0 - 1000.0 * norms, P, X), norms, floor, n_values, scale)

        theta = theta_weight(self.geom, 1, 0.5)
        with mock.patch('operators._search_constants', side_effect=lowered):
            with self.assertRaises(NoAdmissibleConstants) as context:
                positivity_probe(1.0 + 0.1j, self.spec, self.geom, theta, H=self.H, A=self.A, n_samples=20,
                                 seed=2)
        self.assertLess(context.exception.best_quotient, 0.0)

    def test_weighted_needs_phases(self):
        """
        The weighted search measures (A - a) and cannot run without a
        """
        theta = theta_weight(self.geom, 1, 0.5)
        with self.assertRaises(ValueError):
            positivity_probe(1.0 + 0.1j, self.spec, self.geom, theta, variant='weighted', H=self.H, A=self.A,
                             n_samples=4)
        with self.assertRaises(ValueError):
            positivity_probe(1.0 + 0.1j, self.spec, self.geom, theta, variant='sideways', H=self.H, A=self.A,
                             n_samples=4)


if __name__ == '__main__':
    unittest.main()
