import unittest

import numpy as np

from exceptions import ConfigError, NotSatisfiable, UnstableGrid
from geometry import build_geometry
from model import absorbing_layer, apply_analytic, audit_conditions, build_hamiltonian, critical_exponent, \
                  epsilon_prime, make_grid, make_potential, potential_field, potential_terms, select_r_lambda, \
                  truncated_eigenpairs


class TestGrid(unittest.TestCase):

    def test_line_grid(self):
        """
        Interior nodes of [-R_max, R_max], symmetric about the origin
        """
        grid = make_grid('line-1d', 0.25, 4.0)
        self.assertEqual(grid.n_points, 31)
        self.assertTrue(np.allclose(grid.nodes, -grid.nodes[::-1]))
        self.assertAlmostEqual(grid.nodes[0], -3.75)

    def test_radial_grid(self):
        """
        Interior nodes of (0, R_max)
        """
        grid = make_grid('radial', 0.25, 4.0)
        self.assertEqual(grid.n_points, 15)
        self.assertAlmostEqual(grid.nodes[0], 0.25)
        self.assertAlmostEqual(grid.nodes[-1], 3.75)

    def test_bad_grid(self):
        """
        Invalid grid values name their key
        """
        for kwargs, key in (({'mode': 'cube'}, 'grid.mode'), ({'boundary': 'periodic'}, 'grid.boundary'),
                            ({'spacing': -1.0}, 'grid.spacing'), ({'R_max': 0.01}, 'grid.R_max')):
            with self.assertRaises(ConfigError) as context:
                make_grid(**kwargs)
            self.assertEqual(context.exception.key_path, key)

    def test_quadrature(self):
        """
        The grid norm is the spacing-weighted Euclidean norm
        """
        grid = make_grid('line-1d', 0.25, 4.0)
        ones = np.ones(grid.n_points)
        self.assertAlmostEqual(grid.norm(ones) ** 2, 0.25 * grid.n_points)
        self.assertAlmostEqual(grid.inner(ones, 1j * ones), 0.25j * grid.n_points)


class TestPotential(unittest.TestCase):

    def test_bad_values(self):
        """
        Out of range model values name their key
        """
        for kwargs, key in (({'epsilon': 3.0}, 'model.epsilon'), ({'epsilon': 0.0}, 'model.epsilon'),
                            ({'dim': 0}, 'model.dim'), ({'sector': -1}, 'model.sector'),
                            ({'rho': 0.0}, 'model.rho'), ({'tau': -1.0}, 'model.tau')):
            with self.assertRaises(ConfigError) as context:
                make_potential(**kwargs)
            self.assertEqual(context.exception.key_path, key)

    def test_expressions(self):
        """
        Only r, f and the whitelisted functions are accepted
        """
        for text in ('x * r', 'gamma(r)', 'I * r', '(('):
            with self.assertRaises(ConfigError) as context:
                make_potential(q1=text)
            self.assertEqual(context.exception.key_path, 'model.q1')
        spec = make_potential(q1='0.3*r*f**-1', q2='0.5*f**-2*sin(r)')
        r = np.array([1.0, 4.0])
        f = np.array([1.0, 3.0])
        self.assertTrue(np.allclose(spec.q1_values(r, f), [0.3, 0.4]))
        self.assertTrue(np.allclose(spec.q2_values(r, f), [0.5 * np.sin(1.0), 0.5 / 9.0 * np.sin(4.0)]))

    def test_constant_expression(self):
        """
        A constant perturbation is broadcast to the grid shape
        """
        spec = make_potential(q1='2')
        self.assertEqual(spec.q1_values(np.ones(5), np.ones(5)).shape, (5,))

    def test_total_derivative(self):
        """
        dq1/dr includes the f dependence through df/dr = r^(-eps/2)
        """
        spec = make_potential(epsilon=1.0, q1='f')
        r = np.array([4.0, 9.0])
        self.assertTrue(np.allclose(spec.dq1_dr(r, 2 * np.sqrt(r) - 1), r ** -0.5))

    def test_centrifugal(self):
        """
        Radial mode adds the sector term of the reduction
        """
        spec = make_potential(dim=3, sector=1)
        grid = make_grid('radial', 0.25, 4.0)
        terms = potential_terms(spec, grid)
        self.assertTrue(np.allclose(terms['centrifugal'], 1.0 / grid.nodes ** 2))
        line = potential_terms(spec, make_grid('line-1d', 0.25, 4.0))
        self.assertTrue(np.all(line['centrifugal'] == 0))


class TestHamiltonian(unittest.TestCase):

    def setUp(self):
        self.spec = make_potential(epsilon=1.0, q1='0.3*r*f**-1', q2='0.5*f**-2*sin(r)')
        self.grid = make_grid('line-1d', 1.0 / 32, 16.0)

    def test_symmetric(self):
        """
        Without absorber H is real symmetric
        """
        H = build_hamiltonian(self.spec, self.grid)
        self.assertEqual(H.symmetry, 'hermitian')
        self.assertEqual(H.symmetry_defect(), 0.0)
        self.assertEqual(float(np.max(np.abs(H.matrix.imag))), 0.0)

    def test_consistency(self):
        """
        H applied to a Gaussian matches -1/2 psi'' + V psi
        """
        H = build_hamiltonian(self.spec, self.grid)
        x = self.grid.nodes
        discrete = H.dot(np.exp(-x ** 2))
        exact = apply_analytic(self.spec, self.grid, lambda t: np.exp(-t ** 2),
                               lambda t: (4 * t ** 2 - 2) * np.exp(-t ** 2))
        self.assertLess(np.max(np.abs(discrete - exact)), 5e-3)

    def test_unstable(self):
        """
        A spacing that leaves |V| unresolved raises UnstableGrid
        """
        with self.assertRaises(UnstableGrid):
            build_hamiltonian(make_potential(epsilon=2.0), make_grid('line-1d', 0.25, 512.0))

    def test_absorber(self):
        """
        The absorbing layer lives on the outer f range with the sign of the resolvent side
        """
        W = absorbing_layer(self.spec, self.grid, 0.25)
        self.assertTrue(np.all(W >= 0))
        self.assertEqual(W[self.grid.n_points // 2], 0.0)
        self.assertGreater(W[0], 0.0)
        upper = build_hamiltonian(self.spec, self.grid, absorber=0.25)
        lower = build_hamiltonian(self.spec, self.grid, absorber=0.25, sign='lower')
        self.assertEqual(upper.symmetry, 'non-hermitian')
        self.assertTrue(np.allclose(upper.matrix.diagonal().imag, -W))
        self.assertTrue(np.allclose(lower.matrix.diagonal().imag, W))
        self.assertTrue(np.all(absorbing_layer(self.spec, self.grid, 0.0) == 0))

    def test_potential_sum(self):
        """
        potential_field is the sum of its terms and carries -|x|^eps
        """
        terms = potential_terms(self.spec, self.grid)
        self.assertTrue(np.allclose(potential_field(self.spec, self.grid), sum(terms.values())))
        self.assertTrue(np.allclose(terms['repulsive'], -np.abs(self.grid.nodes)))

    def test_eigenpairs(self):
        """
        Dirichlet eigenpairs of the truncation are normalized eigenvectors
        """
        grid = make_grid('line-1d', 1.0 / 16, 4.0)
        H = build_hamiltonian(make_potential(epsilon=1.0), grid)
        values, vectors = truncated_eigenpairs(H, k=3)
        for k in range(3):
            residual = H.matrix.real @ vectors[:, k] - values[k] * vectors[:, k]
            self.assertLess(np.linalg.norm(residual), 1e-8)
        self.assertTrue(np.all(np.diff(values) > 0))


class TestConditions(unittest.TestCase):

    def setUp(self):
        self.grid = make_grid('line-1d', 1.0 / 32, 32.0)

    def test_audit(self):
        """
        The reference perturbation has finite decay constants
        """
        spec = make_potential(epsilon=1.0, q1='0.3*r*f**-1', q2='0.5*f**-2*sin(r)', tau=1.0)
        geom = build_geometry(self.grid, spec.epsilon, spec.rho)
        report = audit_conditions(spec, geom, interval=(0.5, 2.0))
        self.assertTrue(all(report.passed.values()))
        self.assertEqual(sorted(report.passed), ['C_gradq1', 'C_q1', 'C_q2', 'C_tau'])
        self.assertEqual(sorted(report.r_lambda_table), [0.5, 1.25, 2.0])
        self.assertLessEqual(report.C_q1, 0.3 + 1e-12)
        record = report.to_record()
        self.assertIn('r_lambda[0.5]', record)

    def test_r_lambda(self):
        """
        r_lambda is the first radius after which lambda - q1 + r^eps stays above 1
        """
        geom = build_geometry(self.grid, 1.0, 1.0)
        self.assertEqual(select_r_lambda(make_potential(epsilon=1.0), 1.0, geom), 1.0)
        r_lambda = select_r_lambda(make_potential(epsilon=1.0, q1='2'), 0.5, geom)
        self.assertTrue(2.5 < r_lambda <= 2.5 + self.grid.spacing + 1e-12, msg="r_lambda={}".format(r_lambda))

    def test_not_satisfiable(self):
        """
        A perturbation that beats r^eps leaves no r_lambda
        """
        geom = build_geometry(self.grid, 1.0, 1.0)
        with self.assertRaises(NotSatisfiable):
            select_r_lambda(make_potential(epsilon=1.0, q1='2*r'), 1.0, geom)

    def test_critical_exponent(self):
        """
        beta_c = min{rho, eps', tau, 1 + eps/2}
        """
        self.assertEqual(critical_exponent(make_potential(epsilon=1.0, rho=1.0)), 1.0)
        self.assertEqual(critical_exponent(make_potential(epsilon=2.0, rho=3.0)), 2.0)
        self.assertEqual(critical_exponent(make_potential(epsilon=1.0, rho=3.0, tau=0.5)), 0.5)
        self.assertEqual(epsilon_prime(1.0), 2.0)
        self.assertEqual(epsilon_prime(2.0), 2.0)


if __name__ == '__main__':
    unittest.main()
