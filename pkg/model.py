"""
Problem instances and their discretization.

A :class:`PotentialSpec` fixes the exponent, the dimension and the
perturbation q = q1 + q2, given as expressions over the regularized radius
``r`` and the flow coordinate ``f``. :func:`build_hamiltonian` turns it into
a sparse second order finite difference matrix on a :class:`Grid`.
"""
from dataclasses import dataclass, field

import logging
import math

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
import sympy

from exceptions import ConfigError, NotSatisfiable, UnstableGrid
from geometry import flow_coordinate, regularized_radius

logger = logging.getLogger(__name__)

GRID_MODES = ['line-1d', 'radial']
GRID_BOUNDARIES = ['dirichlet', 'radiation']

# spacing^2 * max|V| above this leaves fewer than about pi nodes per local wavelength.
STABILITY_THRESHOLD = 2.0

# Absorbing layer W = W0 s^2; W0 * L_f / (3 sqrt 2) is the attenuation exponent across the layer.
ABSORBER_ATTENUATION = 25.0

EXPRESSION_SYMBOLS = {
    'r': sympy.Symbol('r', positive=True),
    'f': sympy.Symbol('f', positive=True),
}
EXPRESSION_FUNCTIONS = {
    'exp': sympy.exp,
    'log': sympy.log,
    'sin': sympy.sin,
    'cos': sympy.cos,
    'sqrt': sympy.sqrt,
}


@dataclass(frozen=True)
class Grid:
    """
    Uniform grid. In ``line-1d`` mode the nodes are the interior points of
    ``[-R_max, R_max]``, in ``radial`` mode those of ``(0, R_max)``; the
    Dirichlet values at the excluded end points are zero.
    """
    mode: str
    spacing: float
    R_max: float
    n_points: int
    boundary: str = 'dirichlet'

    @property
    def nodes(self):
        if self.mode == 'radial':
            return self.spacing * np.arange(1, self.n_points + 1)
        return -self.R_max + self.spacing * np.arange(1, self.n_points + 1)

    def inner(self, u, v):
        """Quadrature of conj(u) v."""
        return complex(self.spacing * np.vdot(u, v))

    def norm(self, v):
        return float(math.sqrt(self.spacing) * np.linalg.norm(v))


def make_grid(mode='line-1d', spacing=1.0 / 64, R_max=64.0, boundary='dirichlet'):
    if mode not in GRID_MODES:
        raise ConfigError("unknown mode %s, expected one of %s" % (mode, GRID_MODES), 'grid.mode')
    if boundary not in GRID_BOUNDARIES:
        raise ConfigError("unknown boundary %s, expected one of %s" % (boundary, GRID_BOUNDARIES), 'grid.boundary')
    if not spacing > 0:
        raise ConfigError("spacing must be positive, got %s" % spacing, 'grid.spacing')
    cells = int(round(R_max / spacing))
    if cells < 4:
        raise ConfigError("R_max=%s holds fewer than four cells of size %s" % (R_max, spacing), 'grid.R_max')

    R_max = cells * spacing
    n_points = cells - 1 if mode == 'radial' else 2 * cells - 1
    return Grid(mode=mode, spacing=float(spacing), R_max=float(R_max), n_points=n_points, boundary=boundary)


def _parse_expression(text, key_path):
    try:
        expr = sympy.sympify(str(text), locals=dict(EXPRESSION_SYMBOLS, **EXPRESSION_FUNCTIONS))
    except (sympy.SympifyError, SyntaxError, TypeError) as err:
        raise ConfigError("cannot parse %r: %s" % (text, err), key_path)

    allowed_symbols = set(EXPRESSION_SYMBOLS.values())
    unknown = [str(s) for s in expr.free_symbols if s not in allowed_symbols]
    if unknown:
        raise ConfigError("unknown names %s in %r, only r and f are allowed" % (sorted(unknown), text), key_path)

    allowed_functions = set(EXPRESSION_FUNCTIONS.values())
    for call in expr.atoms(sympy.Function):
        if call.func not in allowed_functions:
            raise ConfigError("function %s is not allowed in %r" % (call.func, text), key_path)
    if expr.has(sympy.I):
        raise ConfigError("%r is not real valued" % text, key_path)
    return expr


@dataclass(frozen=True)
class PotentialSpec:
    """
    The repulsive problem with exponent ``epsilon`` and perturbation
    ``q1 + q2``. Expressions are compiled once, at construction.
    """
    epsilon: float
    dim: int = 1
    angular_sector: int = 0
    q1: str = '0'
    q2: str = '0'
    rho: float = 1.0
    tau: float = None
    _q1: object = field(default=None, init=False, repr=False, compare=False)
    _q2: object = field(default=None, init=False, repr=False, compare=False)
    _dq1: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        r, f = EXPRESSION_SYMBOLS['r'], EXPRESSION_SYMBOLS['f']
        q1 = _parse_expression(self.q1, 'model.q1')
        q2 = _parse_expression(self.q2, 'model.q2')
        # total r-derivative, df/dr = r^(-eps/2)
        dq1 = sympy.diff(q1, r) + sympy.diff(q1, f) * r ** sympy.Float(-self.epsilon / 2)
        object.__setattr__(self, '_q1', sympy.lambdify((r, f), q1, 'numpy'))
        object.__setattr__(self, '_q2', sympy.lambdify((r, f), q2, 'numpy'))
        object.__setattr__(self, '_dq1', sympy.lambdify((r, f), dq1, 'numpy'))

    def q1_values(self, r, f):
        return _as_field(self._q1(r, f), r)

    def q2_values(self, r, f):
        return _as_field(self._q2(r, f), r)

    def dq1_dr(self, r, f):
        return _as_field(self._dq1(r, f), r)


def _as_field(values, like):
    return np.broadcast_to(np.asarray(values, dtype=float), np.shape(like)).copy()


def make_potential(epsilon=1.0, dim=1, sector=0, q1='0', q2='0', rho=1.0, tau=None):
    """
    Validated constructor for :class:`PotentialSpec`.

    :raises ConfigError: with the ``model.*`` key of the offending value
    """
    if not 0 < epsilon <= 2:
        raise ConfigError("epsilon must lie in (0, 2], got %s" % epsilon, 'model.epsilon')
    if int(dim) != dim or dim < 1:
        raise ConfigError("dim must be a positive integer, got %s" % dim, 'model.dim')
    if int(sector) != sector or sector < 0:
        raise ConfigError("sector must be a non-negative integer, got %s" % sector, 'model.sector')
    if not rho > 0:
        raise ConfigError("rho must be positive, got %s" % rho, 'model.rho')
    if tau is not None and not tau > 0:
        raise ConfigError("tau must be positive, got %s" % tau, 'model.tau')
    return PotentialSpec(epsilon=float(epsilon), dim=int(dim), angular_sector=int(sector),
                         q1=str(q1), q2=str(q2), rho=float(rho),
                         tau=None if tau is None else float(tau))


@dataclass(frozen=True)
class DiscreteOperator:
    matrix: object
    grid: Grid
    symmetry: str = 'hermitian'
    label: str = 'H'

    def dot(self, v):
        return self.matrix @ v

    @property
    def shape(self):
        return self.matrix.shape

    def shifted(self, z):
        """H - z as a CSC matrix ready for factorization."""
        return (self.matrix - z * scipy.sparse.identity(self.shape[0], dtype=complex, format='csr')).tocsc()

    def symmetry_defect(self):
        return float(abs(self.matrix - self.matrix.T).max()) if self.matrix.nnz else 0.0


def potential_terms(spec, grid, nodes=None):
    """
    Real potential pieces on the grid nodes (or at ``nodes`` when given):
    the repulsive part, q1, q2 and, in radial mode, the centrifugal term of
    the sector reduction.
    """
    t = grid.nodes if nodes is None else np.asarray(nodes, dtype=float)
    abs_x = np.abs(t)
    r = regularized_radius(abs_x)[0]
    f = flow_coordinate(r, spec.epsilon)
    terms = {
        'repulsive': -abs_x ** spec.epsilon,
        'q1': spec.q1_values(r, f),
        'q2': spec.q2_values(r, f),
        'centrifugal': np.zeros_like(t),
    }
    if grid.mode == 'radial':
        d, l = spec.dim, spec.angular_sector
        terms['centrifugal'] = ((d - 1) * (d - 3) / 4.0 + l * (l + d - 2)) / (2.0 * t ** 2)
    return terms


def potential_field(spec, grid):
    return sum(potential_terms(spec, grid).values())


def absorbing_layer(spec, grid, absorber):
    """
    W = W0 s^2 on the outer ``absorber`` fraction of the f range, where s
    runs from 0 to 1 across the layer. Zero when ``absorber`` is 0.
    """
    t = np.abs(grid.nodes)
    if absorber <= 0:
        return np.zeros_like(t)
    f = flow_coordinate(regularized_radius(t)[0], spec.epsilon)
    f_end = float(f.max()) + grid.spacing
    width = absorber * (f_end - 1.0)
    s = np.clip((f - (f_end - width)) / width, 0.0, None)
    return ABSORBER_ATTENUATION / width * s ** 2


def build_hamiltonian(spec, grid, absorber=0.0, sign='upper'):
    """
    Assemble H = -1/2 D2 + V with the three point Laplacian.

    :param PotentialSpec spec: problem instance
    :param Grid grid: discretization
    :param float absorber: fraction of the f range covered by a complex
        absorbing layer, 0 for a plain Dirichlet truncation
    :param str sign: ``upper`` subtracts ``iW`` (resolvents at lambda + i Gamma),
        ``lower`` adds it

    :raises UnstableGrid: if ``spacing^2 max|V|`` exceeds ``STABILITY_THRESHOLD``
    :rtype: DiscreteOperator
    """
    V = potential_field(spec, grid)
    stiffness = grid.spacing ** 2 * float(np.max(np.abs(V)))
    if stiffness > STABILITY_THRESHOLD:
        raise UnstableGrid("spacing^2 * max|V| = %.3f exceeds %.1f; refine the grid or reduce R_max"
                           % (stiffness, STABILITY_THRESHOLD))

    n = grid.n_points
    h2 = grid.spacing ** 2
    main = 1.0 / h2 + V.astype(complex)
    off = np.full(n - 1, -0.5 / h2, dtype=complex)

    symmetry = 'hermitian'
    if absorber > 0:
        W = absorbing_layer(spec, grid, absorber)
        main = main - (1j if sign == 'upper' else -1j) * W
        symmetry = 'non-hermitian'

    matrix = scipy.sparse.diags([off, main, off], [-1, 0, 1], format='csr', dtype=complex)
    logger.debug("assembled H on %d nodes (%s, absorber=%s)", n, grid.mode, absorber)
    return DiscreteOperator(matrix=matrix, grid=grid, symmetry=symmetry, label='H')


def apply_analytic(spec, grid, psi_fn, d2psi_fn):
    """Continuum action -1/2 psi'' + V psi sampled on the grid nodes."""
    t = grid.nodes
    return -0.5 * d2psi_fn(t) + potential_field(spec, grid) * psi_fn(t)


def truncated_eigenpairs(H, k=4, sigma=0.0):
    """The ``k`` eigenpairs of a Hermitian truncation closest to ``sigma``."""
    values, vectors = scipy.sparse.linalg.eigsh(H.matrix.real.tocsc(), k=k, sigma=sigma, which='LM')
    order = np.argsort(values)
    return values[order], vectors[:, order]


@dataclass
class ConditionReport:
    C_q1: float
    C_gradq1: float
    C_q2: float
    C_tau: float = None
    r_lambda_table: dict = field(default_factory=dict)
    passed: dict = field(default_factory=dict)

    def to_record(self):
        record = {'C_q1': self.C_q1, 'C_gradq1': self.C_gradq1, 'C_q2': self.C_q2, 'C_tau': self.C_tau}
        record.update({'passed_%s' % k: v for k, v in self.passed.items()})
        record.update({'r_lambda[%g]' % k: v for k, v in self.r_lambda_table.items()})
        return record


def _grid_max(values):
    values = np.abs(values)
    return float(np.max(values)) if values.size else 0.0


def audit_conditions(spec, geom, lambdas=None, interval=None):
    """
    Measure the smallest constants for the decay bounds of q1 and q2.

    :param lambdas: energies for the r_lambda table; defaults to the end
        points and midpoint of ``interval`` when that is given
    :rtype: ConditionReport
    """
    r, f, eps, rho = geom.r, geom.f, spec.epsilon, spec.rho
    q1 = spec.q1_values(r, f)
    q2 = spec.q2_values(r, f)
    dq1 = spec.dq1_dr(r, f)

    if eps < 2:
        q1_majorant = r ** eps * f ** -rho
    else:
        q1_majorant = r ** 2 * f ** (-1 - rho)
    flow_derivative = r ** (-eps / 2) * geom.grad_r ** 2 * dq1

    report = ConditionReport(
        C_q1=_grid_max(q1 / q1_majorant),
        C_gradq1=_grid_max(flow_derivative * f ** (1 + rho)),
        C_q2=_grid_max(q2 * f ** (1 + rho)),
    )
    if spec.tau is not None:
        transverse = geom.ell * geom.grad_r * r ** (-eps / 2) * dq1
        report.C_tau = max(_grid_max(flow_derivative * f ** (1 + spec.tau)),
                           _grid_max(transverse * f ** (1 + spec.tau)))

    for name in ('C_q1', 'C_gradq1', 'C_q2', 'C_tau'):
        value = getattr(report, name)
        if value is not None:
            report.passed[name] = bool(np.isfinite(value))

    if lambdas is None and interval is not None:
        lambdas = (interval[0], 0.5 * (interval[0] + interval[1]), interval[1])
    for lam in lambdas or ():
        report.r_lambda_table[float(lam)] = select_r_lambda(spec, lam, geom)
    return report


def select_r_lambda(spec, lam, geom):
    """
    Smallest grid radius r_lambda with lambda - q1 + r^eps > 1 for all r >= r_lambda.

    :raises NotSatisfiable: if the condition fails at the outermost node
    """
    outward = geom.x >= 0
    r = geom.r[outward]
    f = geom.f[outward]
    order = np.argsort(r, kind='stable')
    r, f = r[order], f[order]
    ok = lam - spec.q1_values(r, f) + r ** spec.epsilon > 1.0
    if not ok[-1]:
        raise NotSatisfiable("lambda=%s: lambda - q1 + r^eps <= 1 at the outermost radius %.3f" % (lam, r[-1]))
    failing = np.nonzero(~ok)[0]
    start = failing[-1] + 1 if failing.size else 0
    return float(r[start])


def epsilon_prime(epsilon):
    return epsilon / (1.0 - epsilon / 2.0) if epsilon < 2 else 2.0


def critical_exponent(spec):
    """beta_c = min{rho, eps', tau, 1 + eps/2}; tau is skipped when absent."""
    candidates = [spec.rho, epsilon_prime(spec.epsilon), 1.0 + spec.epsilon / 2.0]
    if spec.tau is not None:
        candidates.append(spec.tau)
    else:
        logger.debug("tau not set, critical exponent computed without it")
    return float(min(candidates))
