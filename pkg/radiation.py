"""
Radiation condition residuals, the outgoing boundary row solve and the
generalized eigenfunction probes.

``(A - a) phi`` small in the weighted B* sense singles out the outgoing
solution of ``(H - lambda) phi = psi``. This module measures it for
resolvent outputs, solves the Gamma = 0 problem directly with an outgoing
boundary row, cross-checks the two routes, and integrates the radial
equation to look at solutions of ``(H - lambda) phi = 0``.
"""
from dataclasses import asdict, dataclass, field

import logging
import math

import numpy as np
import scipy.integrate
import scipy.interpolate
import scipy.sparse
import scipy.sparse.linalg

from exceptions import IllConditioned, StiffRegion, UnstableGrid
from geometry import cutoff_jet
from model import build_hamiltonian, critical_exponent, potential_terms, select_r_lambda
from operators import BOUNDARY_MARGIN, build_conjugate_A, build_phases, divergence_form
from resolvent import (
    gamma_schedule, inner_region, inner_weighted_norm, lap_extrapolate, potential_field_for, solve,
)
from spaces import bstar0_trend, besov_norm, besov_star_norm, dyadic_decomposition

logger = logging.getLogger(__name__)

BOUNDARY_SCHEMES = ['discrete', 'one-sided']

# Condition estimate above which the boundary rows are rejected.
CONDITION_LIMIT = 1e14

INTERIOR_TOLERANCE = 1e-8
CROSS_CHECK_TOLERANCE = 1e-2

# Rings whose share of the source mass is below this count as source free.
SOURCE_FREE_FRACTION = 1e-8

# Non-vanishing tail: every one of the last rings above this share of their mean.
TAIL_FLOOR = 0.5
TAIL_RINGS = 3

ODE_RTOL = 1e-9
ODE_ATOL = 1e-11

RELLICH_ANGLES = 32


def _trim_ends(values, margin=BOUNDARY_MARGIN):
    """Zero the outermost nodes where the central stencils see the Dirichlet ends."""
    values = np.array(values, copy=True)
    values[:margin] = 0
    values[-margin:] = 0
    return values


def far_rings(decomp, psi=None, f_limit=None):
    """
    Complete rings that carry no source mass and end below ``f_limit``
    (the start of an absorbing layer, say).
    """
    masses = decomp.ring_masses(psi) if psi is not None else np.zeros(len(decomp.R))
    top = float(np.max(masses)) if masses.size else 0.0
    rings = []
    for nu, R_nu in enumerate(decomp.R):
        if not decomp.complete[nu]:
            continue
        if f_limit is not None and 2.0 * R_nu > f_limit:
            continue
        if top > 0 and masses[nu] > SOURCE_FREE_FRACTION * top:
            continue
        rings.append(nu)
    return rings


@dataclass
class RadiationReport:
    beta: float
    out_residual: float
    in_residual: float
    weighted_h_form: float
    rhs_norm: float
    tail_of_out_residual: list
    tail_of_in_residual: list = field(default_factory=list)
    far_ratio: float = float('nan')
    inside_range: bool = True

    @property
    def out_ratio(self):
        return self.out_residual / self.rhs_norm if self.rhs_norm else float('nan')

    @property
    def in_ratio(self):
        return self.in_residual / self.rhs_norm if self.rhs_norm else float('nan')

    def to_record(self):
        record = asdict(self)
        record.pop('tail_of_out_residual')
        record.pop('tail_of_in_residual')
        record.update({'out_ratio': self.out_ratio, 'in_ratio': self.in_ratio})
        return record


def radiation_residuals(phi, z, beta, phases, geom, psi=None, decomp=None, A=None, beta_c=None, f_limit=None):
    """
    ``||f^beta (A -+ a) phi||_B*``, ``<p f^2beta h p>_phi^1/2`` and ``||f^beta psi||_B``.

    :param phi: resolvent output at ``z`` or a boundary value at Gamma = 0
    :param phases: :class:`operators.PhaseField` built at ``z``
    :param psi: source, for the right hand side norm and the far rings
    :param beta_c: critical exponent; betas at or beyond it are flagged
    :param f_limit: far rings must end below this f (absorbing layer start)
    :rtype: RadiationReport
    """
    if decomp is None:
        decomp = dyadic_decomposition(geom)
    if A is None:
        A = build_conjugate_A(geom)
    grid = geom.grid
    weight = geom.f ** beta
    phi = np.asarray(phi, dtype=complex)

    A_phi = A.dot(phi)
    out_field = _trim_ends(weight * (A_phi - phases.a * phi))
    in_field = _trim_ends(weight * (A_phi + phases.a * phi))
    h_form = grid.inner(phi, divergence_form(geom.f ** (2 * beta) * geom.h, grid) @ phi).real

    inside = beta_c is None or beta < beta_c
    if not inside:
        logger.warning("beta=%s lies outside [0, %s), residual bound not expected", beta, beta_c)

    out_tails = decomp.tails(out_field)
    in_tails = decomp.tails(in_field)
    ratios = [out_tails[nu] / in_tails[nu] for nu in far_rings(decomp, psi, f_limit) if in_tails[nu] > 0]
    return RadiationReport(
        beta=float(beta),
        out_residual=besov_star_norm(out_field, decomp),
        in_residual=besov_star_norm(in_field, decomp),
        weighted_h_form=math.sqrt(max(h_form, 0.0)),
        rhs_norm=besov_norm(weight * psi, decomp) if psi is not None else float('nan'),
        tail_of_out_residual=[float(v) for v in out_tails],
        tail_of_in_residual=[float(v) for v in in_tails],
        far_ratio=float(max(ratios)) if ratios else float('nan'),
        inside_range=inside,
    )


def beta_schedule(beta_c):
    """Four exponents inside [0, beta_c) and one beyond it."""
    return [0.0, 0.25 * beta_c, 0.5 * beta_c, 0.75 * beta_c, 1.5 * beta_c]


@dataclass
class BetaSweep:
    rows: list
    verdicts: dict

    @property
    def passed(self):
        return all(v['uniformly_bounded'] for v in self.verdicts.values() if v['inside_range'])


def beta_sweep(spec, geom, lam, psi, gammas=None, betas=None, absorber=0.0):
    """
    Radiation residual ratios over a Gamma sweep for each beta.

    Per beta the verdict records whether the out ratios at the two smallest
    Gamma agree within a factor 2 and how much the in residual grew from the
    largest to the smallest Gamma.

    :rtype: BetaSweep
    """
    gammas = sorted(gammas or gamma_schedule(), reverse=True)
    beta_c = critical_exponent(spec)
    betas = betas if betas is not None else beta_schedule(beta_c)
    grid = geom.grid
    decomp = dyadic_decomposition(geom)
    A = build_conjugate_A(geom)
    H = build_hamiltonian(spec, grid, absorber=absorber)
    r_lambda = select_r_lambda(spec, lam, geom)
    f_limit = (1.0 - absorber) * float(geom.f.max()) if absorber > 0 else None

    rows = []
    for gamma in gammas:
        z = complex(lam, gamma)
        phi = solve(H, z, psi)
        phases = build_phases(z, spec, geom, r_lambda)
        for beta in betas:
            report = radiation_residuals(phi, z, beta, phases, geom, psi, decomp, A, beta_c, f_limit)
            record = report.to_record()
            record.update({'lam': float(lam), 'gamma': float(gamma)})
            rows.append(record)
        logger.info("beta sweep: Gamma=%s done", gamma)

    verdicts = {}
    for beta in betas:
        series = [row for row in rows if row['beta'] == float(beta)]
        out = [row['out_ratio'] for row in series]
        inner = [row['in_residual'] for row in series]
        last, before = out[-1], out[-2] if len(out) > 1 else out[-1]
        verdicts[float(beta)] = {
            'inside_range': bool(beta < beta_c),
            'uniformly_bounded': bool(max(last, before) <= 2.0 * min(last, before)),
            'in_growth': inner[-1] / inner[0] if inner[0] > 0 else float('nan'),
        }
    return BetaSweep(rows=rows, verdicts=verdicts)


def _boundary_nodes(grid):
    """``(node, inward step)`` pairs where an outgoing row replaces the equation."""
    nodes = [(grid.n_points - 1, -1)]
    if grid.mode == 'line-1d':
        nodes.append((0, 1))
    return nodes


def _lattice_angle(h, lam, V):
    cosine = 1.0 - h ** 2 * (lam - V)
    if np.any(np.abs(cosine) > 1):
        raise UnstableGrid("no propagating lattice wave at the boundary: cos(theta) = %s" % cosine)
    return np.arccos(cosine)


def _one_sided_row(node, step, h, g, lap_f, a):
    """Coefficients of ``-i g D phi - (i/2) lap_f phi - a phi`` at ``node``."""
    # second order one sided difference towards the interior
    weights = np.array([-1.5, 2.0, -0.5]) * step / h
    columns = [node, node + step, node + 2 * step]
    values = -1j * g[node] * weights
    values[0] += -0.5j * lap_f[node] - a[node]
    return columns, values


def _lattice_row(node, step, h, lam, V, sign):
    """``phi_N - rho phi_(N-1)`` for the outgoing discrete WKB wave."""
    inward = node + step
    theta = _lattice_angle(h, lam, np.array([V[node], V[inward]]))
    rho = math.sqrt(math.sin(theta[1]) / math.sin(theta[0])) * np.exp(0.5j * (theta[0] + theta[1]))
    if sign == 'lower':
        rho = np.conj(rho)
    return [node, inward], np.array([1.0, -rho], dtype=complex)


def boundary_system(H, lam, phases, geom, scheme='discrete'):
    """``H - lambda`` with the boundary equations swapped for outgoing rows."""
    if scheme not in BOUNDARY_SCHEMES:
        raise ValueError("Unknown boundary scheme %s, expected one of %s" % (scheme, BOUNDARY_SCHEMES))
    if H.symmetry != 'hermitian':
        raise ValueError("the outgoing row solve expects H without an absorbing layer")
    grid = geom.grid
    h = grid.spacing
    V = potential_field_for(H, geom).real
    system = H.shifted(lam).tolil()
    for node, step in _boundary_nodes(grid):
        if scheme == 'one-sided':
            columns, values = _one_sided_row(node, step, h, geom.grad_f, geom.lap_f, phases.a)
        else:
            columns, values = _lattice_row(node, step, h, lam, V, phases.sign)
        system.rows[node] = []
        system.data[node] = []
        for column, value in zip(columns, values):
            system[node, column] = value
    return system.tocsc()


def condition_estimate(matrix, lu):
    """1-norm condition number estimate from the matrix and its factorization."""
    n = matrix.shape[0]
    inverse = scipy.sparse.linalg.LinearOperator(
        (n, n), matvec=lu.solve, rmatvec=lambda x: lu.solve(x, trans='H'), dtype=complex)
    return float(scipy.sparse.linalg.onenormest(matrix) * scipy.sparse.linalg.onenormest(inverse))


def sommerfeld_solve(H, lam, psi, phases, geom, scheme='discrete'):
    """
    Solve ``(H - lambda) phi = psi`` at Gamma = 0 with outgoing boundary rows.

    The interior rows are those of ``H - lambda``; the end nodes (both ends
    in line mode, the outer one in radial mode) carry either the discrete
    outgoing lattice wave or ``(A - a) phi = 0`` with one sided differences.

    :raises IllConditioned: if the condition estimate exceeds ``CONDITION_LIMIT``
    """
    system = boundary_system(H, lam, phases, geom, scheme)
    rhs = np.asarray(psi, dtype=complex).copy()
    for node, _ in _boundary_nodes(geom.grid):
        rhs[node] = 0
    try:
        lu = scipy.sparse.linalg.splu(system)
    except RuntimeError as err:
        raise IllConditioned("outgoing boundary system is singular: %s" % err, float('inf'))
    condition = condition_estimate(system, lu)
    if condition > CONDITION_LIMIT:
        raise IllConditioned("outgoing boundary rows degrade the system (condition %.3e)" % condition, condition)

    phi = lu.solve(rhs)
    interior = geom.f <= 0.8 * float(geom.f.max())
    residual = np.linalg.norm(((H.dot(phi) - lam * phi) - psi)[interior])
    if residual > INTERIOR_TOLERANCE * np.linalg.norm(psi):
        logger.warning("outgoing solve left interior residual %.3e", residual / np.linalg.norm(psi))
    logger.info("outgoing solve at lambda=%s (%s rows), condition %.3e", lam, scheme, condition)
    return phi


def boundary_residual(phi, phases, geom):
    """
    ``|(A - a) phi|`` at the outer end node with the one sided stencil,
    relative to ``|a phi|`` there.
    """
    node, step = _boundary_nodes(geom.grid)[0]
    columns, values = _one_sided_row(node, step, geom.spacing, geom.grad_f, geom.lap_f, phases.a)
    value = np.dot(values, phi[columns])
    return float(abs(value) / abs(phases.a[node] * phi[node]))


@dataclass
class SommerfeldVerdict:
    beta: float
    equation_residual: float
    equation_passed: bool
    weighted_Bstar: float
    tail_ratios: list
    decay_passed: bool

    @property
    def passed(self):
        return self.equation_passed and self.decay_passed

    def to_record(self):
        record = asdict(self)
        record['passed'] = self.passed
        return record


def sommerfeld_verify(phi, lam, psi, beta, spec, geom, H=None, phases=None, tolerance=1e-6):
    """
    Check a candidate boundary value against the two conditions that
    characterize ``R(lambda + i0) psi``:

    1. ``(H - lambda) phi = psi`` in ``H_-1`` on the inner region,
    2. ``f^-beta phi`` in B* and ``f^beta (A - a) phi`` with a vanishing
       tail, measured against the tail of ``f^beta a phi``.

    :rtype: SommerfeldVerdict
    """
    if H is None:
        H = build_hamiltonian(spec, geom.grid)
    if phases is None:
        phases = build_phases(complex(lam), spec, geom, select_r_lambda(spec, lam, geom))
    decomp = dyadic_decomposition(geom)
    phi = np.asarray(phi, dtype=complex)

    scale = inner_weighted_norm(geom, psi)
    equation_residual = inner_weighted_norm(geom, H.dot(phi) - lam * phi - psi) / scale

    weight = geom.f ** beta
    out_tails = decomp.tails(_trim_ends(weight * (build_conjugate_A(geom).dot(phi) - phases.a * phi)))
    reference = decomp.tails(_trim_ends(weight * phases.a * phi))
    resolved = [nu for nu, ok in enumerate(decomp.complete) if ok][-TAIL_RINGS:]
    weighted = besov_star_norm(geom.f ** -beta * phi, decomp)

    verdict = SommerfeldVerdict(
        beta=float(beta),
        equation_residual=float(equation_residual),
        equation_passed=bool(equation_residual <= tolerance),
        weighted_Bstar=weighted,
        tail_ratios=[float(out_tails[nu] / reference[nu]) if reference[nu] > 0 else float('nan') for nu in resolved],
        decay_passed=bool(np.isfinite(weighted) and bstar0_trend(out_tails, decomp.complete, reference)),
    )
    logger.debug("outgoing verdict: equation %.3e, tail ratios %s", equation_residual, verdict.tail_ratios)
    return verdict


def virial_quantity(phi, phases, geom, nu):
    """
    ``<(Re a) d/df chibar(f / R_nu)>_phi`` with ``chibar = 1 - chi``; never negative.
    """
    R = 2.0 ** nu
    slope = -cutoff_jet(geom.f / R, geom.cutoff)[1] / R
    return float(geom.grid.inner(phi, np.real(phases.a) * slope * phi).real)


@dataclass
class CrossCheck:
    lam: float
    relative_difference: float
    limit_error: float
    virial_solution: float
    virial_difference: float
    phi_outgoing: np.ndarray = field(repr=False)
    phi_limit: np.ndarray = field(repr=False)

    @property
    def passed(self):
        return self.relative_difference < CROSS_CHECK_TOLERANCE

    def to_record(self):
        record = {k: v for k, v in asdict(self).items() if not k.startswith('phi_')}
        record['passed'] = self.passed
        return record


def sommerfeld_cross_check(spec, geom, lam, psi, absorber=0.25, gammas=None, scheme='discrete', nu=None):
    """
    Compare the outgoing row solve with the extrapolated ``R(lambda + i0) psi``
    on the inner region, relative L2.

    The virial quantity is evaluated on a ring near half the domain for the
    solution and for the difference of the two computations.

    :rtype: CrossCheck
    """
    grid = geom.grid
    H = build_hamiltonian(spec, grid)
    phases = build_phases(complex(lam), spec, geom, select_r_lambda(spec, lam, geom))
    phi_outgoing = sommerfeld_solve(H, lam, psi, phases, geom, scheme)
    limit = lap_extrapolate(spec, grid, lam, psi, gammas, absorber=absorber, geom=geom)

    inner = inner_region(geom)
    difference = np.linalg.norm((phi_outgoing - limit.phi)[inner]) / np.linalg.norm(phi_outgoing[inner])
    nu = nu if nu is not None else max(int(math.floor(math.log2(0.25 * float(geom.f.max())))), 0)
    check = CrossCheck(
        lam=float(lam),
        relative_difference=float(difference),
        limit_error=limit.error,
        virial_solution=virial_quantity(phi_outgoing, phases, geom, nu),
        virial_difference=virial_quantity(phi_outgoing - limit.phi, phases, geom, nu),
        phi_outgoing=phi_outgoing,
        phi_limit=limit.phi,
    )
    logger.info("outgoing solve vs extrapolation at lambda=%s: relative difference %.3e", lam, difference)
    return check


def potential_spline(spec, geom):
    """Cubic spline of V over the positive half of the grid, extrapolated down to 0."""
    t = geom.x[geom.x > 0]
    return scipy.interpolate.CubicSpline(t, sum(potential_terms(spec, geom.grid, t).values()))


def _integrate(V, lam, start, data, nodes):
    """Integrate ``phi'' = -2 (lambda - V) phi`` from ``start`` over ``nodes``."""
    def rhs(t, y):
        return [y[1], -2.0 * (lam - V(t)) * y[0]]

    solution = scipy.integrate.solve_ivp(rhs, (start, float(nodes[-1])), np.asarray(data, dtype=complex),
                                         t_eval=nodes, method='DOP853', rtol=ODE_RTOL, atol=ODE_ATOL)
    if not solution.success:
        raise StiffRegion("radial integration failed at lambda=%s: %s" % (lam, solution.message))
    return solution.y[0], solution.y[1]


def _nonvanishing(tails, complete, rings=TAIL_RINGS):
    resolved = [nu for nu, ok in enumerate(complete) if ok][-rings:]
    last = np.asarray(tails, dtype=float)[resolved]
    return bool(last.size and np.min(last) >= TAIL_FLOOR * np.mean(last) and np.mean(last) > 0)


@dataclass
class EigenfunctionProbe:
    lam: float
    phi: np.ndarray = field(repr=False)
    Bstar_norm: float
    tail: list
    eq_residual: float
    r_match: float
    outgoing_error: np.ndarray = field(repr=False)
    nonvanishing: bool = False

    def to_record(self):
        return {'lam': self.lam, 'Bstar_norm': self.Bstar_norm, 'eq_residual': self.eq_residual,
                'r_match': self.r_match, 'nonvanishing': self.nonvanishing}


def generalized_eigenfunction(lam, spec, geom):
    """
    Outgoing solution of ``(H - lambda) phi = 0`` on the positive half line.

    Integration starts at ``max(2, 2 r_lambda)`` with WKB data
    ``phi = (2w)^-1/4``, ``phi' = (i sqrt(2w) - w'/(4w)) phi``,
    ``w = lambda - V``, and runs outward over the grid nodes; phi is zero
    before the matching radius.

    :raises StiffRegion: if ``lambda - V <= 0`` along the integration
    :rtype: EigenfunctionProbe
    """
    grid = geom.grid
    r_lambda = select_r_lambda(spec, lam, geom)
    r_match = max(2.0, 2.0 * r_lambda)
    outer = np.nonzero(geom.x >= r_match)[0]
    if outer.size < 3:
        raise ValueError("the grid ends before the matching radius %.3f" % r_match)
    nodes = geom.x[outer]

    V = potential_spline(spec, geom)
    w_nodes = lam - V(nodes)
    if np.any(w_nodes <= 0):
        raise StiffRegion("lambda - V <= 0 at x=%.3f beyond the matching radius" % nodes[np.argmax(w_nodes <= 0)])

    start = float(nodes[0])
    w0 = lam - float(V(start))
    w_prime = -float(V(start, 1))
    amplitude = (2.0 * w0) ** -0.25
    data = [amplitude, (1j * math.sqrt(2.0 * w0) - w_prime / (4.0 * w0)) * amplitude]
    values, slopes = _integrate(V, lam, start, data, nodes)

    phi = np.zeros(grid.n_points, dtype=complex)
    phi[outer] = values
    decomp = dyadic_decomposition(geom)
    tails = decomp.tails(phi)

    phases = build_phases(complex(lam), spec, geom, r_lambda)
    g, lap_f = geom.grad_f[outer], geom.lap_f[outer]
    A_phi = -1j * g * slopes - 0.5j * lap_f * values
    a_phi = phases.a[outer] * values
    outgoing_error = np.abs(A_phi - a_phi) / np.abs(a_phi)

    H = build_hamiltonian(spec, grid)
    mask = np.zeros(grid.n_points, dtype=bool)
    mask[outer[2:]] = True
    mask &= inner_region(geom)
    kinetic = 0.5 * (divergence_form(np.ones(grid.n_points), grid) @ phi)
    eq_residual = np.linalg.norm((H.dot(phi) - lam * phi)[mask]) / np.linalg.norm(kinetic[mask])

    probe = EigenfunctionProbe(lam=float(lam), phi=phi, Bstar_norm=besov_star_norm(phi, decomp),
                               tail=[float(v) for v in tails], eq_residual=float(eq_residual), r_match=r_match,
                               outgoing_error=outgoing_error, nonvanishing=_nonvanishing(tails, decomp.complete))
    if not probe.nonvanishing:
        logger.warning("outgoing eigenfunction tail at lambda=%s looks vanishing: %s", lam, probe.tail[-TAIL_RINGS:])
    return probe


@dataclass
class RellichVerdict:
    lam: float
    angles: list
    tails: list = field(repr=False)
    nonvanishing: list = field(default_factory=list)
    zero_in_Bstar0: bool = True

    @property
    def passed(self):
        return all(self.nonvanishing) and self.zero_in_Bstar0

    @property
    def verdict(self):
        if self.passed:
            return 'no B*0 null vector found'
        return 'B*0 candidate at angle %s' % self.angles[self.nonvanishing.index(False)]

    def to_record(self):
        return {'lam': self.lam, 'angles': len(self.angles), 'verdict': self.verdict, 'passed': self.passed}


def rellich_probe(lam, spec, geom, angles=RELLICH_ANGLES):
    """
    Shoot the two solutions regular at the origin (``phi(0) = 1, phi'(0) = 0``
    and ``phi(0) = 0, phi'(0) = 1``) outward, then check that every
    combination ``cos(t) phi_1 + sin(t) phi_2`` keeps a non-vanishing
    f-ring tail.

    :rtype: RellichVerdict
    """
    grid = geom.grid
    outward = np.nonzero(geom.x > 0)[0]
    nodes = geom.x[outward]
    V = potential_spline(spec, geom)
    fundamental = []
    for data in ([1.0, 0.0], [0.0, 1.0]):
        values, _ = _integrate(V, lam, 0.0, data, nodes)
        column = np.zeros(grid.n_points, dtype=complex)
        column[outward] = values
        fundamental.append(column)

    decomp = dyadic_decomposition(geom)
    sweep = [math.pi * k / angles for k in range(angles)]
    verdict = RellichVerdict(lam=float(lam), angles=sweep, tails=[])
    for angle in sweep:
        phi = math.cos(angle) * fundamental[0] + math.sin(angle) * fundamental[1]
        tails = decomp.tails(phi)
        verdict.tails.append([float(v) for v in tails])
        verdict.nonvanishing.append(_nonvanishing(tails, decomp.complete)
                                    and not bstar0_trend(tails, decomp.complete))
    verdict.zero_in_Bstar0 = bstar0_trend(decomp.tails(np.zeros(grid.n_points)), decomp.complete)
    logger.info("Rellich probe at lambda=%s: %s", lam, verdict.verdict)
    return verdict
