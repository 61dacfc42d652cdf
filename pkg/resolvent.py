"""
Resolvent solves and the limiting absorption experiments.

``phi = R(z) psi`` comes from a sparse LU factorization of ``H - z``. On top
of it: Besov-bound sweeps in Gamma, Richardson extrapolation of
``R(lambda +- i0) psi``, Hoelder fits of ``z -> R(z)`` in weighted operator
norms, and a few exact identities used as consistency checks.
"""
from dataclasses import asdict, dataclass, field

import logging
import math

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from exceptions import NonConvergent, SingularShift
from geometry import build_geometry, radius_of_flow
from model import build_hamiltonian, critical_exponent, make_grid
from operators import divergence_form, momentum, smooth_bump
from spaces import besov_norm, besov_star_norm, dyadic_decomposition

logger = logging.getLogger(__name__)

SOLVE_TOLERANCE = 1e-10

# ||phi|| / ||psi|| beyond this is treated as a numerically singular shift.
SINGULAR_GROWTH = 1e12

GAMMA_START = 0.1
GAMMA_FLOOR = 1e-5
GAMMA_LEVELS = 6

# Adaptive Richardson order is kept inside this range.
RICHARDSON_ORDER_RANGE = (0.25, 4.0)

HOLDER_PROBES = 32
HOLDER_POWER_STEPS = 4

SOURCES = ['gaussian', 'ring']


@dataclass(frozen=True)
class SpectralQuery:
    lam: float
    gamma: float
    sign: str = 'upper'
    interval: tuple = (0.5, 2.0)

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("Gamma must lie in [0, 1), got %s" % self.gamma)
        if self.sign not in ('upper', 'lower'):
            raise ValueError("Unknown sign %s" % self.sign)

    @property
    def z(self):
        return complex(self.lam, self.gamma if self.sign == 'upper' else -self.gamma)

    @property
    def in_interval(self):
        return self.interval[0] < self.lam < self.interval[1]


def factorize(H, z):
    """
    LU factorization of ``H - z``.

    :raises SingularShift: if the factorization hits an exactly singular pivot
    """
    try:
        return scipy.sparse.linalg.splu(H.shifted(z))
    except RuntimeError as err:
        raise SingularShift("H - z is singular at z=%s: %s" % (z, err))


def solve(H, z, psi, lu=None):
    """
    phi = (H - z)^-1 psi.

    :raises SingularShift: when the factorization fails or the solution is
        not finite or grows beyond ``SINGULAR_GROWTH`` times the data
    """
    if lu is None:
        lu = factorize(H, z)
    psi = np.asarray(psi, dtype=complex)
    phi = lu.solve(psi)
    scale = float(np.linalg.norm(psi))
    if not np.all(np.isfinite(phi)) or np.linalg.norm(phi) > SINGULAR_GROWTH * max(scale, 1e-300):
        raise SingularShift("resolvent at z=%s is numerically singular (|phi|/|psi| = %.3e)"
                            % (z, np.linalg.norm(phi) / max(scale, 1e-300)))
    residual = float(np.linalg.norm(H.dot(phi) - z * phi - psi))
    if residual > SOLVE_TOLERANCE * max(scale, 1e-300):
        logger.warning("solve at z=%s left relative residual %.3e", z, residual / scale)
    return phi


def dense_resolvent_apply(H, z, psi):
    """Spectral sum over a dense eigendecomposition of a Hermitian truncation."""
    values, vectors = scipy.linalg.eigh(H.matrix.toarray())
    coefficients = vectors.conj().T @ psi
    return vectors @ (coefficients / (values - z))


def make_source(name, geom, decomp=None):
    """
    Default right hand sides normalized in the B norm: a Gaussian at the
    origin or a smooth bump around the ring f = 4 on the positive side.
    """
    if decomp is None:
        decomp = dyadic_decomposition(geom)
    x = geom.x
    if name == 'gaussian':
        psi = np.exp(-x ** 2)
    elif name == 'ring':
        if geom.f.max() < 5.0:
            raise ValueError("the grid ends at f=%.2f, the ring source needs f >= 5" % geom.f.max())
        lo, mid, hi = radius_of_flow(np.array([3.0, 4.0, 5.0]), geom.epsilon)
        psi = smooth_bump(x, mid, 0.5 * (hi - lo))
    else:
        raise ValueError("Unknown source %s, expected one of %s" % (name, SOURCES))
    return (psi / besov_norm(psi, decomp)).astype(complex)


SWEEP_COLUMNS = ['lam', 'gamma', 'sign', 'psi_id', 'norm_psi_B', 'norm_phi_Bstar', 'norm_pf_phi_Bstar',
                 'h_form', 'norm_kinetic_Bstar', 'bound_ratio', 'solve_residual', 'kinetic_identity_residual',
                 'out_residual', 'in_residual']


@dataclass
class SweepRecord:
    query: SpectralQuery
    psi_id: str
    norm_psi_B: float
    norm_phi_Bstar: float
    norm_pf_phi_Bstar: float
    h_form: float
    norm_kinetic_Bstar: float
    bound_ratio: float
    solve_residual: float
    kinetic_identity_residual: float
    out_residual: float = None
    in_residual: float = None

    def to_record(self):
        record = asdict(self)
        query = record.pop('query')
        record.update({'lam': query['lam'], 'gamma': query['gamma'], 'sign': query['sign']})
        return record


def bound_quantities(H, geom, decomp, z, psi, phi):
    """
    The four terms bounded by the resolvent estimate, each in its own norm,
    and the kinetic identity ``p^2 phi = 2 (psi + (z - V) phi)`` residual.
    """
    grid = geom.grid
    eps = geom.epsilon
    P = momentum(grid)
    kinetic = divergence_form(np.ones_like(geom.f), grid) @ phi
    pf_phi = geom.grad_f * (P @ phi)
    h_form = math.sqrt(max(grid.inner(phi, divergence_form(geom.h, grid) @ phi).real, 0.0))

    weight = geom.r ** -eps
    V = potential_field_for(H, geom)
    identity_gap = weight * (kinetic - 2.0 * (psi + (z - V) * phi))
    kinetic_norm = besov_star_norm(weight * kinetic, decomp)
    return {
        'norm_phi_Bstar': besov_star_norm(phi, decomp),
        'norm_pf_phi_Bstar': besov_star_norm(pf_phi, decomp),
        'h_form': h_form,
        'norm_kinetic_Bstar': kinetic_norm,
        'kinetic_identity_residual': besov_star_norm(identity_gap, decomp) / max(kinetic_norm, 1e-300),
    }


def potential_field_for(H, geom):
    """Diagonal of H minus the kinetic diagonal: V including any absorbing layer."""
    return H.matrix.diagonal() - 1.0 / geom.spacing ** 2


def besov_bound_sweep(spec, grid, lam, gammas, psi, psi_id='custom', sign='upper', absorber=0.0,
                      geom=None, decomp=None):
    """
    Solve at ``z = lam +- i Gamma`` for every Gamma and record the bound ratio.

    :rtype: list of SweepRecord
    """
    if geom is None:
        geom = build_geometry(grid, spec.epsilon, spec.rho, spec.dim)
    if decomp is None:
        decomp = dyadic_decomposition(geom)
    H = build_hamiltonian(spec, grid, absorber=absorber, sign=sign)
    norm_psi = besov_norm(psi, decomp)

    records = []
    for gamma in gammas:
        query = SpectralQuery(lam=float(lam), gamma=float(gamma), sign=sign)
        z = query.z
        phi = solve(H, z, psi)
        quantities = bound_quantities(H, geom, decomp, z, psi, phi)
        total = (quantities['norm_phi_Bstar'] + quantities['norm_pf_phi_Bstar']
                 + quantities['h_form'] + quantities['norm_kinetic_Bstar'])
        residual = grid.norm(H.dot(phi) - z * phi - psi) / grid.norm(psi)
        records.append(SweepRecord(query=query, psi_id=psi_id, norm_psi_B=norm_psi,
                                   bound_ratio=total / norm_psi, solve_residual=residual, **quantities))
        logger.info("sweep point z=%s solved, bound ratio %.4g", z, total / norm_psi)
    return records


def uniformly_bounded(records, factor=2.0):
    """The bound ratios at the two smallest Gamma agree within ``factor``."""
    ordered = sorted(records, key=lambda record: record.query.gamma)
    if len(ordered) < 2:
        return False
    first, second = ordered[0].bound_ratio, ordered[1].bound_ratio
    return bool(max(first, second) <= factor * min(first, second))


def gamma_schedule(start=GAMMA_START, levels=GAMMA_LEVELS, floor=GAMMA_FLOOR):
    """Geometric schedule ``start * 2^-k`` stopped at ``floor``."""
    return [start * 2.0 ** -k for k in range(levels) if start * 2.0 ** -k >= floor]


def inner_region(geom):
    return geom.f <= 0.5 * float(geom.f.max())


def inner_weighted_norm(geom, values):
    """||f^-1 values|| on the inner region {f <= f_max / 2}."""
    inner = inner_region(geom)
    return geom.grid.norm(np.where(inner, values / geom.f, 0.0))


@dataclass
class LimitEstimate:
    """Extrapolated boundary value; unpacks as ``(phi, error)``."""
    phi: np.ndarray
    error: float
    gammas: list
    differences: list
    order: float
    solutions: list = field(default_factory=list, repr=False)

    def __iter__(self):
        return iter((self.phi, self.error))


def _richardson(fine, coarse, order):
    return fine + (fine - coarse) / (2.0 ** order - 1.0)


def lap_extrapolate(spec, grid, lam, psi, gammas=None, sign='upper', absorber=0.0, geom=None):
    """
    Extrapolate ``phi_Gamma = R(lam +- i Gamma) psi`` to Gamma = 0.

    The order is read off the contraction of successive differences in the
    ``H_-1`` norm on the inner region and clipped to
    ``RICHARDSON_ORDER_RANGE``; the error estimate compares the last two
    extrapolants.

    :raises NonConvergent: if successive differences stop decreasing
    :rtype: LimitEstimate
    """
    gammas = list(gammas or gamma_schedule())
    if len(gammas) < 3:
        raise ValueError("Richardson extrapolation needs at least three Gamma levels")
    if geom is None:
        geom = build_geometry(grid, spec.epsilon, spec.rho, spec.dim)
    H = build_hamiltonian(spec, grid, absorber=absorber, sign=sign)
    pm = 1.0 if sign == 'upper' else -1.0

    solutions = [solve(H, complex(lam, pm * gamma), psi) for gamma in gammas]
    differences = [inner_weighted_norm(geom, solutions[k + 1] - solutions[k]) for k in range(len(gammas) - 1)]
    for k in range(1, len(differences)):
        if not differences[k] < differences[k - 1]:
            raise NonConvergent("difference %d (%.3e) did not decrease from %.3e at Gamma=%s"
                                % (k, differences[k], differences[k - 1], gammas[k + 1]))

    ratio = differences[-2] / differences[-1]
    order = float(np.clip(math.log2(ratio), *RICHARDSON_ORDER_RANGE))
    finest = _richardson(solutions[-1], solutions[-2], order)
    previous = _richardson(solutions[-2], solutions[-3], order)
    error = inner_weighted_norm(geom, finest - previous)
    logger.info("extrapolated R(%s %s i0) psi with order %.2f, error estimate %.3e",
                lam, '+' if pm > 0 else '-', order, error)
    return LimitEstimate(phi=finest, error=error, gammas=gammas, differences=differences, order=order,
                         solutions=solutions)


def limit_residual(H, geom, lam, phi, psi):
    """||(H - lam) phi - psi|| in H_-1 on the inner region."""
    return inner_weighted_norm(geom, H.dot(phi) - lam * phi - psi)


def holder_floor(s, beta_c):
    return min((2.0 * s - 1.0) / (2.0 * s + 1.0), beta_c / (beta_c + 1.0))


class _WeightedDifference(object):
    """
    ``f^-s M (R(z) - R(z')) f^-s`` with ``M`` the identity or
    ``r^(-eps/2) P``, applied with and without adjoint.
    """

    def __init__(self, H, geom, z, z_prime, s, momentum_weight=False):
        self.weight = geom.f ** -s
        self.lu = factorize(H, z)
        self.lu_prime = factorize(H, z_prime)
        self.left = None
        if momentum_weight:
            self.left = geom.r ** (-geom.epsilon / 2)
            self.P = momentum(geom.grid)

    def matvec(self, x):
        y = self.weight * x
        y = self.lu.solve(y) - self.lu_prime.solve(y)
        if self.left is not None:
            y = self.left * (self.P @ y)
        return self.weight * y

    def rmatvec(self, y):
        x = self.weight * y
        if self.left is not None:
            x = self.P.conj().T @ (self.left * x)
        x = self.lu.solve(x, trans='H') - self.lu_prime.solve(x, trans='H')
        return self.weight * x


def probed_norm(operator, size, rng, probes=HOLDER_PROBES, steps=HOLDER_POWER_STEPS):
    """
    Lower estimate of an operator norm from random probes refined by a few
    power steps on ``M* M``.
    """
    best = 0.0
    for _ in range(probes):
        x = rng.standard_normal(size) + 1j * rng.standard_normal(size)
        x /= np.linalg.norm(x)
        for _ in range(steps):
            y = operator.matvec(x)
            x = operator.rmatvec(y)
            norm = np.linalg.norm(x)
            if norm == 0:
                break
            x /= norm
        best = max(best, float(np.linalg.norm(operator.matvec(x))))
    return best


def resolvent_difference_norm(H, geom, z, z_prime, s, momentum_weight=False, rng=None, probes=HOLDER_PROBES):
    """Probed ``||R(z) - R(z')||`` in B(H_s, H_-s)."""
    if z == z_prime:
        return 0.0
    if rng is None:
        rng = np.random.default_rng(0)
    operator = _WeightedDifference(H, geom, z, z_prime, s, momentum_weight)
    return probed_norm(operator, geom.size, rng, probes)


def dense_difference_norm(H, geom, z, z_prime, s):
    """Exact spectral norm of the weighted difference on a small grid."""
    dense = H.matrix.toarray()
    identity = np.eye(dense.shape[0])
    difference = np.linalg.inv(dense - z * identity) - np.linalg.inv(dense - z_prime * identity)
    weight = geom.f ** -s
    return float(scipy.linalg.norm(weight[:, None] * difference * weight[None, :], 2))


@dataclass
class HolderFit:
    s: float
    omega: float
    omega_momentum: float
    floor: float
    distances: list
    norms: list
    norms_momentum: list

    def rows(self):
        return [(d, n, m) for d, n, m in zip(self.distances, self.norms, self.norms_momentum)]


def _log_slope(distances, norms):
    pairs = [(d, n) for d, n in zip(distances, norms) if d > 0 and n > 0]
    if len(pairs) < 2:
        return float('nan')
    d, n = zip(*pairs)
    return float(np.polyfit(np.log(d), np.log(n), 1)[0])


def holder_exponent(spec, geom, pairs, s, absorber=0.0, probes=HOLDER_PROBES, seed=0):
    """
    Fit ``||R(z) - R(z')|| ~ |z - z'|^omega`` in B(H_s, H_-s) over the
    given pairs, for the resolvent and for ``r^(-eps/2) p R(z)``.

    :param pairs: list of ``(z, z')``, distances spanning two decades or more
    :rtype: HolderFit
    """
    if not s > 0.5:
        raise ValueError("s must exceed 1/2, got %s" % s)
    H = build_hamiltonian(spec, geom.grid, absorber=absorber)
    rng = np.random.default_rng(seed)
    distances, norms, norms_momentum = [], [], []
    for z, z_prime in pairs:
        distances.append(abs(z - z_prime))
        norms.append(resolvent_difference_norm(H, geom, z, z_prime, s, rng=rng, probes=probes))
        norms_momentum.append(resolvent_difference_norm(H, geom, z, z_prime, s, True, rng=rng, probes=probes))
        logger.debug("|z - z'| = %.3e: difference norm %.3e", distances[-1], norms[-1])

    fit = HolderFit(s=float(s), omega=_log_slope(distances, norms),
                    omega_momentum=_log_slope(distances, norms_momentum),
                    floor=holder_floor(s, critical_exponent(spec)),
                    distances=distances, norms=norms, norms_momentum=norms_momentum)
    logger.info("Hoelder fit s=%s: omega=%.3f (floor %.3f)", s, fit.omega, fit.floor)
    return fit


def holder_pairs(lam, gamma, offsets):
    """Pairs ``(lam + i gamma, lam + offset + i gamma)``."""
    return [(complex(lam, gamma), complex(lam + offset, gamma)) for offset in offsets]


def first_resolvent_identity(H, z, z_prime, psi):
    """Relative residual of ``R(z) - R(z') = (z - z') R(z) R(z')`` on psi."""
    lu = factorize(H, z)
    phi = solve(H, z, psi, lu)
    phi_prime = solve(H, z_prime, psi)
    rhs = (z - z_prime) * solve(H, z, phi_prime, lu)
    scale = max(np.linalg.norm(phi - phi_prime), np.linalg.norm(phi))
    return float(np.linalg.norm(phi - phi_prime - rhs) / scale)


def conjugation_symmetry(H, z, psi, H_conjugate=None):
    """
    Relative distance between ``R(conj z) conj psi`` and ``conj(R(z) psi)``.
    ``H_conjugate`` is the entrywise conjugate of H (H itself for real coefficients).
    """
    if H_conjugate is None:
        H_conjugate = H
    phi = solve(H, z, psi)
    mirrored = solve(H_conjugate, np.conj(z), np.conj(psi))
    return float(np.linalg.norm(mirrored - np.conj(phi)) / np.linalg.norm(phi))


def domain_stability(spec, grid, z, source='gaussian', absorber=0.0):
    """
    Relative change of ``R(z) psi`` on the inner region of ``grid`` when
    R_max is doubled, in the ``H_-1`` norm.
    """
    results = []
    for R_max in (grid.R_max, 2.0 * grid.R_max):
        wide = make_grid(grid.mode, grid.spacing, R_max, grid.boundary)
        geom = build_geometry(wide, spec.epsilon, spec.rho, spec.dim)
        psi = make_source(source, geom)
        H = build_hamiltonian(spec, wide, absorber=absorber, sign='upper' if z.imag >= 0 else 'lower')
        results.append((geom, solve(H, z, psi)))

    (geom, phi), (wide_geom, wide_phi) = results
    # the doubled grid holds the original nodes at a fixed index offset
    offset = int(round((geom.x[0] - wide_geom.x[0]) / grid.spacing))
    restricted = wide_phi[offset:offset + geom.size]
    reference = inner_weighted_norm(geom, phi)
    return inner_weighted_norm(geom, restricted - phi) / reference
