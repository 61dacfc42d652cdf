"""
Conjugate operators, asymptotic phases and weighted commutator forms.

Everything acts on grid vectors of the 1D reduction (line mode, or the
half-line variable ``u`` in radial mode). Momenta use the central
difference ``P = -i D0``, symmetrized products ``1/2 (gP + Pg)``, and
``p alpha p`` uses the conservative three point stencil with midpoint
averages of ``alpha``.
"""
from dataclasses import dataclass, field

import logging
import math

import numpy as np
import scipy.integrate
import scipy.sparse

from exceptions import BranchCut, NoAdmissibleConstants, NotSatisfiable
from geometry import cutoff_jet, smooth_cutoff
from model import DiscreteOperator, build_hamiltonian, epsilon_prime

logger = logging.getLogger(__name__)

# Test vectors stay this many stencil widths away from the boundary.
BOUNDARY_MARGIN = 5

# Constant search of the positivity probe.
PROBE_SMALL_CONSTANTS = [0.25, 0.1, 0.05, 0.01, 1e-3, 1e-4]
# C is searched in units of the form scale of the sampled vectors.
PROBE_LARGE_FACTORS = [0.0, 1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0, 1000.0]
PROBE_TOLERANCE = 1e-6
PROBE_SAMPLES = 200


def multiplication(values):
    return scipy.sparse.diags(np.asarray(values, dtype=complex), 0, format='csr')


def momentum(grid):
    """P = -i D0 with Dirichlet ends."""
    n, h = grid.n_points, grid.spacing
    upper = np.full(n - 1, -0.5j / h)
    return scipy.sparse.diags([-upper, upper], [-1, 1], format='csr', dtype=complex)


def divergence_form(alpha, grid):
    """p alpha p = -D (alpha D) with alpha at the cell midpoints."""
    alpha = np.asarray(alpha, dtype=complex)
    h2 = grid.spacing ** 2
    mid = 0.5 * (alpha[1:] + alpha[:-1])
    left = np.concatenate([[alpha[0]], mid])
    right = np.concatenate([mid, [alpha[-1]]])
    return scipy.sparse.diags([-mid / h2, (left + right) / h2, -mid / h2], [-1, 0, 1], format='csr')


def real_part(matrix):
    return 0.5 * (matrix + matrix.conj().T)


def imag_part(matrix):
    return (matrix - matrix.conj().T) / 2j


def symmetrized_momentum(values, grid, label):
    G = multiplication(values)
    P = momentum(grid)
    return DiscreteOperator(matrix=(0.5 * (G @ P + P @ G)).tocsr(), grid=grid, symmetry='hermitian', label=label)


def build_conjugate_A(geom):
    """A = Re p^f = 1/2 (grad f P + P grad f)."""
    return symmetrized_momentum(geom.grad_f, geom.grid, 'A')


def build_B(geom):
    """B = Re p^r = 1/2 (grad r P + P grad r)."""
    return symmetrized_momentum(geom.grad_r, geom.grid, 'B')


def hermiticity_defect(operator):
    matrix = operator.matrix
    difference = matrix - matrix.conj().T
    return float(abs(difference).max()) if difference.nnz else 0.0


def smooth_bump(x, center, half_width):
    """exp(-1/(1 - s^2)) for |s| < 1, s = (x - center) / half_width."""
    s = (np.asarray(x, dtype=float) - center) / half_width
    inside = np.abs(s) < 1
    values = np.zeros_like(s)
    values[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return values


def interior_bumps(grid, count, rng, half_width=(1.0, 4.0), region=None):
    """
    Random compactly supported real bumps, at least ``BOUNDARY_MARGIN``
    stencil widths away from the ends of the grid.

    :param region: optional ``(lo, hi)`` interval the supports must lie in
    :returns: array of shape ``(count, n_points)``
    """
    x = grid.nodes
    lo = x[0] + BOUNDARY_MARGIN * grid.spacing
    hi = x[-1] - BOUNDARY_MARGIN * grid.spacing
    if region is not None:
        lo, hi = max(lo, region[0]), min(hi, region[1])
    samples = np.zeros((count, x.size))
    for k in range(count):
        width = rng.uniform(*half_width)
        width = min(width, 0.45 * (hi - lo))
        center = rng.uniform(lo + width, hi - width)
        samples[k] = smooth_bump(x, center, width)
    return samples


def _form(grid, psi, matrix):
    return grid.inner(psi, matrix @ psi)


@dataclass
class PhaseField:
    z: complex
    sign: str
    a: np.ndarray
    b: np.ndarray
    eta_lambda: np.ndarray
    r_lambda: float
    eikonal_residual: np.ndarray
    eikonal_exponent: float
    bounds: dict = field(default_factory=dict)


def _decay_exponent(f, values, mask):
    """Minus the least squares slope of log|values| against log f on ``mask``."""
    mask = mask & (np.abs(values) > 0)
    if np.count_nonzero(mask) < 3:
        return float('inf')
    slope = np.polyfit(np.log(f[mask]), np.log(np.abs(values[mask])), 1)[0]
    return float(-slope)


def outer_region(geom, fraction=0.25, skip=2):
    """Nodes with f above ``fraction`` of its maximum, away from the ends."""
    mask = geom.f >= fraction * float(geom.f.max())
    mask[:skip] = False
    mask[-skip:] = False
    return mask


def build_phases(z, spec, geom, r_lambda, sign='upper'):
    """
    Asymptotic phases a and b for the spectral parameter ``z``.

    The square root is principal (Re sqrt(w) > 0 off the negative axis).
    The eikonal residual ``p^r b + b^2 - 2|grad r|^2 (z - q1 + r^eps)`` is
    tabulated and its decay exponent in f fitted on the outer region.

    :raises BranchCut: if ``z - q1 + r^eps`` reaches the negative real axis
        where ``eta_lambda`` does not vanish
    :rtype: PhaseField
    """
    eps, r, h = spec.epsilon, geom.r, geom.spacing
    pm = 1.0 if sign == 'upper' else -1.0
    q1 = spec.q1_values(r, geom.f)
    w = z - q1 + r ** eps

    eta_lambda = 1.0 - smooth_cutoff(r / r_lambda, geom.cutoff)
    active = eta_lambda > 0
    scale = float(np.max(np.abs(w[active]))) if np.any(active) else 1.0
    on_cut = active & (w.real <= 0) & (np.abs(w.imag) <= 1e-14 * scale)
    if np.any(on_cut):
        raise BranchCut("z - q1 + r^eps = %s on the negative axis at r=%.3f"
                        % (w[on_cut][0], r[on_cut][0]))

    root = np.sqrt(2.0 * w.astype(complex))
    grad_abs = np.abs(geom.grad_r)
    a = eta_lambda * grad_abs * r ** (-eps / 2) * root + pm * 1j * (eps / 2) * grad_abs ** 2 * r ** (-eps / 2 - 1)
    b = eta_lambda * grad_abs * root + pm * 1j * (eps / 4) * grad_abs ** 2 / r

    pr_b = -1j * geom.grad_r * np.gradient(b, h)
    residual = pr_b + b ** 2 - 2.0 * grad_abs ** 2 * w
    exponent = _decay_exponent(geom.f, residual, outer_region(geom) & (geom.x > 0))

    im_a_floor = (eps / 2) * grad_abs ** 2 * r ** (-eps / 2 - 1)
    im_b_floor = (eps / 4) * grad_abs ** 2 / r
    ell_grad_a = geom.ell * geom.grad_r * np.gradient(a, h)
    bounds = {
        'C_a': float(np.max(np.abs(a))),
        'C_b': float(np.max(np.abs(b) * r ** (-eps / 2))),
        'im_a_floor': bool(np.all(pm * a.imag >= im_a_floor * (1 - 1e-12))),
        'im_b_floor': bool(np.all(pm * b.imag >= im_b_floor * (1 - 1e-12))),
        're_a_nonnegative': bool(np.all(a.real[active] >= 0)),
        'ell_grad_a_outer': float(np.max(np.abs(ell_grad_a[r >= 2 * 2.0]), initial=0.0)),
        'C_eikonal': float(np.max(np.abs(residual) * geom.f ** (1 + _phase_rate(spec)))),
    }
    logger.debug("phases at z=%s: eikonal decay exponent %.3f", z, exponent)
    return PhaseField(z=complex(z), sign=sign, a=a, b=b, eta_lambda=eta_lambda, r_lambda=float(r_lambda),
                      eikonal_residual=residual, eikonal_exponent=exponent, bounds=bounds)


def _phase_rate(spec):
    """min{rho, eps', tau} with tau skipped when absent."""
    rates = [spec.rho, epsilon_prime(spec.epsilon)]
    if spec.tau is not None:
        rates.append(spec.tau)
    return min(rates)


@dataclass
class CommutatorForm:
    theta: object = None
    beta: float = 0.0
    matrix_bruteforce: object = None
    matrix_analytic: object = None
    gamma: np.ndarray = None
    q3: np.ndarray = None
    q0: np.ndarray = None
    discrepancy: float = None
    chi_identity_error: float = None
    ell_identity_error: float = None
    ell_degenerate: bool = False
    factorization_mismatch: float = None
    q3_bound: float = None
    q3_exponent: float = None

    def to_record(self):
        record = {'beta': self.beta}
        if self.theta is not None:
            record.update({'nu': self.theta.nu, 'delta': self.theta.delta})
        for name in ('discrepancy', 'chi_identity_error', 'ell_identity_error', 'ell_degenerate',
                     'factorization_mismatch', 'q3_bound', 'q3_exponent'):
            record[name] = getattr(self, name)
        return record


def _smooth_potential_slope(spec, geom):
    """x-derivative of the repulsive and centrifugal parts of V."""
    x, abs_x = geom.x, geom.abs_x
    slope = np.zeros_like(x)
    nonzero = abs_x > 0
    slope[nonzero] = -spec.epsilon * abs_x[nonzero] ** (spec.epsilon - 1) * np.sign(x[nonzero])
    if geom.grid.mode == 'radial':
        d, l = spec.dim, spec.angular_sector
        kappa = (d - 1) * (d - 3) / 4.0 + l * (l + d - 2)
        slope = slope - kappa / x ** 3
    return slope


def weighted_commutator_expansion(spec, geom, theta, H):
    """
    The weighted commutator i(H Theta A - A Theta H) assembled term by term:

        p g' Theta p + p g^2 Theta' p + 1/2 Re(g' Theta p^2) - 1/2 p g' Theta p
        - Im(g g' Theta' p) - Im(2 q2 Theta g p) - Re(g^2 Theta' H)
        - g V0' Theta + q_Theta - 1/4 g^4 Theta'''

    with ``g = grad f``, primes on Theta in f and
    ``q_Theta = -g q1' Theta + q2 g' Theta + g^2 q2 Theta' - 3/4 g^2 g' Theta''``.
    """
    grid = geom.grid
    g, dg = geom.grad_f, geom.dgrad_f
    T, T1, T2, T3 = theta.values, theta.d1, theta.d2, theta.d3
    q2 = spec.q2_values(geom.r, geom.f)
    dq1 = geom.grad_r * spec.dq1_dr(geom.r, geom.f)
    P = momentum(grid)
    P2 = divergence_form(np.ones_like(g), grid)
    M = multiplication

    terms = [
        divergence_form(dg * T, grid),
        divergence_form(g ** 2 * T1, grid),
        0.5 * real_part(M(dg * T) @ P2),
        -0.5 * divergence_form(dg * T, grid),
        -imag_part(M(g * dg * T1) @ P),
        -imag_part(M(2.0 * q2 * T * g) @ P),
        -real_part(M(g ** 2 * T1) @ H.matrix),
        M(-g * _smooth_potential_slope(spec, geom) * T),
        M(-g * dq1 * T + q2 * dg * T + g ** 2 * q2 * T1 - 0.75 * g ** 2 * dg * T2),
        M(-0.25 * g ** 4 * T3),
    ]
    return sum(terms[1:], terms[0]).tocsr()


def weighted_commutator_product(theta, H, A):
    """i(H Theta A - A Theta H) by matrix products."""
    W = multiplication(theta.values)
    return (1j * (H.matrix @ W @ A.matrix - A.matrix @ W @ H.matrix)).tocsr()


def _relative_form_gap(grid, samples, exact, approx):
    worst = 0.0
    for psi in samples:
        image = exact @ psi
        scale = grid.norm(image) * grid.norm(psi)
        if scale == 0:
            continue
        gap = abs(_form(grid, psi, exact - approx)) / scale
        worst = max(worst, gap)
    return worst


def chi_commutator_error(geom, H, A, n, samples):
    """
    Largest ``||i(H chi_n - chi_n H) psi - Re(chi_n' A) psi|| / ||psi||``
    with ``chi_n = chi(f / R_n)`` and the prime taken in f.
    """
    grid = geom.grid
    R_n = 2.0 ** n
    chi, d_chi, _ = cutoff_jet(geom.f / R_n, geom.cutoff)
    X = multiplication(chi)
    Xp = multiplication(d_chi / R_n)
    lhs = 1j * (H.matrix @ X - X @ H.matrix)
    rhs = 0.5 * (Xp @ A.matrix + A.matrix @ Xp)
    worst = 0.0
    for psi in samples:
        norm = grid.norm(psi)
        if norm > 0:
            worst = max(worst, grid.norm((lhs - rhs) @ psi) / norm)
    return worst


def ell_commutator_check(geom, theta, beta, A, samples):
    """
    Compare i(p g~ p A - A p g~ p) with
    ``p (2 g~ g' - g d(g~)) p - Im(g~ g'' p)`` for g~ = Theta^(2 beta) ell.

    :returns: ``(relative error, degenerate)``; degenerate when g~ vanishes
        on the support of every sample
    """
    grid = geom.grid
    h = grid.spacing
    g_tilde = theta.values ** (2 * beta) * geom.ell
    active = [psi for psi in samples if np.any(np.abs(g_tilde[np.abs(psi) > 0]) > 0)]
    if not active:
        return None, True

    K = divergence_form(g_tilde, grid)
    brute = 1j * (K @ A.matrix - A.matrix @ K)
    d2g = np.gradient(geom.dgrad_f, h)
    analytic = (divergence_form(2.0 * g_tilde * geom.dgrad_f - geom.grad_f * np.gradient(g_tilde, h), grid)
                - imag_part(multiplication(g_tilde * d2g) @ momentum(grid)))
    return _relative_form_gap(grid, active, brute, analytic), False


def _default_samples(geom, rng, count=20):
    real = interior_bumps(geom.grid, count, rng)
    modulated = real * np.exp(1j * geom.f)
    return np.vstack([real, modulated])


def commutator_identity_check(spec, geom, theta, beta=0.0, H=None, A=None, samples=None, n=None, seed=0):
    """
    Brute force against term by term assembly of the weighted commutator,
    plus the chi_n commutator identity and the identity for p g~ p with
    g~ = Theta^(2 beta) ell.

    Report only; nothing raises on a failed comparison.

    :rtype: CommutatorForm
    """
    if H is None:
        H = build_hamiltonian(spec, geom.grid)
    if A is None:
        A = build_conjugate_A(geom)
    if samples is None:
        samples = _default_samples(geom, np.random.default_rng(seed))

    brute = weighted_commutator_product(theta, H, A)
    analytic = weighted_commutator_expansion(spec, geom, theta, H)
    form = CommutatorForm(theta=theta, beta=beta, matrix_bruteforce=brute, matrix_analytic=analytic)
    form.discrepancy = _relative_form_gap(geom.grid, samples, brute, analytic)
    form.chi_identity_error = chi_commutator_error(geom, H, A, theta.nu if n is None else n, samples)
    form.ell_identity_error, form.ell_degenerate = ell_commutator_check(geom, theta, beta, A, samples)
    logger.info("commutator check nu=%d delta=%s: discrepancy %.3e", theta.nu, theta.delta, form.discrepancy)
    return form


def factorization_remainder(z, spec, geom, phases):
    """
    The remainder q3 of ``H - z = 1/2 (B + b) eta~ (B - b) + 1/2 p ell p + q3``
    from its closed form, together with the auxiliary q0.
    """
    r, f, h = geom.r, geom.f, geom.spacing
    q1 = spec.q1_values(r, f)
    q2 = spec.q2_values(r, f)
    w = z - q1 + r ** spec.epsilon
    b = phases.b
    radial_derivative = lambda values: geom.grad_r * np.gradient(values, h)

    d_eta = radial_derivative(geom.eta_tilde)
    q0 = (0.25 * d_eta * geom.lap_r + 0.25 * geom.eta_tilde * radial_derivative(geom.lap_r)
          + 0.125 * geom.eta_tilde * geom.lap_r ** 2)
    pr_b = -1j * radial_derivative(b)
    q3 = (0.5 * geom.eta_tilde * (pr_b + b ** 2 - 2.0 * geom.grad_r ** 2 * w)
          - (1.0 - geom.eta) * w
          - 0.5j * d_eta * b
          + (r ** spec.epsilon - geom.abs_x ** spec.epsilon)
          + q0 + q2)
    return q3, q0


def factorization_check(z, spec, geom, phases, H=None, samples=None, seed=0):
    """
    Apply both sides of the factorization of H - z to interior bumps and
    fit the decay of q3.

    :rtype: CommutatorForm
    """
    grid = geom.grid
    if H is None:
        H = build_hamiltonian(spec, grid)
    if samples is None:
        samples = interior_bumps(grid, 20, np.random.default_rng(seed), half_width=(2.0, 4.0))
    q3, q0 = factorization_remainder(z, spec, geom, phases)

    B = build_B(geom).matrix
    Mb = multiplication(phases.b)
    rhs = (0.5 * (B + Mb) @ multiplication(geom.eta_tilde) @ (B - Mb)
           + 0.5 * divergence_form(geom.ell, grid)
           + multiplication(q3))
    lhs = H.shifted(z)

    mismatch = 0.0
    for psi in samples:
        image = lhs @ psi
        norm = grid.norm(image)
        if norm > 0:
            mismatch = max(mismatch, grid.norm(image - rhs @ psi) / norm)

    rate = _phase_rate(spec)
    form = CommutatorForm(q3=q3, q0=q0, factorization_mismatch=mismatch)
    form.q3_bound = float(np.max(np.abs(q3) * geom.f ** (1 + rate)))
    form.q3_exponent = _decay_exponent(geom.f, q3, outer_region(geom) & (geom.x > 0))
    logger.info("factorization at z=%s: mismatch %.3e, q3 decay exponent %.3f", z, mismatch, form.q3_exponent)
    return form


@dataclass
class ProbeReport:
    z: complex
    nu: int
    delta: float
    beta: float
    c: float
    C: float
    n: int
    min_rayleigh: float
    n_samples: int
    form_scale: float
    passed: bool
    variant: str = 'bounded'
    # largest share of a sample's form carried by the C term
    absorbed_share: float = 0.0

    def to_record(self):
        return {
            'z_real': self.z.real, 'z_imag': self.z.imag, 'nu': self.nu, 'delta': self.delta,
            'beta': self.beta, 'c': self.c, 'C': self.C, 'n': self.n, 'min_rayleigh': self.min_rayleigh,
            'n_samples': self.n_samples, 'form_scale': self.form_scale, 'passed': self.passed,
            'variant': self.variant, 'absorbed_share': self.absorbed_share,
        }


def bounded_multiplier(z, spec, geom, theta, C4=1.0, C5=None, C7=0.0):
    """
    The multiplier gamma of the bounded-weight estimate:

        1/2 (g^2 - r^-eps) Theta' + eps/2 r^(-eps/2-1) Theta + C4 Gamma r^-eps Theta
        +- i C5 - 2 C7 r^-eps f^(-1-min{1, rho, eps'}) Theta
    """
    eps, r, f = spec.epsilon, geom.r, geom.f
    gamma_im = abs(z.imag)
    pm = 1.0 if z.imag >= 0 else -1.0
    if C5 is None:
        C5 = 2.0 * (1.0 / (2.0 * C4) + C4 * (1.0 + abs(z.real))) * float(np.max(theta.values))
    decay = 1.0 + min(1.0, spec.rho, epsilon_prime(eps))
    return (0.5 * (geom.grad_f ** 2 - r ** -eps) * theta.d1
            + (eps / 2) * r ** (-eps / 2 - 1) * theta.values
            + C4 * gamma_im * r ** -eps * theta.values
            + pm * 1j * C5
            - 2.0 * C7 * r ** -eps * f ** -decay * theta.values)


def _wkb_samples(geom, samples, phases):
    # A psi = a psi for psi = exp(iS) needs S' = a / grad f
    if phases is not None:
        g = geom.grad_f
        phase = np.divide(np.real(phases.a), g, out=np.zeros_like(g), where=np.abs(g) > 0)
    else:
        phase = np.sign(geom.x) * np.sqrt(2.0 * geom.abs_x ** geom.epsilon)
    integral = scipy.integrate.cumulative_trapezoid(phase, dx=geom.spacing, initial=0.0)
    return np.vstack([samples * np.exp(1j * integral), samples * np.exp(-1j * integral)])


def _search_constants(parts, norms, floor, n_values, scale):
    """
    First admissible (c, n, C): largest c, then smallest n, then smallest C.

    ``parts`` holds the per-sample forms ``F0`` (constant part), ``P``
    (the part multiplied by c) and ``X[n]`` (multiplied by C). C runs over
    ``PROBE_LARGE_FACTORS`` times ``scale``.
    """
    F0, P, X = parts
    best = -np.inf
    for c in PROBE_SMALL_CONSTANTS:
        for n in n_values:
            for factor in PROBE_LARGE_FACTORS:
                C = factor * scale
                quotient = float(np.min((F0 - c * P + C * X[n]) / norms))
                best = max(best, quotient)
                if quotient >= -floor:
                    return c, n, C, quotient, best
    return None, None, None, None, best


def cutoff_limit(geom):
    """
    Largest n for which chi_n = chi(f / 2^n) vanishes on the outer half of
    the f range, or -1 when no such n exists.
    """
    room = float(geom.f.max()) / (2.0 * geom.cutoff.t_hi)
    if room < 1.0:
        return -1
    return int(math.floor(math.log2(room)))


def positivity_probe(z, spec, geom, theta, beta=0.0, n_cut=None, variant='bounded', phases=None,
                     H=None, A=None, n_samples=PROBE_SAMPLES, seed=0, gamma_constant=1.0):
    """
    Search constants (c, C) for which the commutator lower bound holds on a
    sample of interior vectors.

    ``bounded`` variant:
        Im(A Theta (H-z)) + Re(gamma (H-z)) - c (Theta' + A Theta' A + p h Theta p) + C chi_n^2 Theta >= 0
    ``weighted`` variant:
        Im((A-a)* Theta^2b (H-z)) + Re(gamma Theta^2b (H-z)) - c (A-a)* Theta' Theta^(2b-1) (A-a)
        - c p Theta^2b h p + C f^(-1-m+2 delta) Theta^2b >= 0,  m = min{2 rho, 2 eps', 2 tau}
    with gamma = gamma_constant r^-eps f^(-1-m+2 delta).

    The samples are random interior bumps plus their modulations by
    ``exp(+-i int Re(a) df)``. In the bounded variant n runs up to
    :func:`cutoff_limit`, so chi_n never covers the outer half of the grid
    and samples there get no help from the C term. C is searched in units
    of the sampled form scale.

    :raises NoAdmissibleConstants: with the best minimal quotient seen
    :raises NotSatisfiable: when the grid leaves no room for chi_n
    :rtype: ProbeReport
    """
    grid = geom.grid
    sign = 'upper' if z.imag >= 0 else 'lower'
    if H is None:
        H = build_hamiltonian(spec, grid)
    if A is None:
        A = build_conjugate_A(geom)
    rng = np.random.default_rng(seed)
    real = interior_bumps(grid, n_samples, rng)
    samples = np.vstack([real, _wkb_samples(geom, real, phases)])

    shifted = H.shifted(z)
    h_form = divergence_form(geom.h * theta.values if variant == 'bounded'
                             else geom.h * theta.values ** (2 * beta), grid)
    T, T1 = theta.values, theta.d1
    weight = T ** (2 * beta)

    if variant == 'bounded':
        gamma = bounded_multiplier(z, spec, geom, theta)
        limit = cutoff_limit(geom)
        if limit < 0:
            raise NotSatisfiable("f reaches only %.3g; no chi_n fits inside half of the grid" % geom.f.max())
        if n_cut is None:
            n_cut = limit
        elif n_cut > limit:
            raise ValueError("n_cut=%d lets chi_n reach the outer half of the grid, the limit is %d"
                             % (n_cut, limit))
        cutoffs = [smooth_cutoff(geom.f / 2.0 ** n, geom.cutoff) ** 2 * T for n in range(n_cut + 1)]
    elif variant == 'weighted':
        if phases is None:
            raise ValueError("the weighted probe needs the phase a")
        rates = [2 * spec.rho, 2 * epsilon_prime(spec.epsilon)] + ([2 * spec.tau] if spec.tau else [])
        lower = geom.f ** (-1 - min(rates) + 2 * theta.delta)
        gamma = gamma_constant * geom.r ** -spec.epsilon * lower
        cutoffs = [lower * weight]
        n_cut = 0
    else:
        raise ValueError("Unknown probe variant %s" % variant)

    F0 = np.zeros(len(samples))
    P = np.zeros(len(samples))
    X = np.zeros((n_cut + 1, len(samples)))
    norms = np.zeros(len(samples))
    for k, psi in enumerate(samples):
        Hz = shifted @ psi
        Apsi = A.matrix @ psi
        norms[k] = grid.norm(psi) ** 2
        if variant == 'bounded':
            F0[k] = grid.inner(Apsi, T * Hz).imag + grid.inner(psi, gamma * Hz).real
            P[k] = (grid.inner(psi, T1 * psi) + grid.inner(Apsi, T1 * Apsi) + _form(grid, psi, h_form)).real
        else:
            shifted_A = Apsi - phases.a * psi
            F0[k] = grid.inner(shifted_A, weight * Hz).imag + grid.inner(psi, gamma * weight * Hz).real
            P[k] = (grid.inner(shifted_A, T1 * T ** (2 * beta - 1) * shifted_A) + _form(grid, psi, h_form)).real
        for n, cutoff in enumerate(cutoffs):
            X[n, k] = grid.inner(psi, cutoff * psi).real

    form_scale = float(np.max((np.abs(F0) + np.abs(P)) / norms))
    floor = PROBE_TOLERANCE * form_scale
    c, n, C, quotient, best = _search_constants((F0, P, X), norms, floor, range(n_cut + 1), form_scale)
    if c is None:
        raise NoAdmissibleConstants("no (c, C, n) with minimal Rayleigh quotient >= -%.3e at z=%s nu=%d; best %.3e"
                                    % (floor, z, theta.nu, best), best_quotient=best)

    absorbed = C * X[n]
    share = float(np.max(absorbed / (np.abs(F0 - c * P) + absorbed + floor * norms)))
    report = ProbeReport(z=complex(z), nu=theta.nu, delta=theta.delta, beta=beta, c=c, C=C, n=n,
                         min_rayleigh=quotient, n_samples=len(samples), form_scale=form_scale,
                         passed=True, variant=variant, absorbed_share=share)
    logger.info("positivity probe %s at z=%s: c=%g C=%g n=%d, C term share %.2f", variant, z, c, C, n, share)
    return report


def rayleigh_minimum(z, spec, geom, theta, c, C, n, H=None, A=None, samples=None):
    """
    Minimal Rayleigh quotient of the bounded-variant form for fixed
    constants over ``samples``.
    """
    grid = geom.grid
    if H is None:
        H = build_hamiltonian(spec, grid)
    if A is None:
        A = build_conjugate_A(geom)
    shifted = H.shifted(z)
    gamma = bounded_multiplier(z, spec, geom, theta)
    h_form = divergence_form(geom.h * theta.values, grid)
    cutoff = smooth_cutoff(geom.f / 2.0 ** n, geom.cutoff) ** 2 * theta.values
    T, T1 = theta.values, theta.d1
    quotients = []
    for psi in samples:
        Hz = shifted @ psi
        Apsi = A.matrix @ psi
        value = (grid.inner(Apsi, T * Hz).imag + grid.inner(psi, gamma * Hz).real
                 - c * (grid.inner(psi, T1 * psi) + grid.inner(Apsi, T1 * Apsi) + _form(grid, psi, h_form)).real
                 + C * grid.inner(psi, cutoff * psi).real)
        quotients.append(value / grid.norm(psi) ** 2)
    return float(min(quotients))


def virial_identity_check(H, A, phi, lam, chi, chi_prime, a):
    """
    Both sides of ``2 Im<chi (H - lambda)>_phi = <(Re a) chi'>_phi + Re<chi' (A - a)>_phi``
    for a real cutoff ``chi`` of f and its f-derivative ``chi_prime``.

    :returns: ``(lhs, rhs)``
    """
    grid = H.grid
    residual = H.dot(phi) - lam * phi
    lhs = 2.0 * grid.inner(phi, chi * residual).imag
    rhs = (grid.inner(phi, np.real(a) * chi_prime * phi).real
           + grid.inner(phi, chi_prime * (A.dot(phi) - a * phi)).real)
    return float(lhs), float(rhs)
