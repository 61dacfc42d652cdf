"""
Radial geometry of the repulsive problem.

Tabulates the cutoff ``chi``, the regularized radius ``r``, the flow
coordinate ``f`` and everything derived from them (gradients, Laplacians,
the tensors ``ell`` and ``h`` in their radial reduction, the regularized
weights ``Theta``) on the nodes of a grid.

Two grid modes are understood:

- ``line-1d``: nodes on ``[-R_max, R_max]``, ``|x|`` is the absolute value.
- ``radial``: nodes on ``(0, R_max)``, the node value is the radius itself.
"""
from dataclasses import dataclass, field

import logging
import math

import numpy as np

from exceptions import GridTooCoarse

logger = logging.getLogger(__name__)

CUTOFF_SHAPES = ['exponential-bump', 'polynomial-bump']

# Support radius of eta = 1 - chi(r / r0). |grad r| = 1 there in the radial reduction.
ETA_RADIUS = 2.0

# Relative deviation allowed between finite differences of f and grad f.
FD_TOLERANCE = 5e-2

# Lower bound for the constant inside h when the grid needs none.
H_CONSTANT_FLOOR = 1.0

# Relative slack for pointwise inequalities that hold exactly in exact arithmetic.
ROUNDING_SLACK = 1e-12


@dataclass(frozen=True)
class CutoffSpec:
    t_lo: float = 1.0
    t_hi: float = 2.0
    shape: str = 'exponential-bump'

    def __post_init__(self):
        if self.shape not in CUTOFF_SHAPES:
            raise ValueError("Unknown cutoff shape %s, expected one of %s" % (self.shape, CUTOFF_SHAPES))
        if not self.t_hi > self.t_lo:
            raise ValueError("Cutoff needs t_hi > t_lo, got %s <= %s" % (self.t_hi, self.t_lo))


DEFAULT_CUTOFF = CutoffSpec()


@dataclass(frozen=True)
class GeometryField:
    """
    Scalar fields on the grid nodes. Vector and tensor quantities are stored
    by their radial (line mode: signed) component.
    """
    grid: object
    x: np.ndarray
    abs_x: np.ndarray
    r: np.ndarray
    f: np.ndarray
    grad_r: np.ndarray
    dgrad_r: np.ndarray
    lap_r: np.ndarray
    grad_f: np.ndarray
    dgrad_f: np.ndarray
    lap_f: np.ndarray
    eta: np.ndarray
    eta_tilde: np.ndarray
    ell: np.ndarray
    h: np.ndarray
    h_slack: np.ndarray
    epsilon: float
    C_h: float
    rho: float
    dim: int = 1
    nu_max: int = 0
    cutoff: CutoffSpec = DEFAULT_CUTOFF

    @property
    def spacing(self):
        return self.grid.spacing

    @property
    def size(self):
        return self.x.size


@dataclass(frozen=True)
class ThetaWeight:
    nu: int
    delta: float
    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    bounds: dict = field(default_factory=dict)

    @property
    def R(self):
        return 2.0 ** self.nu


def _psi_jet(s):
    """exp(-1/s) for s > 0 (zero otherwise) with its first two derivatives."""
    s = np.asarray(s, dtype=float)
    value = np.zeros_like(s)
    d1 = np.zeros_like(s)
    d2 = np.zeros_like(s)
    pos = s > 0
    sp = s[pos]
    value[pos] = np.exp(-1.0 / sp)
    d1[pos] = value[pos] / sp ** 2
    d2[pos] = value[pos] * (1.0 / sp ** 4 - 2.0 / sp ** 3)
    return value, d1, d2


def cutoff_jet(t, spec=DEFAULT_CUTOFF):
    """
    Evaluate chi and its first two derivatives.

    :param t: points (scalar or array)
    :param CutoffSpec spec: transition interval and profile

    :returns: ``(chi, chi', chi'')`` as arrays shaped like ``t``
    """
    t = np.asarray(t, dtype=float)
    width = spec.t_hi - spec.t_lo
    s = (t - spec.t_lo) / width
    chi = np.where(s <= 0, 1.0, 0.0)
    d1 = np.zeros_like(t)
    d2 = np.zeros_like(t)

    inside = (s > 0) & (s < 1)
    si = s[inside]
    if spec.shape == 'exponential-bump':
        a, a1, a2 = _psi_jet(1.0 - si)
        a1 = -a1
        b, b1, b2 = _psi_jet(si)
        total = a + b
        total1 = a1 + b1
        num = a1 * b - a * b1
        num1 = a2 * b - a * b2
        chi[inside] = a / total
        d1[inside] = num / total ** 2
        d2[inside] = num1 / total ** 2 - 2.0 * num * total1 / total ** 3
    else:
        chi[inside] = 1.0 - (35 * si ** 4 - 84 * si ** 5 + 70 * si ** 6 - 20 * si ** 7)
        d1[inside] = -140.0 * si ** 3 * (1.0 - si) ** 3
        d2[inside] = -420.0 * si ** 2 * (1.0 - si) ** 2 * (1.0 - 2.0 * si)

    return chi, d1 / width, d2 / width ** 2


def smooth_cutoff(t, spec=DEFAULT_CUTOFF):
    """
    The cutoff chi: one below ``t_lo``, zero above ``t_hi``, non-increasing.

    :returns: a float for scalar ``t``, an array otherwise.
    """
    chi = cutoff_jet(t, spec)[0]
    if np.ndim(t) == 0:
        return float(chi)
    return chi


def flow_coordinate(r, epsilon):
    """
    f = (r^(1-eps/2) - 1) / (1 - eps/2) + 1, or log r + 1 at eps = 2.

    Written through ``expm1`` so that eps close to 2 stays continuous.
    """
    r = np.asarray(r, dtype=float)
    if epsilon == 2:
        return np.log(r) + 1.0
    kappa = 1.0 - epsilon / 2.0
    return np.expm1(kappa * np.log(r)) / kappa + 1.0


def radius_of_flow(f, epsilon):
    """Inverse of :func:`flow_coordinate` on f >= 1."""
    f = np.asarray(f, dtype=float)
    if epsilon == 2:
        return np.exp(f - 1.0)
    kappa = 1.0 - epsilon / 2.0
    return np.exp(np.log1p(kappa * (f - 1.0)) / kappa)


def flow_continuity_gap(r, epsilon):
    """Largest distance between f for ``epsilon`` and f for epsilon = 2."""
    return float(np.max(np.abs(flow_coordinate(r, epsilon) - flow_coordinate(r, 2))))


def regularized_radius(abs_x, cutoff=DEFAULT_CUTOFF):
    """
    r = chi(|x|) + |x| (1 - chi(|x|)) with its first two radial derivatives.
    """
    chi, chi1, chi2 = cutoff_jet(abs_x, cutoff)
    r = chi + abs_x * (1.0 - chi)
    r1 = (1.0 - abs_x) * chi1 + 1.0 - chi
    r2 = (1.0 - abs_x) * chi2 - 2.0 * chi1
    return r, r1, r2


def _h_constant(r, f, grad_r2, ell, epsilon, rho):
    # h >= r^-eps f^-1 ell + C r^-eps f^-2-rho  <=>  C * denom >= numer
    numer = r ** -epsilon * ell / f - r ** (-epsilon / 2 - 1) * (1.0 - grad_r2)
    denom = 2.0 * r ** (-epsilon / 2 - 1) * f ** (-1 - rho) - r ** -epsilon * f ** (-2 - rho)
    c_min = max(0.0, float(np.max(numer / denom)))
    return max(2.0 * c_min, H_CONSTANT_FLOOR), numer, denom


def _check_resolution(f, grad_f, spacing, tolerance):
    fd = np.gradient(f, spacing)
    scale = max(float(np.max(np.abs(grad_f))), 1.0)
    deviation = float(np.max(np.abs(fd[1:-1] - grad_f[1:-1]))) / scale
    if deviation > tolerance:
        raise GridTooCoarse("Finite difference of f deviates from grad f by %.3e (tolerance %.1e) "
                            "at spacing %s" % (deviation, tolerance, spacing))
    return deviation


def build_geometry(grid, epsilon, rho, dim=1, cutoff=DEFAULT_CUTOFF, tolerance=FD_TOLERANCE):
    """
    Tabulate the geometry on ``grid``.

    :param grid: a :class:`model.Grid`
    :param float epsilon: exponent of the repulsive potential, in (0, 2]
    :param float rho: decay rate of the perturbation
    :param int dim: space dimension (only used in radial mode)
    :param CutoffSpec cutoff: profile of chi
    :param float tolerance: allowed relative finite difference deviation

    :returns: the tabulated fields
    :rtype: GeometryField
    """
    if not 0 < epsilon <= 2:
        raise ValueError("epsilon must lie in (0, 2], got %s" % epsilon)

    x = np.asarray(grid.nodes, dtype=float)
    abs_x = np.abs(x)
    r, r1, r2 = regularized_radius(abs_x, cutoff)

    if grid.mode == 'radial':
        grad_r = r1
        dgrad_r = r2
        lap_r = r2 + (dim - 1) * r1 / abs_x
    else:
        dim = 1
        grad_r = np.sign(x) * r1
        dgrad_r = r2
        lap_r = r2

    f = flow_coordinate(r, epsilon)
    f_r = r ** (-epsilon / 2)
    f_rr = -(epsilon / 2) * r ** (-epsilon / 2 - 1)
    grad_f = f_r * grad_r
    dgrad_f = f_rr * grad_r ** 2 + f_r * dgrad_r
    lap_f = f_rr * grad_r ** 2 + f_r * lap_r

    # closed forms where |x| >= 2
    outer = abs_x >= 2.0
    lap_r = np.where(outer, (dim - 1) / np.maximum(r, 1.0), lap_r)
    lap_f = np.where(outer, (dim - epsilon / 2 - 1) * r ** (-epsilon / 2 - 1), lap_f)

    _check_resolution(f, grad_f, grid.spacing, tolerance)

    eta = 1.0 - smooth_cutoff(r / ETA_RADIUS, cutoff)
    grad_r2 = grad_r ** 2
    eta_tilde = np.where(eta > 0, eta / np.where(grad_r2 > 0, grad_r2, 1.0), 0.0)
    ell = 1.0 - eta_tilde * grad_r2

    C_h, numer, denom = _h_constant(r, f, grad_r2, ell, epsilon, rho)
    h = r ** (-epsilon / 2 - 1) * (1.0 - grad_r2 + 2.0 * C_h * f ** (-1 - rho))
    h_slack = C_h * denom - numer

    nu_max = max(int(math.floor(math.log2(float(f.max())))) - 1, 0)
    logger.debug("geometry on %d nodes: f(R_max)=%.3f nu_max=%d C_h=%.3e", x.size, f.max(), nu_max, C_h)

    return GeometryField(grid=grid, x=x, abs_x=abs_x, r=r, f=f, grad_r=grad_r, dgrad_r=dgrad_r,
                         lap_r=lap_r, grad_f=grad_f, dgrad_f=dgrad_f, lap_f=lap_f, eta=eta,
                         eta_tilde=eta_tilde, ell=ell, h=h, h_slack=h_slack, epsilon=epsilon,
                         C_h=C_h, rho=rho, dim=dim, nu_max=nu_max, cutoff=cutoff)


def _theta_bounds(f, R, delta, values, d1, d2, d3):
    low = np.minimum(R, f)
    return {
        'c_lower': float(np.min(values * R)),
        'C_upper': float(np.max(values)),
        'below_f_over_R': bool(np.all(values <= f / R * (1 + ROUNDING_SLACK))),
        'c_prime': float(np.min(d1 / (low ** delta * f ** (-1 - delta) * values))),
        'prime_below_theta_over_f': bool(np.all(d1 <= values / f * (1 + ROUNDING_SLACK))),
        'C_2': float(np.max(-d2 * f ** 2 / values)),
        'second_sign': bool(np.all(d2 <= 0)),
        'C_3': float(np.max(d3 * f ** 3 / values)),
        'third_sign': bool(np.all(d3 >= 0)),
    }


def theta_weight(geom, nu, delta):
    """
    The regularized weight Theta = [1 - (1 + f/R_nu)^-delta] / delta with its
    f-derivatives up to third order.

    The ``bounds`` entry reports the measured constants of the pointwise
    weight inequalities; the boolean entries must all be true.
    """
    if delta <= 0:
        raise ValueError("delta must be positive, got %s" % delta)
    if nu < 0:
        raise ValueError("nu must be non-negative, got %s" % nu)
    if nu > geom.nu_max:
        logger.warning("nu=%d exceeds the last resolved ring nu_max=%d", nu, geom.nu_max)

    R = 2.0 ** nu
    base = 1.0 + geom.f / R
    values = -np.expm1(-delta * np.log1p(geom.f / R)) / delta
    d1 = base ** (-1 - delta) / R
    d2 = -(1 + delta) * base ** (-2 - delta) / R ** 2
    d3 = (1 + delta) * (2 + delta) * base ** (-3 - delta) / R ** 3

    bounds = _theta_bounds(geom.f, R, delta, values, d1, d2, d3)
    return ThetaWeight(nu=nu, delta=delta, values=values, d1=d1, d2=d2, d3=d3, bounds=bounds)


def unit_weight(geom):
    """Theta = 1 with vanishing derivatives."""
    ones = np.ones_like(geom.f)
    zeros = np.zeros_like(geom.f)
    return ThetaWeight(nu=0, delta=0.0, values=ones, d1=zeros, d2=zeros, d3=zeros)


def identity_errors(geom):
    """
    Compare finite differences of f with the closed forms valid for r >= 2.

    :returns: maximal absolute deviations ``{'grad_f': ..., 'lap_f': ...}``
    """
    h = geom.spacing
    f = geom.f
    first = (f[2:] - f[:-2]) / (2 * h)
    second = (f[2:] - 2 * f[1:-1] + f[:-2]) / h ** 2
    inner = slice(1, -1)
    r = geom.r[inner]
    if geom.grid.mode == 'radial':
        second = second + (geom.dim - 1) / geom.abs_x[inner] * first
        direction = np.ones_like(r)
    else:
        direction = np.sign(geom.x[inner])

    mask = geom.abs_x[inner] >= 2.0
    grad_closed = r ** (-geom.epsilon / 2) * direction
    lap_closed = (geom.dim - geom.epsilon / 2 - 1) * r ** (-geom.epsilon / 2 - 1)
    return {
        'grad_f': float(np.max(np.abs(first - grad_closed)[mask])),
        'lap_f': float(np.max(np.abs(second - lap_closed)[mask])),
    }


def refinement_slope(spacings, errors):
    """Least squares slope of log(error) against log(spacing)."""
    return float(np.polyfit(np.log(spacings), np.log(errors), 1)[0])


GEOMETRY_COLUMNS = ['x', 'r', 'f', 'grad_f', 'lap_f', 'ell', 'h']


def geometry_table(geom):
    """Rows of ``GEOMETRY_COLUMNS`` for plotting."""
    columns = [geom.x, geom.r, geom.f, geom.grad_f, geom.lap_f, geom.ell, geom.h]
    return [tuple(float(c[i]) for c in columns) for i in range(geom.size)]
