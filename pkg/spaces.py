"""
Dyadic Besov norms adapted to the flow coordinate.

The grid is cut into rings ``R_nu <= f < R_(nu+1)``, ``R_nu = 2^nu``
(or the same rings in ``r`` for the comparison spaces), and

- ``||psi||_B  = sum_nu R_nu^(1/2) ||F_nu psi||``
- ``||psi||_B* = sup_nu R_nu^(-1/2) ||F_nu psi||``

with the exponent ``eps/4 - 1/2`` instead of ``-1/2`` for the r-based rings.
All integrals are quadrature sums with the grid spacing as cell weight.
"""
from dataclasses import dataclass, field

import logging
import math

import numpy as np

logger = logging.getLogger(__name__)

COORDINATES = ['f-based', 'r-based']

# Relative size of the outermost ring tail that marks a sup as truncated.
TRUNCATION_FRACTION = 0.9

# B*_0 trend: log-log decay slope of the tail over the last rings,
# or ratio to a reference tail, and how many complete rings enter.
BSTAR0_DECAY_SLOPE = 0.2
BSTAR0_RELATIVE = 0.2
BSTAR0_RINGS = 3

# Relative slack for inequalities that are exact in exact arithmetic.
ROUNDING_SLACK = 1e-12


@dataclass(frozen=True)
class DyadicDecomposition:
    coordinate: str
    rings: tuple
    R: tuple
    nu_max: int
    quadrature_weights: np.ndarray
    complete: tuple
    exponent: float
    flow: np.ndarray

    @property
    def spacing(self):
        return float(self.quadrature_weights[0])

    def ring_masses(self, psi):
        """L2 norm of psi on each ring."""
        weighted = self.quadrature_weights * np.abs(psi) ** 2
        return np.array([math.sqrt(float(np.sum(weighted[idx]))) for idx in self.rings])

    def tails(self, psi):
        return np.array(self.R) ** self.exponent * self.ring_masses(psi)


@dataclass
class NormReport:
    coordinate: str
    besov_B: float
    besov_Bstar: float
    tail_sequence: list
    weighted: dict = field(default_factory=dict)
    is_Bstar0_numerically: bool = False
    truncated: bool = False

    def to_record(self):
        record = {
            'coordinate': self.coordinate,
            'besov_B': self.besov_B,
            'besov_Bstar': self.besov_Bstar,
            'is_Bstar0': self.is_Bstar0_numerically,
            'truncated': self.truncated,
        }
        record.update({'H_%g' % s: v for s, v in sorted(self.weighted.items())})
        return record

    def tail_rows(self):
        """Rows ``(nu, R_nu, tail_value)`` for CSV export."""
        return [tuple(entry) for entry in self.tail_sequence]

    @property
    def tail_values(self):
        return np.array([value for _, _, value in self.tail_sequence])


def dyadic_decomposition(geom, coordinate='f-based'):
    """
    Rings of the f (or r) coordinate on the grid of ``geom``.

    Every node lies in exactly one ring since both coordinates are >= 1.
    The outermost ring may be cut by the grid end; ``complete`` records
    which rings are fully resolved.
    """
    if coordinate not in COORDINATES:
        raise ValueError("Unknown coordinate %s, expected one of %s" % (coordinate, COORDINATES))
    if coordinate == 'f-based':
        coord, exponent = geom.f, -0.5
    else:
        coord, exponent = geom.r, geom.epsilon / 4.0 - 0.5

    top = float(coord.max())
    nu_max = int(math.floor(math.log2(top)))
    ring_index = np.floor(np.log2(coord)).astype(int)
    rings = tuple(np.nonzero(ring_index == nu)[0] for nu in range(nu_max + 1))
    R = tuple(2.0 ** nu for nu in range(nu_max + 1))
    complete = tuple(2.0 * R_nu <= top for R_nu in R)
    weights = np.full(coord.shape, geom.spacing)
    return DyadicDecomposition(coordinate=coordinate, rings=rings, R=R, nu_max=nu_max,
                               quadrature_weights=weights, complete=complete, exponent=exponent,
                               flow=geom.f)


def weighted_norm(psi, weight, s, spacing):
    """||w^s psi|| for a positive weight field ``w``."""
    return float(math.sqrt(spacing) * np.linalg.norm(weight ** s * psi))


def bstar0_trend(tails, complete, reference=None, rings=BSTAR0_RINGS):
    """
    Decide numerically whether a tail sequence vanishes at infinity.

    Without ``reference`` the log-log slope of the tail over the last
    complete rings must be at most ``-BSTAR0_DECAY_SLOPE``; a tail that is
    already zero there passes. With a ``reference`` tail (same rings) every
    ratio over those rings must stay below ``BSTAR0_RELATIVE``.
    """
    tails = np.asarray(tails, dtype=float)
    resolved = [nu for nu, ok in enumerate(complete) if ok][-rings:]
    if len(resolved) < 2:
        logger.warning("only %d complete rings, B*_0 trend undecidable", len(resolved))
        return False
    last = tails[resolved]

    if reference is not None:
        ref = np.asarray(reference, dtype=float)[resolved]
        if float(np.max(ref)) == 0:
            return bool(np.all(last == 0))
        return bool(np.all(last <= BSTAR0_RELATIVE * ref))

    if last[-1] == 0:
        return True
    if np.any(last == 0):
        return False
    slope = np.polyfit(np.array(resolved) * math.log(2.0), np.log(last), 1)[0]
    return bool(slope <= -BSTAR0_DECAY_SLOPE)


def besov_norms(psi, decomp, s_values=(), reference=None):
    """
    Besov norms, tail sequence and weighted norms of ``psi``.

    :param psi: grid vector
    :param DyadicDecomposition decomp: rings on the grid of ``psi``
    :param s_values: exponents s for the weighted norms ``||f^s psi||``
    :param reference: optional grid vector whose tail sets the scale of the B*_0 test

    :rtype: NormReport
    """
    masses = decomp.ring_masses(psi)
    R = np.array(decomp.R)
    tails = R ** decomp.exponent * masses
    sup = float(np.max(tails)) if tails.size else 0.0
    reference_tails = decomp.tails(reference) if reference is not None else None

    report = NormReport(
        coordinate=decomp.coordinate,
        besov_B=float(np.sum(R ** -decomp.exponent * masses)),
        besov_Bstar=sup,
        tail_sequence=[(nu, float(R[nu]), float(tails[nu])) for nu in range(decomp.nu_max + 1)],
        is_Bstar0_numerically=bstar0_trend(tails, decomp.complete, reference_tails),
    )
    if sup > 0 and tails[-1] >= TRUNCATION_FRACTION * sup:
        report.truncated = True
        logger.warning("outermost ring %d dominates the B* sup (%.3e of %.3e)", decomp.nu_max, tails[-1], sup)

    for s in s_values:
        report.weighted[float(s)] = weighted_norm(psi, decomp.flow, s, decomp.spacing)
    return report


def besov_norm(psi, decomp):
    return float(np.sum(np.array(decomp.R) ** -decomp.exponent * decomp.ring_masses(psi)))


def besov_star_norm(psi, decomp):
    tails = decomp.tails(psi)
    return float(np.max(tails)) if tails.size else 0.0


def duality_check(psi, phi, decomp):
    """
    :returns: ``(|<psi, phi>|, ||psi||_B ||phi||_B*)``; the first never
        exceeds the second by ring-wise Cauchy-Schwarz
    """
    lhs = abs(decomp.spacing * np.vdot(psi, phi))
    rhs = besov_norm(psi, decomp) * besov_star_norm(phi, decomp)
    return float(lhs), float(rhs)


def embedding_constant(s):
    """(sum_nu R_nu^(1-2s))^(1/2) for s > 1/2."""
    return math.sqrt(1.0 / (1.0 - 2.0 ** (1.0 - 2.0 * s)))


INCLUSION_LABELS = ['H_s', 'B', 'H_1/2', 'L2', 'H_-1/2', 'B*', 'H_-s']


@dataclass
class InclusionChain:
    """
    Norms along ``H_s, B, H_1/2, L2, H_-1/2, B*, H_-s``. ``holds[k]`` says
    ``values[k + 1] <= constants[k] * values[k]``.
    """
    s: float
    values: tuple
    constants: tuple
    holds: tuple

    @property
    def passed(self):
        return all(self.holds)


def inclusion_chain_check(psi, decomp, s):
    """
    Evaluate the inclusion chain of the f-adapted spaces for ``psi``.

    The constants are the ring-wise ones: c_s for the two outer links,
    sqrt(2) where f is compared with R_nu on a ring of ratio two, and 1
    where only f >= 1 enters.

    :rtype: InclusionChain
    """
    if not s > 0.5:
        raise ValueError("s must exceed 1/2, got %s" % s)
    if decomp.coordinate != 'f-based':
        raise ValueError("the inclusion chain is stated for the f-based rings")

    f, h = decomp.flow, decomp.spacing
    values = (
        weighted_norm(psi, f, s, h),
        besov_norm(psi, decomp),
        weighted_norm(psi, f, 0.5, h),
        weighted_norm(psi, f, 0.0, h),
        weighted_norm(psi, f, -0.5, h),
        besov_star_norm(psi, decomp),
        weighted_norm(psi, f, -s, h),
    )
    c_s = embedding_constant(s)
    constants = (c_s, math.sqrt(2.0), 1.0, 1.0, math.sqrt(2.0), c_s)
    holds = tuple(values[k + 1] <= constants[k] * values[k] * (1 + ROUNDING_SLACK) + 1e-300
                  for k in range(len(constants)))
    return InclusionChain(s=float(s), values=values, constants=constants, holds=holds)


@dataclass
class VariantComparison:
    r_based: NormReport
    f_based: NormReport

    @property
    def ratio(self):
        """B*_r norm over B*_f norm."""
        if self.f_based.besov_Bstar == 0:
            return float('nan')
        return self.r_based.besov_Bstar / self.f_based.besov_Bstar


def variant_comparison(psi, geom):
    """
    B* norms of ``psi`` on the r-based and on the f-based rings.

    :returns: ``(r_based, f_based)`` reports, also reachable as a
        :class:`VariantComparison` through :func:`compare_variants`
    """
    r_report = besov_norms(psi, dyadic_decomposition(geom, 'r-based'))
    f_report = besov_norms(psi, dyadic_decomposition(geom, 'f-based'))
    return r_report, f_report


def compare_variants(psi, geom):
    return VariantComparison(*variant_comparison(psi, geom))


def increasing_trend(tails):
    tails = np.asarray(tails, dtype=float)
    return bool(tails.size >= 2 and np.all(np.diff(tails) > 0))


def strict_inclusion_witness(geom):
    """
    A vector with bounded f-based tail whose r-based tail grows, for eps = 2.

    For each complete f-ring nu an indicator of mass sqrt(R_nu) is placed in
    a single r-ring inside it, on the non-negative side of the grid.

    :returns: ``(psi, r_report, f_report, witness_rings)``
    """
    if geom.epsilon != 2:
        raise ValueError("the strict inclusion appears at epsilon = 2 only, got %s" % geom.epsilon)
    f_decomp = dyadic_decomposition(geom, 'f-based')
    psi = np.zeros_like(geom.f)
    witness = []
    for nu, R_nu in enumerate(f_decomp.R):
        if not f_decomp.complete[nu]:
            continue
        r_lo = math.exp(R_nu - 1.0)
        r_hi = math.exp(2.0 * R_nu - 1.0)
        r_ring = 2.0 ** math.ceil(math.log2(r_lo))
        if 2.0 * r_ring > r_hi:
            continue
        nodes = np.nonzero((geom.x >= 0) & (geom.r >= r_ring) & (geom.r < 2.0 * r_ring))[0]
        if nodes.size == 0:
            continue
        psi[nodes] = math.sqrt(R_nu / (nodes.size * geom.spacing))
        witness.append((nu, int(math.log2(r_ring))))

    r_report, f_report = variant_comparison(psi, geom)
    return psi, r_report, f_report, witness
