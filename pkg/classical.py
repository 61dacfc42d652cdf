"""
Classical orbits of ``1/2 |p|^2 - |x|^eps``.

Velocity Verlet with a fixed step; escape rates are read off fits of
``log|x|`` against ``t`` (exponential, eps = 2) or ``log t`` (power,
eps < 2).
"""
from dataclasses import dataclass

import logging
import math

import numpy as np

from exceptions import OriginPassage, Undecided
from geometry import flow_coordinate, regularized_radius

logger = logging.getLogger(__name__)

# |x| below this many steps counts as passing the origin for eps < 2.
ORIGIN_STEPS = 10.0

# Coefficient of determination a growth model needs to be accepted.
R_SQUARED_FLOOR = 0.999
# An orbit is classified only once |x| grew by this factor.
ESCAPE_FACTOR = 10.0

ORBIT_COLUMNS = ['t', 'x', 'p', 'E', 'y_over_t']


def force(x, epsilon):
    """eps |x|^(eps-2) x, the gradient of |x|^eps."""
    norm = np.linalg.norm(x)
    if norm == 0:
        return np.zeros_like(x)
    return epsilon * norm ** (epsilon - 2.0) * x


def energy(x, p, epsilon):
    return 0.5 * float(np.dot(p, p)) - float(np.linalg.norm(x)) ** epsilon


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    momenta: np.ndarray
    energy_drift: float
    epsilon: float
    dt: float

    @property
    def radii(self):
        return np.linalg.norm(self.positions, axis=1)

    def rows(self):
        """``(t, x, p, E, y_over_t)`` rows; x and p are the first components."""
        y = escape_coordinate(self)
        rows = []
        for k, t in enumerate(self.times):
            E = energy(self.positions[k], self.momenta[k], self.epsilon)
            y_over_t = float(np.linalg.norm(y[k]) / t) if t > 0 else float('nan')
            rows.append((float(t), float(self.positions[k][0]), float(self.momenta[k][0]), E, y_over_t))
        return rows


def _verlet(x, p, epsilon, dt, steps, guard):
    positions = np.empty((steps + 1, x.size))
    momenta = np.empty((steps + 1, x.size))
    positions[0], momenta[0] = x, p
    acceleration = force(x, epsilon)
    for k in range(steps):
        half = p + 0.5 * dt * acceleration
        x = x + dt * half
        if guard and np.linalg.norm(x) < ORIGIN_STEPS * dt:
            raise OriginPassage("|x| = %.3e < %s dt at t=%.4f (eps=%s)"
                                % (np.linalg.norm(x), ORIGIN_STEPS, (k + 1) * dt, epsilon))
        acceleration = force(x, epsilon)
        p = half + 0.5 * dt * acceleration
        positions[k + 1], momenta[k + 1] = x, p
    return positions, momenta


def integrate_orbit(x0, p0, epsilon, T, dt):
    """
    Velocity Verlet for ``x' = p, p' = eps |x|^(eps-2) x`` up to time T.

    The energy drift is ``max |E(t) - E(0)|`` relative to the largest
    kinetic energy along the orbit.

    :raises OriginPassage: for eps < 2 when the orbit comes within
        ``ORIGIN_STEPS`` steps of the origin
    :rtype: Trajectory
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    p = np.atleast_1d(np.asarray(p0, dtype=float))
    guard = epsilon < 2
    if guard and np.linalg.norm(x) < ORIGIN_STEPS * dt:
        raise OriginPassage("orbit launched at |x| = %.3e, too close to the origin" % np.linalg.norm(x))
    steps = int(round(T / dt))
    positions, momenta = _verlet(x, p, epsilon, dt, steps, guard)

    kinetic = 0.5 * np.sum(momenta ** 2, axis=1)
    energies = kinetic - np.linalg.norm(positions, axis=1) ** epsilon
    drift = float(np.max(np.abs(energies - energies[0])) / max(np.max(kinetic), 1e-300))
    logger.debug("orbit eps=%s T=%s dt=%s: energy drift %.3e", epsilon, T, dt, drift)
    return Trajectory(times=dt * np.arange(steps + 1), positions=positions, momenta=momenta,
                      energy_drift=drift, epsilon=float(epsilon), dt=float(dt))


def halving_error(x0, p0, epsilon, T, dt):
    """Relative change of x(T) when the step is halved."""
    coarse = integrate_orbit(x0, p0, epsilon, T, dt).positions[-1]
    fine = integrate_orbit(x0, p0, epsilon, T, dt / 2.0).positions[-1]
    return float(np.linalg.norm(coarse - fine) / np.linalg.norm(fine))


def time_reversal_error(traj):
    """Integrate back from the end point with reversed momentum; distance to the start."""
    back = integrate_orbit(traj.positions[-1], -traj.momenta[-1], traj.epsilon, traj.times[-1], traj.dt)
    scale = max(np.linalg.norm(traj.positions[0]), np.linalg.norm(traj.momenta[0]), 1e-300)
    return float((np.linalg.norm(back.positions[-1] - traj.positions[0])
                  + np.linalg.norm(back.momenta[-1] + traj.momenta[0])) / scale)


def exact_orbit_eps2(x0, v0, t):
    """Closed form for eps = 2: ``x'' = 2x``."""
    t = np.asarray(t, dtype=float)
    root = math.sqrt(2.0)
    return 0.5 * (x0 + v0 / root) * np.exp(root * t) + 0.5 * (x0 - v0 / root) * np.exp(-root * t)


def self_similar_data(epsilon, t0, direction=1.0):
    """
    ``(x(t0), p(t0))`` of the orbit ``x(t) = c t^alpha direction`` with
    ``alpha = 1 / (1 - eps/2)`` and ``c = (1/2 (2 - eps)^2)^(1/(2 - eps))``.
    """
    if not 0 < epsilon < 2:
        raise ValueError("self-similar orbits exist for 0 < eps < 2, got %s" % epsilon)
    alpha = 1.0 / (1.0 - epsilon / 2.0)
    c = (0.5 * (2.0 - epsilon) ** 2) ** (1.0 / (2.0 - epsilon))
    direction = np.atleast_1d(np.asarray(direction, dtype=float))
    direction = direction / np.linalg.norm(direction)
    return c * t0 ** alpha * direction, c * alpha * t0 ** (alpha - 1.0) * direction


def escape_coordinate(traj):
    """y = |x|^(1 - eps/2) x/|x| for eps < 2, log|x| x/|x| for eps = 2."""
    radii = traj.radii[:, None]
    direction = traj.positions / np.where(radii > 0, radii, 1.0)
    if traj.epsilon == 2:
        return np.log(np.where(radii > 0, radii, 1.0)) * direction
    return radii ** (1.0 - traj.epsilon / 2.0) * direction


def _last_decade(traj):
    T = traj.times[-1]
    return traj.times >= T / 10.0


def _plateau(values):
    """Mean and relative spread ``(max - min) / mean``."""
    mean = float(np.mean(values))
    return mean, float((np.max(values) - np.min(values)) / mean) if mean else float('inf')


def f_over_t_plateau(traj):
    """Mean of f(r(x(t)))/t over the last decade and its relative spread."""
    window = _last_decade(traj)
    r = regularized_radius(traj.radii[window])[0]
    return _plateau(flow_coordinate(r, traj.epsilon) / traj.times[window])


def _linear_fit(u, v):
    slope, intercept = np.polyfit(u, v, 1)
    residual = v - (slope * u + intercept)
    total = np.sum((v - np.mean(v)) ** 2)
    return float(slope), float(1.0 - np.sum(residual ** 2) / total) if total > 0 else 0.0


@dataclass
class RateFit:
    """Unpacks as ``(growth_class, y_over_t_plateau)``."""
    growth_class: str
    rate: float
    r_squared: float
    y_over_t_plateau: float
    plateau_variation: float

    def __iter__(self):
        return iter((self.growth_class, self.y_over_t_plateau))


def asymptotic_rate(traj):
    """
    Classify the escape over the last decade of time.

    :raises Undecided: if the orbit does not escape or neither fit reaches
        ``R_SQUARED_FLOOR``
    :rtype: RateFit
    """
    radii = traj.radii
    if not radii[-1] > ESCAPE_FACTOR * radii[0]:
        raise Undecided("orbit did not escape: |x(T)| = %.3e, |x(0)| = %.3e" % (radii[-1], radii[0]))
    window = _last_decade(traj) & (traj.times > 0)
    t, log_r = traj.times[window], np.log(radii[window])

    exponential = _linear_fit(t, log_r)
    power = _linear_fit(np.log(t), log_r)
    y = np.linalg.norm(escape_coordinate(traj)[window], axis=1)
    plateau, variation = _plateau(y / t)

    if exponential[1] >= power[1] and exponential[1] >= R_SQUARED_FLOOR:
        fit = RateFit('exponential', exponential[0], exponential[1], plateau, variation)
    elif power[1] >= R_SQUARED_FLOOR:
        fit = RateFit('power(%.4f)' % power[0], power[0], power[1], plateau, variation)
    else:
        raise Undecided("neither fit is good enough: R^2 exponential %.5f, power %.5f"
                        % (exponential[1], power[1]))
    logger.info("eps=%s orbit escapes with %s, |y|/t plateau %.4f", traj.epsilon, fit.growth_class, plateau)
    return fit
