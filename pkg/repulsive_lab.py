#!/usr/bin/env python
# repulsive Schroedinger operator laboratory
"""
Command line runner for the laboratory.

Every subcommand reads one YAML problem instance (the shipped reference
instance when ``--config`` is not given), runs one experiment and writes

- ``<prefix>manifest.json``: config hash, instance summary, output paths,
- ``<prefix><subcommand>_records.csv``: one row per measured point,
- ``<prefix><subcommand>_report.json``: verdicts and summary numbers,
- ``<prefix><subcommand>_<kind>.csv``: tidy plot data, when the experiment has any.

Exit status is 0 when every requested check passed, 2 when a check failed
and 1 on an error.
"""
from dataclasses import asdict, dataclass, field

import argparse
import copy
import csv
import datetime
import hashlib
import json
import logging
import math
import os
import sys
import tempfile

import numpy as np
import yaml

from classical import ORBIT_COLUMNS, asymptotic_rate, f_over_t_plateau, integrate_orbit
from exceptions import ConfigError, InvalidArgument, LaboratoryError, NoAdmissibleConstants, Undecided
from geometry import FD_TOLERANCE, GEOMETRY_COLUMNS, build_geometry, geometry_table, identity_errors, theta_weight
from model import audit_conditions, build_hamiltonian, critical_exponent, make_grid, make_potential, select_r_lambda
from operators import (
    build_conjugate_A, build_phases, commutator_identity_check, factorization_check, positivity_probe,
)
from radiation import (
    beta_schedule, beta_sweep, generalized_eigenfunction, rellich_probe, sommerfeld_cross_check,
    sommerfeld_solve, sommerfeld_verify,
)
from resolvent import (
    SWEEP_COLUMNS, besov_bound_sweep, gamma_schedule, holder_exponent, holder_pairs, lap_extrapolate,
    limit_residual, make_source, uniformly_bounded,
)
from spaces import besov_star_norm, dyadic_decomposition

logger = logging.getLogger(__name__)

VERSION = '0.3.0'

REFERENCE_INSTANCE_PATH = os.path.join(os.path.dirname(os.path.realpath(__file__)), 'reference_instance.yaml')
with open(REFERENCE_INSTANCE_PATH, 'r') as handle:
    REFERENCE_INSTANCE = yaml.load(handle, Loader=yaml.SafeLoader)

OUTPUT_ENVIRONMENT = 'REPULSIVE_LAB_OUTPUT'

DEFAULT_MODEL = {
    'epsilon': 1.0,
    'dim': 1,
    'sector': 0,
    'q1': '0',
    'q2': '0',
    'rho': 1.0,
    'tau': None,
}
DEFAULT_GRID = {
    'mode': 'line-1d',
    'spacing': 1.0 / 64,
    'R_max': 64.0,
    'boundary': 'dirichlet',
    'absorber': 0.25,
}
DEFAULT_SWEEP = {
    'lambda': 1.0,
    'gammas': gamma_schedule(),
    'interval': [0.5, 2.0],
    'betas': None,
    'deltas': [0.25, 0.5, 0.9],
    'nus': [0, 1, 2],
    's': 1.0,
    'n_probe': 32,
    'n_samples': 200,
    'psi': 'gaussian',
}
DEFAULT_OUTPUT = {
    'directory': 'results',
    'prefix': '',
}
DEFAULT_SEED = 0

CONFIG_ALLOWED_SECTIONS = ['model', 'grid', 'sweep', 'output', 'seed']
MODEL_ALLOWED_KEYS = ['epsilon', 'dim', 'sector', 'q1', 'q2', 'rho', 'tau']
GRID_ALLOWED_KEYS = ['mode', 'spacing', 'R_max', 'boundary', 'absorber']
SWEEP_ALLOWED_KEYS = ['lambda', 'gammas', 'interval', 'betas', 'deltas', 'nus', 's', 'n_probe', 'n_samples', 'psi']
OUTPUT_ALLOWED_KEYS = ['directory', 'prefix']


def _optional(convert):
    def wrapped(value):
        return None if value is None else convert(value)
    return wrapped


def _float_list(value):
    return [float(v) for v in value]


def _int_list(value):
    return [int(v) for v in value]


def _pair(value):
    lo, hi = (float(v) for v in value)
    if not lo < hi:
        raise ValueError("expected lo < hi, got (%s, %s)" % (lo, hi))
    return [lo, hi]


KEY_CONVERTERS = {
    'model': {'epsilon': float, 'dim': int, 'sector': int, 'q1': str, 'q2': str, 'rho': float,
              'tau': _optional(float)},
    'grid': {'mode': str, 'spacing': float, 'R_max': float, 'boundary': str, 'absorber': float},
    'sweep': {'lambda': float, 'gammas': _float_list, 'interval': _pair, 'betas': _optional(_float_list),
              'deltas': _float_list, 'nus': _int_list, 's': float, 'n_probe': int, 'n_samples': int,
              'psi': str},
    'output': {'directory': str, 'prefix': str},
}

SECTION_SPEC = [
    ('model', MODEL_ALLOWED_KEYS, DEFAULT_MODEL),
    ('grid', GRID_ALLOWED_KEYS, DEFAULT_GRID),
    ('sweep', SWEEP_ALLOWED_KEYS, DEFAULT_SWEEP),
    ('output', OUTPUT_ALLOWED_KEYS, DEFAULT_OUTPUT),
]


def validate_config(raw):
    """
    Merge a parsed config over the defaults, section by section.

    :raises ConfigError: naming the dotted key path of an unknown section,
        unknown key or unusable value
    """
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("the config must be a mapping of sections", '<root>')
    for section in raw:
        if section not in CONFIG_ALLOWED_SECTIONS:
            raise ConfigError("unknown section, expected one of %s" % CONFIG_ALLOWED_SECTIONS, str(section))

    config = {}
    for section, allowed, defaults in SECTION_SPEC:
        values = raw.get(section) or {}
        if not isinstance(values, dict):
            raise ConfigError("section must be a mapping", section)
        merged = copy.deepcopy(defaults)
        for key, value in values.items():
            path = '%s.%s' % (section, key)
            if key not in allowed:
                raise ConfigError("unknown key, expected one of %s" % allowed, path)
            try:
                merged[key] = KEY_CONVERTERS[section][key](value)
            except (TypeError, ValueError) as err:
                raise ConfigError("unusable value %r (%s)" % (value, err), path)
        config[section] = merged

    try:
        config['seed'] = int(raw.get('seed', DEFAULT_SEED))
    except (TypeError, ValueError):
        raise ConfigError("seed must be an integer, got %r" % raw.get('seed'), 'seed')
    if not 0 <= config['grid']['absorber'] < 1:
        raise ConfigError("absorber must lie in [0, 1)", 'grid.absorber')

    if os.environ.get(OUTPUT_ENVIRONMENT):
        config['output']['directory'] = os.environ[OUTPUT_ENVIRONMENT]
    return config


def load_config(path=None):
    """
    Read and validate a YAML config; the reference instance when ``path`` is None.

    :raises ConfigError: also for unreadable files and broken YAML
    """
    if path is None:
        return validate_config(copy.deepcopy(REFERENCE_INSTANCE))
    try:
        with open(path, 'r') as handle:
            raw = yaml.load(handle, Loader=yaml.SafeLoader)
    except yaml.YAMLError as err:
        raise ConfigError("%s is not valid YAML (%s)" % (path, err), '<root>')
    except OSError as err:
        raise ConfigError("cannot read %s (%s)" % (path, err), '<root>')
    return validate_config(raw)


def config_hash(config):
    """SHA-256 of the canonical JSON dump."""
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


@dataclass
class Instance:
    spec: object
    grid: object
    geom: object


def build_instance(config):
    model, grid_config = config['model'], config['grid']
    spec = make_potential(epsilon=model['epsilon'], dim=model['dim'], sector=model['sector'], q1=model['q1'],
                          q2=model['q2'], rho=model['rho'], tau=model['tau'])
    grid = make_grid(grid_config['mode'], grid_config['spacing'], grid_config['R_max'], grid_config['boundary'])
    geom = build_geometry(grid, spec.epsilon, spec.rho, spec.dim)
    return Instance(spec=spec, grid=grid, geom=geom)


def _builtin(value):
    """numpy scalars and arrays to plain Python for JSON."""
    if isinstance(value, dict):
        return {str(k): _builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return _builtin(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, complex):
        return {'real': value.real, 'imag': value.imag}
    return value


def _atomic_write(path, write):
    """
    Write through a temporary file in the target directory and move it in
    place; a ``<path>.failed`` marker is left when ``write`` raises.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle = tempfile.NamedTemporaryFile('w', delete=False, dir=directory, newline='', suffix='.tmp')
    try:
        with handle:
            write(handle)
        os.replace(handle.name, path)
    except Exception as err:
        if os.path.exists(handle.name):
            os.remove(handle.name)
        with open(path + '.failed', 'w') as marker:
            marker.write("%s\n" % err)
        raise
    logger.info("wrote %s", path)
    return path


def write_json(path, data):
    return _atomic_write(path, lambda handle: json.dump(_builtin(data), handle, indent=2, sort_keys=True))


def write_csv(path, header, rows):
    def write(handle):
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow(_builtin(list(row)))
    return _atomic_write(path, write)


def _as_dict(record):
    return record.to_record() if hasattr(record, 'to_record') else dict(record)


def _rows_by_header(header, records):
    return [[_as_dict(record).get(name) for name in header] for record in records]


PLOT_KINDS = ['gamma-sweep', 'residual', 'tail', 'holder', 'orbit']
PLOT_COLUMNS = {
    'gamma-sweep': ['gamma', 'bound_ratio', 'lam', 'sign', 'psi_id'],
    'residual': ['beta', 'gamma', 'out_ratio', 'in_ratio', 'far_ratio', 'inside_range'],
    'tail': ['label', 'nu', 'R', 'tail'],
    'holder': ['row', 'distance', 'norm', 'norm_momentum', 'value'],
    'orbit': ORBIT_COLUMNS,
}


def emit_plot_data(records, kind):
    """
    Tidy plot rows for one of ``PLOT_KINDS``.

    ``tail`` records are ``(label, [(nu, R_nu, value), ...])`` pairs,
    ``holder`` records are :class:`resolvent.HolderFit` objects and
    ``orbit`` records are :class:`classical.Trajectory` objects.

    :returns: ``(header, rows)``; an empty record set gives no rows
    """
    if kind not in PLOT_KINDS:
        raise ValueError("Unknown plot kind %s, expected one of %s" % (kind, PLOT_KINDS))
    header = PLOT_COLUMNS[kind]
    rows = []
    if kind == 'gamma-sweep':
        rows = sorted(_rows_by_header(header, records), key=lambda row: row[0])
    elif kind == 'residual':
        rows = sorted(_rows_by_header(header, records), key=lambda row: (row[0], row[1]))
    elif kind == 'tail':
        for label, tails in records:
            rows.extend([label, nu, R, value] for nu, R, value in tails)
    elif kind == 'holder':
        for fit in records:
            rows.extend(['point', d, n, m, None] for d, n, m in fit.rows())
            for name in ('s', 'omega', 'omega_momentum', 'floor'):
                rows.append([name, None, None, None, getattr(fit, name)])
    else:
        for trajectory in records:
            rows.extend(list(row) for row in trajectory.rows())
    return header, rows


@dataclass
class RunManifest:
    config_hash: str
    subcommand: str
    spec: dict
    grid: dict
    timestamp: str
    outputs: list = field(default_factory=list)
    version: str = VERSION
    seed: int = DEFAULT_SEED
    status: str = 'running'


@dataclass
class RunOutcome:
    header: list
    records: list
    report: dict
    passed: bool
    plots: list = field(default_factory=list)


def _tail_rows(decomp, phi):
    return [(nu, R, float(v)) for nu, (R, v) in enumerate(zip(decomp.R, decomp.tails(phi)))]


def _option(options, key, default):
    value = options.get(key)
    return default if value is None else value


def _lambda(config, options):
    return float(_option(options, 'lam', config['sweep']['lambda']))


def _source(config, options, geom):
    name = _option(options, 'psi', config['sweep']['psi'])
    return name, make_source(name, geom)


def _run_geometry(config, instance, options):
    geom = instance.geom
    errors = identity_errors(geom)
    weights = []
    for nu in config['sweep']['nus']:
        for delta in config['sweep']['deltas']:
            bounds = theta_weight(geom, nu, delta).bounds
            weights.append(dict(bounds, nu=nu, delta=delta, resolved=nu <= geom.nu_max))
    checks = [v for w in weights if w['resolved'] for v in w.values() if isinstance(v, bool)]
    passed = all(value <= FD_TOLERANCE for value in errors.values()) and all(checks)
    report = {'identity_errors': errors, 'weights': weights, 'nu_max': geom.nu_max, 'C_h': geom.C_h}
    return RunOutcome(GEOMETRY_COLUMNS, geometry_table(geom), report, passed)


def _run_classical(config, instance, options):
    epsilon = _option(options, 'epsilon', config['model']['epsilon'])
    x0 = _option(options, 'x0', [1.0])
    p0 = _option(options, 'p0', [1.0])
    trajectory = integrate_orbit(x0, p0, epsilon, _option(options, 'T', 100.0), _option(options, 'dt', 1e-2))
    report = {'epsilon': epsilon, 'energy_drift': trajectory.energy_drift}
    try:
        fit = asymptotic_rate(trajectory)
    except Undecided as err:
        report['undecided'] = str(err)
        passed = False
    else:
        f_plateau, f_variation = f_over_t_plateau(trajectory)
        report.update({'growth_class': fit.growth_class, 'rate': fit.rate, 'r_squared': fit.r_squared,
                       'y_over_t_plateau': fit.y_over_t_plateau, 'plateau_variation': fit.plateau_variation,
                       'f_over_t_plateau': f_plateau, 'f_over_t_variation': f_variation})
        passed = fit.plateau_variation < 0.05 and f_variation < 0.05
    return RunOutcome(ORBIT_COLUMNS, trajectory.rows(), report, passed, plots=[('orbit', [trajectory])])


def _run_resolvent_sweep(config, instance, options):
    lam = _lambda(config, options)
    gammas = _option(options, 'gammas', config['sweep']['gammas'])
    name, psi = _source(config, options, instance.geom)
    records = besov_bound_sweep(instance.spec, instance.grid, lam, gammas, psi, psi_id=name,
                                sign=_option(options, 'sign', 'upper'), absorber=config['grid']['absorber'],
                                geom=instance.geom)
    bounded = uniformly_bounded(records)
    report = {'lam': lam, 'psi': name, 'uniformly_bounded': bounded,
              'bound_ratios': [record.bound_ratio for record in records]}
    return RunOutcome(SWEEP_COLUMNS, _rows_by_header(SWEEP_COLUMNS, records), report, bounded,
                      plots=[('gamma-sweep', records)])


RESIDUAL_COLUMNS = ['lam', 'gamma', 'beta', 'out_residual', 'in_residual', 'weighted_h_form', 'rhs_norm',
                    'out_ratio', 'in_ratio', 'far_ratio', 'inside_range']


def _run_radiation(config, instance, options):
    spec = instance.spec
    lam = _lambda(config, options)
    _, psi = _source(config, options, instance.geom)
    betas = [0.0]
    if options.get('beta_sweep'):
        betas = config['sweep']['betas'] or beta_schedule(critical_exponent(spec))
    sweep = beta_sweep(spec, instance.geom, lam, psi, config['sweep']['gammas'], betas,
                       absorber=config['grid']['absorber'])
    report = {'lam': lam, 'beta_c': critical_exponent(spec), 'verdicts': sweep.verdicts}
    return RunOutcome(RESIDUAL_COLUMNS, _rows_by_header(RESIDUAL_COLUMNS, sweep.rows), report, sweep.passed,
                      plots=[('residual', sweep.rows)])


def _run_lap(config, instance, options):
    spec, grid, geom = instance.spec, instance.grid, instance.geom
    lam = _lambda(config, options)
    _, psi = _source(config, options, geom)
    absorber = config['grid']['absorber']
    limits = {sign: lap_extrapolate(spec, grid, lam, psi, sign=sign, absorber=absorber, geom=geom)
              for sign in ('upper', 'lower')}
    decomp = dyadic_decomposition(geom)
    H = build_hamiltonian(spec, grid, absorber=absorber)
    sign_gap = besov_star_norm(limits['upper'].phi - limits['lower'].phi, decomp)

    rows = []
    for sign, limit in sorted(limits.items()):
        rows.extend([sign, gamma, difference] for gamma, difference in zip(limit.gammas[1:], limit.differences))
    report = {
        'lam': lam,
        'sign_gap_Bstar': sign_gap,
        'limit_residual': limit_residual(H, geom, lam, limits['upper'].phi, psi),
    }
    for sign, limit in limits.items():
        report[sign] = {'error': limit.error, 'order': limit.order}
    tails = [(sign, _tail_rows(decomp, limit.phi)) for sign, limit in sorted(limits.items())]
    return RunOutcome(['sign', 'gamma', 'difference'], rows, report, sign_gap > 0, plots=[('tail', tails)])


def _run_sommerfeld(config, instance, options):
    spec, geom = instance.spec, instance.geom
    lam = _lambda(config, options)
    _, psi = _source(config, options, geom)
    scheme = _option(options, 'scheme', 'discrete')
    if instance.grid.boundary != 'radiation':
        logger.info("grid.boundary is %s; the outgoing solve installs its own boundary rows", instance.grid.boundary)

    H = build_hamiltonian(spec, instance.grid)
    phases = build_phases(complex(lam), spec, geom, select_r_lambda(spec, lam, geom))
    phi = sommerfeld_solve(H, lam, psi, phases, geom, scheme)
    outgoing = sommerfeld_verify(phi, lam, psi, 0.0, spec, geom, H, phases)
    incoming = sommerfeld_verify(np.conj(phi), lam, psi, 0.0, spec, geom, H, phases)
    report = {'lam': lam, 'scheme': scheme, 'outgoing': outgoing.to_record(), 'incoming': incoming.to_record()}
    passed = outgoing.passed and not incoming.decay_passed

    if options.get('compare_extrapolation'):
        check = sommerfeld_cross_check(spec, geom, lam, psi, absorber=config['grid']['absorber'], scheme=scheme)
        report['cross_check'] = check.to_record()
        passed = passed and check.passed

    decomp = dyadic_decomposition(geom)
    tails = _tail_rows(decomp, phi)
    return RunOutcome(['nu', 'R', 'tail'], tails, report, passed, plots=[('tail', [('outgoing', tails)])])


def _run_commutator(config, instance, options):
    spec, grid, geom = instance.spec, instance.grid, instance.geom
    sweep = config['sweep']
    seed = config['seed']
    lam = _lambda(config, options)
    z = complex(lam, _option(options, 'gamma', 0.1))
    H = build_hamiltonian(spec, grid)
    A = build_conjugate_A(geom)
    phases = build_phases(z, spec, geom, select_r_lambda(spec, lam, geom))
    beta = 0.25 * critical_exponent(spec)

    records = []
    passed = True
    for nu in sweep['nus']:
        for delta in sweep['deltas']:
            theta = theta_weight(geom, nu, delta)
            record = commutator_identity_check(spec, geom, theta, beta, H, A, seed=seed).to_record()
            for variant in ('bounded', 'weighted'):
                try:
                    probe = positivity_probe(z, spec, geom, theta, beta, variant=variant, phases=phases, H=H, A=A,
                                             n_samples=sweep['n_samples'], seed=seed)
                    record['%s_min_rayleigh' % variant] = probe.min_rayleigh
                    record['%s_constants' % variant] = '%g/%g/%d' % (probe.c, probe.C, probe.n)
                    passed = passed and probe.passed
                except NoAdmissibleConstants as err:
                    record['%s_min_rayleigh' % variant] = err.best_quotient
                    record['%s_constants' % variant] = None
                    passed = False
            records.append(record)

    factorization = factorization_check(z, spec, geom, phases, H, seed=seed)
    report = {'z': z, 'factorization': factorization.to_record(), 'eikonal_exponent': phases.eikonal_exponent,
              'phase_bounds': phases.bounds}
    header = sorted(set().union(*(record.keys() for record in records))) if records else []
    return RunOutcome(header, _rows_by_header(header, records), report, passed)


def _run_rellich(config, instance, options):
    spec, geom = instance.spec, instance.geom
    lam = _lambda(config, options)
    verdict = rellich_probe(lam, spec, geom)
    probe = generalized_eigenfunction(lam, spec, geom)
    report = {'rellich': verdict.to_record(), 'eigenfunction': probe.to_record()}
    decomp = dyadic_decomposition(geom)
    tails = _tail_rows(decomp, probe.phi)
    passed = verdict.passed and probe.nonvanishing
    return RunOutcome(['nu', 'R', 'tail'], tails, report, passed, plots=[('tail', [('outgoing', tails)])])


def _run_audit(config, instance, options):
    report = audit_conditions(instance.spec, instance.geom, interval=config['sweep']['interval'])
    rows = sorted(report.r_lambda_table.items())
    return RunOutcome(['lam', 'r_lambda'], rows, report.to_record(), all(report.passed.values()))


HOLDER_OFFSETS = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1]


def _run_holder(config, instance, options):
    sweep = config['sweep']
    lam = _lambda(config, options)
    s = _option(options, 's', sweep['s'])
    pairs = holder_pairs(lam, _option(options, 'gamma', 0.1), HOLDER_OFFSETS)
    fit = holder_exponent(instance.spec, instance.geom, pairs, s, absorber=config['grid']['absorber'],
                          probes=sweep['n_probe'], seed=config['seed'])
    report = asdict(fit)
    passed = fit.omega >= fit.floor - 0.05
    return RunOutcome(['distance', 'norm', 'norm_momentum'], fit.rows(), report, passed, plots=[('holder', [fit])])


SUBCOMMANDS = {
    'geometry': _run_geometry,
    'classical': _run_classical,
    'resolvent-sweep': _run_resolvent_sweep,
    'radiation': _run_radiation,
    'lap': _run_lap,
    'sommerfeld': _run_sommerfeld,
    'commutator': _run_commutator,
    'rellich-probe': _run_rellich,
    'audit': _run_audit,
    'holder': _run_holder,
}

# Subcommands that do not discretize the instance.
GRID_FREE = ['classical']


EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CHECK_FAILED = 2


def _experiment(config, subcommand, options):
    instance = None if subcommand in GRID_FREE else build_instance(config)
    if instance is not None and subcommand != 'audit' and not options.get('skip_audit'):
        audit = audit_conditions(instance.spec, instance.geom, interval=config['sweep']['interval'])
        if not all(audit.passed.values()):
            logger.error("instance fails the decay audit: %s", audit.to_record())
            return RunOutcome(['lam', 'r_lambda'], [], {'audit': audit.to_record()}, False)
    return SUBCOMMANDS[subcommand](config, instance, options)


def execute(config_path, subcommand, options=None):
    """
    Run one subcommand and persist its manifest, records and report.

    A run that raises after its config loaded still leaves a manifest with
    status ``error``. A ``ValueError`` from a subcommand is re-raised as
    :class:`InvalidArgument`.

    :returns: ``(RunOutcome, RunManifest)``
    """
    if subcommand not in SUBCOMMANDS:
        raise ValueError("Unknown subcommand %s, expected one of %s" % (subcommand, sorted(SUBCOMMANDS)))
    options = dict(options or {})
    config = load_config(config_path)
    if options.get('seed') is not None:
        config['seed'] = int(options['seed'])

    output = config['output']
    prefix = os.path.join(output['directory'], output['prefix'])
    manifest = RunManifest(config_hash=config_hash(config), subcommand=subcommand, spec=config['model'],
                           grid=config['grid'], timestamp=datetime.datetime.now(datetime.timezone.utc).isoformat(),
                           seed=config['seed'])
    try:
        outcome = _experiment(config, subcommand, options)
    except (LaboratoryError, ValueError) as err:
        manifest.status = 'error'
        write_json(prefix + 'manifest.json', asdict(manifest))
        if isinstance(err, LaboratoryError):
            raise
        raise InvalidArgument("%s: %s" % (subcommand, err)) from err

    base = '%s%s' % (prefix, subcommand)
    records_path = _option(options, 'out', base + '_records.csv')
    manifest.outputs.append(write_csv(records_path, outcome.header, outcome.records))
    report = dict(outcome.report, passed=outcome.passed, config_hash=manifest.config_hash)
    manifest.outputs.append(write_json(base + '_report.json', report))
    for kind, records in outcome.plots:
        header, rows = emit_plot_data(records, kind)
        manifest.outputs.append(write_csv('%s_%s.csv' % (base, kind), header, rows))

    manifest.status = 'passed' if outcome.passed else 'failed'
    write_json(prefix + 'manifest.json', asdict(manifest))
    return outcome, manifest


def run(config_path, subcommand, options=None):
    """
    :func:`execute` turned into an exit status: ``EXIT_OK``,
    ``EXIT_CHECK_FAILED`` or ``EXIT_ERROR`` for a :class:`LaboratoryError`.
    """
    try:
        outcome, manifest = execute(config_path, subcommand, options)
    except LaboratoryError as err:
        logger.error("%s: %s", subcommand, err)
        return EXIT_ERROR
    if not outcome.passed:
        logger.warning("%s: checks failed, see %s", subcommand, manifest.outputs[1])
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _float_csv(text):
    return [float(v) for v in text.split(',') if v.strip()]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='YAML problem instance (default: the shipped reference instance)')
    common.add_argument('-v', '--verbose', action='count', default=0, help='repeat for more log output')
    common.add_argument('--skip-audit', action='store_true', help='do not run the decay audit first')
    common.add_argument('--out', help='path of the records CSV')
    common.add_argument('--seed', type=int, help='override the config seed')

    parser = argparse.ArgumentParser(prog='repulsive_lab', description=__doc__.strip().splitlines()[0])
    commands = parser.add_subparsers(dest='subcommand', metavar='SUBCOMMAND')
    commands.required = True

    def command(name, help_text):
        return commands.add_parser(name, parents=[common], help=help_text)

    command('geometry', 'flow coordinate fields, identities and weight bounds')
    classical = command('classical', 'classical escape orbit')
    classical.add_argument('--epsilon', type=float)
    classical.add_argument('--x0', type=float, nargs='+')
    classical.add_argument('--p0', type=float, nargs='+')
    classical.add_argument('--T', type=float)
    classical.add_argument('--dt', type=float)

    sweep = command('resolvent-sweep', 'Besov bound ratios along a Gamma sweep')
    sweep.add_argument('--lambda', dest='lam', type=float)
    sweep.add_argument('--gammas', type=_float_csv, help='comma separated list')
    sweep.add_argument('--psi', choices=['gaussian', 'ring'])
    sweep.add_argument('--sign', choices=['upper', 'lower'])

    radiation = command('radiation', 'radiation condition residuals')
    radiation.add_argument('--lambda', dest='lam', type=float)
    radiation.add_argument('--psi', choices=['gaussian', 'ring'])
    radiation.add_argument('--beta-sweep', action='store_true')

    lap = command('lap', 'extrapolated boundary values of the resolvent')
    lap.add_argument('--lambda', dest='lam', type=float)
    lap.add_argument('--psi', choices=['gaussian', 'ring'])

    sommerfeld = command('sommerfeld', 'outgoing boundary row solve and its verdict')
    sommerfeld.add_argument('--lambda', dest='lam', type=float)
    sommerfeld.add_argument('--psi', choices=['gaussian', 'ring'])
    sommerfeld.add_argument('--scheme', choices=['discrete', 'one-sided'])
    sommerfeld.add_argument('--compare-extrapolation', action='store_true')

    commutator = command('commutator', 'weighted commutator identities and positivity probes')
    commutator.add_argument('--lambda', dest='lam', type=float)
    commutator.add_argument('--gamma', type=float)

    rellich = command('rellich-probe', 'solutions of (H - lambda) phi = 0 and their tails')
    rellich.add_argument('--lambda', dest='lam', type=float)

    command('audit', 'decay constants of the perturbation')

    holder = command('holder', 'Hoelder exponent of the resolvent')
    holder.add_argument('--lambda', dest='lam', type=float)
    holder.add_argument('--gamma', type=float)
    holder.add_argument('--s', type=float)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = max(logging.WARNING - 10 * args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    options = vars(args)
    return run(options.pop('config'), options.pop('subcommand'), options)


if __name__ == '__main__':
    sys.exit(main())
