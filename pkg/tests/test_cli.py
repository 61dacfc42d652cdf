import csv
import json
import os
import tempfile
import unittest
from unittest import mock

import numpy as np
import yaml

from exceptions import InvalidArgument
from geometry import GEOMETRY_COLUMNS
from repulsive_lab import EXIT_ERROR, EXIT_OK, OUTPUT_ENVIRONMENT, PLOT_COLUMNS, _atomic_write, build_parser, \
                          emit_plot_data, execute, main, run, write_json
from resolvent import SpectralQuery, SweepRecord


def _read_csv(path):
    with open(path, 'r', newline='') as handle:
        return list(csv.reader(handle))


def _sweep_record(gamma, ratio):
    return SweepRecord(query=SpectralQuery(1.0, gamma), psi_id='gaussian', norm_psi_B=1.0, norm_phi_Bstar=1.0,
                       norm_pf_phi_Bstar=1.0, h_form=1.0, norm_kinetic_Bstar=1.0, bound_ratio=ratio,
                       solve_residual=0.0, kinetic_identity_residual=0.0)


class TestPlotData(unittest.TestCase):

    def test_empty(self):
        """
        An empty record set gives the header and no rows
        """
        header, rows = emit_plot_data([], 'gamma-sweep')
        self.assertEqual(header, PLOT_COLUMNS['gamma-sweep'])
        self.assertEqual(rows, [])

    def test_unknown_kind(self):
        """
        Only the known plot kinds are emitted
        """
        with self.assertRaises(ValueError):
            emit_plot_data([], 'histogram')

    def test_gamma_sweep_sorted(self):
        """
        Sweep rows come out sorted by Gamma
        """
        records = [_sweep_record(0.1, 3.0), _sweep_record(0.001, 2.0), _sweep_record(0.01, 2.5)]
        header, rows = emit_plot_data(records, 'gamma-sweep')
        self.assertEqual([row[0] for row in rows], [0.001, 0.01, 0.1])
        self.assertEqual(rows[0], [0.001, 2.0, 1.0, 'upper', 'gaussian'])

    def test_tail(self):
        """
        Tail rows carry their label
        """
        header, rows = emit_plot_data([('outgoing', [(0, 1.0, 0.5), (1, 2.0, 0.25)])], 'tail')
        self.assertEqual(header, ['label', 'nu', 'R', 'tail'])
        self.assertEqual(rows[1], ['outgoing', 1, 2.0, 0.25])


class TestPersistence(unittest.TestCase):

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)

    def test_failed_write(self):
        """
        A failing writer leaves a .failed marker and neither the file nor a temporary
        """
        path = os.path.join(self.directory.name, 'report.json')

        def explode(handle):
            handle.write('partial')
            raise RuntimeError('disk full')

        with self.assertRaises(RuntimeError):
            _atomic_write(path, explode)
        self.assertFalse(os.path.exists(path))
        self.assertTrue(os.path.exists(path + '.failed'))
        self.assertEqual(sorted(os.listdir(self.directory.name)), ['report.json.failed'])

    def test_numpy_json(self):
        """
        numpy scalars, arrays, complex numbers and non finite values are written as plain JSON
        """
        path = os.path.join(self.directory.name, 'values.json')
        write_json(path, {'a': np.float64(1.5), 'b': np.bool_(True), 'c': np.arange(3), 'd': complex(1, 2),
                          'e': float('nan'), 'f': np.int64(4)})
        with open(path, 'r') as handle:
            data = json.load(handle)
        self.assertEqual(data, {'a': 1.5, 'b': True, 'c': [0, 1, 2], 'd': {'real': 1.0, 'imag': 2.0},
                                'e': 'nan', 'f': 4})


class TestRun(unittest.TestCase):

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)
        environ = mock.patch.dict(os.environ)
        environ.start()
        self.addCleanup(environ.stop)
        os.environ.pop(OUTPUT_ENVIRONMENT, None)

        self.config = {
            'model': {'epsilon': 1.0, 'q1': '0.3*r*f**-1', 'q2': '0.5*f**-2*sin(r)', 'tau': 1.0},
            'grid': {'mode': 'line-1d', 'spacing': 0.03125, 'R_max': 32.0, 'absorber': 0.25},
            'sweep': {'gammas': [0.1, 0.01, 0.001]},
            'output': {'directory': self.directory.name, 'prefix': 'unittest_'},
        }
        self.path = self.write_config(self.config)

    def write_config(self, config, name='instance.yaml'):
        path = os.path.join(self.directory.name, name)
        with open(path, 'w') as handle:
            yaml.safe_dump(config, handle)
        return path

    def output(self, name):
        return os.path.join(self.directory.name, 'unittest_' + name)

    def test_resolvent_sweep(self):
        """
        The sweep writes one record per Gamma, a report, plot data and a passed manifest
        """
        self.assertEqual(run(self.path, 'resolvent-sweep'), EXIT_OK)
        rows = _read_csv(self.output('resolvent-sweep_records.csv'))
        self.assertEqual(len(rows), 4)
        self.assertEqual(rows[0][:3], ['lam', 'gamma', 'sign'])

        plot = _read_csv(self.output('resolvent-sweep_gamma-sweep.csv'))
        self.assertEqual([float(row[0]) for row in plot[1:]], [0.001, 0.01, 0.1])

        with open(self.output('manifest.json'), 'r') as handle:
            manifest = json.load(handle)
        self.assertEqual(manifest['status'], 'passed')
        self.assertEqual(manifest['subcommand'], 'resolvent-sweep')
        self.assertEqual(len(manifest['config_hash']), 64)
        self.assertEqual(len(manifest['outputs']), 3)

        with open(self.output('resolvent-sweep_report.json'), 'r') as handle:
            report = json.load(handle)
        self.assertTrue(report['uniformly_bounded'])

    def test_records_path(self):
        """
        --out moves the records CSV
        """
        target = os.path.join(self.directory.name, 'audit.csv')
        outcome, manifest = execute(self.path, 'audit', {'out': target})
        self.assertTrue(outcome.passed)
        self.assertEqual(manifest.outputs[0], target)
        self.assertEqual(len(_read_csv(target)), 4)

    def test_geometry(self):
        """
        geometry tabulates every node with the exported columns
        """
        self.assertEqual(main(['geometry', '--config', self.path]), EXIT_OK)
        rows = _read_csv(self.output('geometry_records.csv'))
        self.assertEqual(rows[0], GEOMETRY_COLUMNS)
        self.assertEqual(len(rows), 2 * 32 * 32)

    def test_classical(self):
        """
        classical needs no grid and reports the escape class
        """
        argv = ['classical', '--config', self.path, '--x0', '1', '--p0', '1', '--T', '1000', '--dt', '0.05']
        self.assertEqual(main(argv), EXIT_OK)
        with open(self.output('classical_report.json'), 'r') as handle:
            report = json.load(handle)
        self.assertTrue(report['growth_class'].startswith('power'))
        self.assertTrue(os.path.exists(self.output('classical_orbit.csv')))

    def test_config_error(self):
        """
        An unknown key is an error exit
        """
        path = self.write_config({'model': {'epsilonn': 1.0}}, 'broken.yaml')
        self.assertEqual(run(path, 'audit'), EXIT_ERROR)

    def test_broken_yaml(self):
        """
        A config that is not valid YAML is an error exit
        """
        path = os.path.join(self.directory.name, 'unparsable.yaml')
        with open(path, 'w') as handle:
            handle.write('model: {epsilon: [1.0\n')
        self.assertEqual(run(path, 'audit'), EXIT_ERROR)
        self.assertEqual(run(os.path.join(self.directory.name, 'missing.yaml'), 'audit'), EXIT_ERROR)

    def test_rejected_option(self):
        """
        An option the operation refuses is an error exit with an error manifest
        """
        with self.assertRaises(InvalidArgument):
            execute(self.path, 'holder', {'s': 0.5})
        with open(self.output('manifest.json'), 'r') as handle:
            manifest = json.load(handle)
        self.assertEqual(manifest['status'], 'error')
        self.assertEqual(manifest['subcommand'], 'holder')
        self.assertEqual(run(self.path, 'holder', {'s': 0.5}), EXIT_ERROR)

    def test_unknown_subcommand(self):
        """
        execute refuses subcommands it does not know
        """
        with self.assertRaises(ValueError):
            execute(self.path, 'spectrum')


class TestParser(unittest.TestCase):

    def test_gammas(self):
        """
        --gammas takes a comma separated list
        """
        args = build_parser().parse_args(['resolvent-sweep', '--gammas', '0.1,0.01', '--sign', 'lower'])
        self.assertEqual(args.gammas, [0.1, 0.01])
        self.assertEqual(args.sign, 'lower')
        self.assertIsNone(args.config)

    def test_unknown_subcommand(self):
        """
        argparse exits on an unknown subcommand
        """
        with mock.patch('sys.stderr'):
            with self.assertRaises(SystemExit):
                build_parser().parse_args(['spectrum'])


if __name__ == '__main__':
    unittest.main()
