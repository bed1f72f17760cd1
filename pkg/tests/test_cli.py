"""End-to-end tests of the command line through main()."""

import json

import numpy as np
import pytest

from main import build_parser, main
from src.network.mera import perturb, random_network, validate
from src.services.oracle_service import OracleService
from src.storage import manifest
from src.storage.records import SERIES_COLUMNS, SPECTRUM_COLUMNS, read_csv


@pytest.fixture
def finite_path(tmp_path):
    return manifest.save(random_network(n=3, D=2, seed=11), tmp_path / 'finite.json')


@pytest.fixture
def si_path(tmp_path):
    return manifest.save(random_network(D=2, seed=21, scale_invariant=True), tmp_path / 'si.json')


def record(path):
    return json.loads(path.read_text())


# ------------------------------------------------------------------ #
# Parsing and exit codes                                               #
# ------------------------------------------------------------------ #


class TestParser:
    def test_unknown_command(self):
        with pytest.raises(SystemExit) as info:
            build_parser().parse_args(['transmogrify'])
        assert info.value.code == 2

    def test_missing_manifest(self):
        with pytest.raises(SystemExit) as info:
            main(['validate'])
        assert info.value.code == 2

    def test_bad_channel(self, si_path):
        with pytest.raises(SystemExit):
            main(['spectrum', '--manifest', str(si_path), '--channel', 'Q'])


class TestValidate:
    def test_valid_manifest(self, finite_path, tmp_path):
        out = tmp_path / 'validate.json'
        assert main(['validate', '--manifest', str(finite_path), '--out', str(out)]) == 0
        data = record(out)
        assert data['command'] == 'validate'
        assert data['outputs']['valid'] is True

    def test_perturbed_manifest(self, tmp_path):
        broken = perturb(random_network(n=3, D=2, seed=11), 1e-6, role='lam', level=1, position=1)
        path = manifest.save(broken, tmp_path / 'broken.json')
        out = tmp_path / 'validate.json'
        assert main(['validate', '--manifest', str(path), '--out', str(out)]) == 1
        failing = [r for r in record(out)['outputs']['residuals'] if r['residual'] > 1e-12]
        assert [(r['role'], r['level'], r['position']) for r in failing] == [('lam', 1, 1)]

    def test_malformed_manifest(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text('not json')
        assert main(['validate', '--manifest', str(path)]) == 2


# ------------------------------------------------------------------ #
# Observables and spectra                                              #
# ------------------------------------------------------------------ #


class TestObserve:
    def test_cone_value_matches_brute_force(self, finite_path, tmp_path):
        out = tmp_path / 'observe.json'
        assert main(['observe', '--manifest', str(finite_path), '--observable', 'x', '--site', '5',
                     '--out', str(out)]) == 0
        re, im = record(out)['outputs']['value']
        psi = OracleService.expand_state(manifest.load(finite_path))
        x = np.array([[0, 1], [1, 0]])
        assert abs(complex(re, im) - OracleService.exact_expectation(psi, x, [5])) < 1e-10

    def test_thermodynamic_identity(self, si_path, tmp_path):
        out = tmp_path / 'observe.json'
        assert main(['observe', '--manifest', str(si_path), '--observable', 'i', '--thermo',
                     '--out', str(out)]) == 0
        re, im = record(out)['outputs']['value']
        assert abs(re - 1.0) < 1e-10 and abs(im) < 1e-10

    def test_thermo_needs_scale_invariant(self, finite_path):
        assert main(['observe', '--manifest', str(finite_path), '--thermo']) == 2

    def test_unknown_observable(self, finite_path):
        assert main(['observe', '--manifest', str(finite_path), '--observable', 'q']) == 2


class TestSpectrum:
    def test_writes_record_and_csv(self, si_path, tmp_path):
        out = tmp_path / 'spec.json'
        assert main(['spectrum', '--manifest', str(si_path), '--observable', 'x', '--out', str(out)]) == 0
        outputs = record(out)['outputs']
        assert len(outputs['eigenvalues']) == 64
        assert abs(outputs['eigenvalues'][0][0] - 1.0) < 1e-10
        assert outputs['mixing'] is True
        assert 0.0 < outputs['kappa'] < 1.0
        assert outputs['state_filter'] == 'two-window'
        rows = read_csv(tmp_path / 'spec_spectrum.csv')
        assert list(rows[0]) == SPECTRUM_COLUMNS
        assert len(rows) == 64

    def test_records_are_deterministic(self, si_path, tmp_path):
        out = tmp_path / 'spec.json'
        args = ['spectrum', '--manifest', str(si_path), '--observable', 'z', '--seed', '5', '--out', str(out)]
        main(args)
        first = record(out)
        main(args)
        second = record(out)
        first.pop('timestamp')
        second.pop('timestamp')
        assert first == second

    def test_finite_manifest_rejected(self, finite_path):
        assert main(['spectrum', '--manifest', str(finite_path)]) == 2


class TestExponent:
    def test_series_and_cross_check(self, si_path, tmp_path):
        out = tmp_path / 'exp.json'
        assert main(['exponent', '--manifest', str(si_path), '--kmax', '4', '--out', str(out)]) == 0
        outputs = record(out)['outputs']
        assert abs(outputs['nu_kappa'] + 2.0 * np.log2(outputs['kappa'])) < 1e-12
        assert outputs['series']['ks'] == [3, 4]
        assert outputs['state_filter'] == 'two-window'
        if outputs['nu_fit'] is not None:
            assert outputs['relation_holds'] == (outputs['relative_difference'] <= 0.05)
        rows = read_csv(tmp_path / 'exp_series.csv')
        assert list(rows[0]) == SERIES_COLUMNS
        assert [r['r'] for r in rows] == ['8', '16']

    def test_identity_has_no_kappa(self, si_path, tmp_path):
        out = tmp_path / 'exp.json'
        assert main(['exponent', '--manifest', str(si_path), '--observable', 'i', '--out', str(out)]) == 1
        outputs = record(out)['outputs']
        assert outputs['kappa'] is None
        assert len(outputs['coefficients']) > 0


# ------------------------------------------------------------------ #
# Optimizer and oracle                                                 #
# ------------------------------------------------------------------ #


class TestOptimize:
    def test_short_run_writes_outputs(self, tmp_path):
        config = tmp_path / 'ising.json'
        config.write_text(json.dumps({'max_sweeps': 2, 'seed': 3}))
        out = tmp_path / 'run' / 'ising.json'
        assert main(['optimize', '--config', str(config), '--out', str(out)]) == 0
        outputs = record(out)['outputs']
        assert outputs['sweeps'] <= 2
        assert 'wall_times' not in outputs
        assert outputs['stalled'] in (True, False)
        assert outputs['gap_report']['target'] == 1e-3
        assert set(outputs['kappas']) == {'x', 'y', 'z'}
        network = manifest.load(tmp_path / 'run' / 'ising_manifest.json')
        assert validate(network).valid
        rows = read_csv(tmp_path / 'run' / 'ising_trace.csv')
        assert float(rows[-1]['energy']) == outputs['energy_density']

    def test_bad_config(self, tmp_path):
        config = tmp_path / 'bad.json'
        config.write_text(json.dumps({'tol': 0}))
        assert main(['optimize', '--config', str(config)]) == 2


class TestOracle:
    def test_compare_passes(self, finite_path, tmp_path):
        out = tmp_path / 'oracle.json'
        assert main(['oracle', '--manifest', str(finite_path), '--task', 'compare', '--out', str(out)]) == 0
        assert record(out)['outputs']['passed'] is True

    def test_norm(self, finite_path, tmp_path):
        out = tmp_path / 'norm.json'
        assert main(['oracle', '--manifest', str(finite_path), '--task', 'norm', '--out', str(out)]) == 0
        assert abs(record(out)['outputs']['norm'] - 1.0) < 1e-12

    def test_compare_needs_manifest(self):
        assert main(['oracle', '--task', 'compare']) == 2

    def test_ising_reference(self, tmp_path):
        out = tmp_path / 'ising.json'
        assert main(['oracle', '--task', 'ising', '--sites', '6', '--out', str(out)]) == 0
        outputs = record(out)['outputs']
        assert abs(outputs['energy_density'] + 4.0 / np.pi) < 1e-12
        assert outputs['finite_chain']['n'] == 6
        assert outputs['finite_chain']['energy_density'] < outputs['energy_density']
