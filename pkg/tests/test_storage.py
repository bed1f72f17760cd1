"""Tests for manifests, result records and CSV output."""

import json

import numpy as np
import pytest

from src import __version__
from src.core.exceptions import ManifestError, NetworkValidationError
from src.network.mera import ScaleInvariantMera, perturb, random_network
from src.services.observable_service import CorrelatorSeries
from src.services.optimizer_service import OptimizationTrace
from src.storage import manifest
from src.storage.records import (
    SERIES_COLUMNS,
    SPECTRUM_COLUMNS,
    TRACE_COLUMNS,
    ResultRecord,
    read_csv,
    to_jsonable,
    write_series_csv,
    write_spectrum_csv,
    write_trace_csv,
)


def assert_same_tensors(a, b):
    if isinstance(a, ScaleInvariantMera):
        pairs = [(a.chi, b.chi), (a.lam, b.lam)]
    else:
        pairs = []
        for level in range(1, a.levels + 1):
            la, lb = a.layer(level), b.layer(level)
            pairs += list(zip(la.disentanglers, lb.disentanglers)) + list(zip(la.isometries, lb.isometries))
    pairs.append((a.top, b.top))
    for x, y in pairs:
        np.testing.assert_array_equal(x.tensor, y.tensor)


# ------------------------------------------------------------------ #
# Manifests                                                            #
# ------------------------------------------------------------------ #


class TestManifest:
    def test_finite_round_trip_is_exact(self, finite16, tmp_path):
        path = manifest.save(finite16, tmp_path / 'net.json')
        loaded = manifest.load(path)
        assert loaded.N == 16
        assert_same_tensors(finite16, loaded)

    def test_uniform_layers_stored_once(self, tmp_path):
        mera = random_network(n=4, D=2, seed=3, uniform=True)
        document = manifest.to_document(mera)
        assert [t['position'] for t in document['tensors'] if t['role'] == 'chi'] == [None, None]
        assert_same_tensors(mera, manifest.load(manifest.save(mera, tmp_path / 'u.json')))

    def test_scale_invariant_round_trip(self, scale_invariant, tmp_path):
        loaded = manifest.load(manifest.save(scale_invariant, tmp_path / 'si.json'))
        assert isinstance(loaded, ScaleInvariantMera)
        assert_same_tensors(scale_invariant, loaded)

    def test_document_layout(self, scale_invariant):
        document = manifest.to_document(scale_invariant)
        assert document['format_version'] == 1
        assert document['kind'] == 'scale_invariant'
        lam = next(t for t in document['tensors'] if t['role'] == 'lam')
        assert lam['shape'] == [2, 2, 2]
        assert len(lam['entries']) == 8
        assert lam['level'] is None

    def test_not_json(self, tmp_path):
        path = tmp_path / 'broken.json'
        path.write_text('{"format_version": 1,')
        with pytest.raises(ManifestError):
            manifest.load(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ManifestError):
            manifest.load(tmp_path / 'absent.json')

    @pytest.mark.parametrize('change', [
        {'format_version': 2},
        {'kind': 'ternary'},
        {'tensors': None},
    ])
    def test_header_errors(self, scale_invariant, change):
        document = manifest.to_document(scale_invariant)
        document.update(change)
        with pytest.raises(ManifestError):
            manifest.from_document(document)

    def test_entry_errors(self, scale_invariant):
        document = manifest.to_document(scale_invariant)
        document['tensors'][0]['entries'] = document['tensors'][0]['entries'][:-1]
        with pytest.raises(ManifestError):
            manifest.from_document(document)
        document = manifest.to_document(scale_invariant)
        document['tensors'][1]['shape'] = [2, 4]
        with pytest.raises(ManifestError):
            manifest.from_document(document)

    def test_missing_positions(self, finite8):
        document = manifest.to_document(finite8)
        document['tensors'] = [t for t in document['tensors'] if not (t['role'] == 'lam' and t['position'] == 2)]
        with pytest.raises(ManifestError):
            manifest.from_document(document)

    def test_invalid_network_on_load(self, finite8, tmp_path):
        path = manifest.save(perturb(finite8, 1e-6, role='chi', level=1, position=2), tmp_path / 'bad.json')
        with pytest.raises(NetworkValidationError) as info:
            manifest.load(path)
        assert not info.value.report.valid
        assert manifest.load(path, check=False).N == 8


# ------------------------------------------------------------------ #
# Records and CSV                                                      #
# ------------------------------------------------------------------ #


class TestRecords:
    def test_complex_values_are_pairs(self):
        record = ResultRecord(command='spectrum', config={'channel': 'R'}, seed=4,
                              outputs={'eigenvalues': np.array([1.0 + 0j, 0.5 - 0.25j])})
        data = json.loads(record.to_json())
        assert data['outputs']['eigenvalues'] == [[1.0, 0.0], [0.5, -0.25]]
        assert data['tool_version'] == __version__
        assert data['seed'] == 4

    def test_numpy_scalars(self, tmp_path):
        value = to_jsonable({'n': np.int64(3), 'ok': np.bool_(True), 'x': np.float64(0.5), 'p': tmp_path})
        assert value == {'n': 3, 'ok': True, 'x': 0.5, 'p': str(tmp_path)}
        json.dumps(value)

    def test_save(self, tmp_path):
        path = ResultRecord(command='validate', config={}, seed=None).save(tmp_path / 'out' / 'r.json')
        assert json.loads(path.read_text())['command'] == 'validate'

    def test_spectrum_csv(self, tmp_path):
        value = 1.0 / 3.0 + 0.1j
        coefficients = [{'index': 1, 'left': 0.2, 'right': 1e-20}]
        rows = read_csv(write_spectrum_csv(tmp_path / 's.csv', [1.0 + 0j, value], coefficients))
        assert list(rows[0]) == SPECTRUM_COLUMNS
        assert rows[0]['left'] == ''
        assert float(rows[1]['re']) == value.real
        assert float(rows[1]['abs']) == abs(value)
        assert float(rows[1]['right']) == 1e-20

    def test_series_csv(self, tmp_path):
        series = CorrelatorSeries(ks=[3, 4], separations=[8, 16], values=[0.25 + 0j, 0j], fit=None, excluded=[4])
        rows = read_csv(write_series_csv(tmp_path / 'series.csv', series))
        assert list(rows[0]) == SERIES_COLUMNS
        assert rows[0]['log2_abs_delta'] == '-2'
        assert rows[1]['log2_abs_delta'] == ''
        assert [r['excluded'] for r in rows] == ['0', '1']

    def test_trace_csv(self, tmp_path):
        trace = OptimizationTrace(energies=[-1.2, -1.25], residuals=[0.3, 0.1], gradients=[0.5, 0.125],
                                  wall_times=[0.01, 0.02], step_sizes=[1.0, 0.25])
        rows = read_csv(write_trace_csv(tmp_path / 't.csv', trace))
        assert list(rows[0]) == TRACE_COLUMNS
        assert [r['sweep'] for r in rows] == ['1', '2']
        assert float(rows[1]['energy']) == -1.25
        assert float(rows[1]['gradient']) == 0.125
        assert float(rows[1]['step']) == 0.25

    def test_trace_csv_without_gradients(self, tmp_path):
        trace = OptimizationTrace(energies=[-1.2], residuals=[0.3], wall_times=[0.01], step_sizes=[0.0])
        rows = read_csv(write_trace_csv(tmp_path / 't.csv', trace))
        assert len(rows) == 1
        assert rows[0]['gradient'] == ''
