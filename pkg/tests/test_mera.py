"""Tests for the network containers, validation and generators."""

import numpy as np
import pytest

from src.core.exceptions import NetworkValidationError
from src.core.tensor_ops import swap_matrix
from src.network.mera import (
    Disentangler,
    FiniteMera,
    Isometry,
    MeraLayer,
    ScaleInvariantMera,
    embedding_isometry,
    identity_network,
    perturb,
    product_top,
    random_network,
    tile,
    validate,
)

# ------------------------------------------------------------------ #
# Geometry                                                             #
# ------------------------------------------------------------------ #


class TestGeometry:
    def test_sizes(self, finite16):
        assert finite16.N == 16
        assert finite16.levels == 2
        assert [finite16.layer(k).size for k in (1, 2)] == [8, 4]
        assert finite16.lattice_size(1) == 16
        assert finite16.lattice_size(3) == 4

    def test_isometry_outputs_wrap(self, finite8):
        layer = finite8.layer(1)
        assert layer.isometry_outputs(0) == (7, 0)
        assert layer.isometry_outputs(2) == (3, 4)
        assert layer.disentangler_sites(3) == (6, 7)

    def test_mid_site_owner(self, finite8):
        layer = finite8.layer(1)
        for q in range(layer.size):
            for m in layer.isometry_outputs(q):
                assert layer.isometry_of_mid_site(m) == q

    def test_wrong_layer_count(self, finite8):
        with pytest.raises(NetworkValidationError):
            FiniteMera(n=4, D=2, layers=finite8.layers, top=finite8.top)

    def test_wrong_tensor_count(self, finite8):
        layer = finite8.layer(1)
        with pytest.raises(NetworkValidationError):
            MeraLayer(size=4, disentanglers=layer.disentanglers[:2], isometries=layer.isometries)

    def test_tensors_are_read_only(self, finite8):
        with pytest.raises(ValueError):
            finite8.layer(1).disentangler(0).tensor[0, 0, 0, 0] = 1.0


# ------------------------------------------------------------------ #
# Validation                                                           #
# ------------------------------------------------------------------ #


class TestValidate:
    def test_random_networks_are_valid(self):
        for seed in range(5):
            report = validate(random_network(n=4, D=2, seed=seed))
            assert report.valid
            assert report.max_residual < 1e-12

    def test_scale_invariant_valid(self, scale_invariant):
        report = validate(scale_invariant)
        assert report.valid
        assert [e.role for e in report.entries] == ['chi', 'lam', 'top']

    def test_perturbed_disentangler_detected(self, finite8):
        broken = perturb(finite8, 1e-6, role='chi', level=1, position=2)
        report = validate(broken)
        assert not report.valid
        failures = report.failures()
        assert [(f.role, f.level, f.position) for f in failures] == [('chi', 1, 2)]
        assert failures[0].residual > 1e-7

    def test_perturbed_top_detected(self, scale_invariant):
        report = validate(perturb(scale_invariant, 1e-3, role='top'))
        assert [f.role for f in report.failures()] == ['top']

    def test_tolerance_respected(self, finite8):
        broken = perturb(finite8, 1e-9, role='lam', level=1, position=0)
        assert not validate(broken).valid
        assert validate(broken, tol=1e-6).valid

    def test_perturbed_isometry_shifts_one_entry(self, finite8, scale_invariant):
        # generated isometries are stored as transposed (non-contiguous) views
        broken = perturb(finite8, 1e-6, role='lam', level=1, position=1, entry=3)
        deltas = [(broken.layer(1).isometry(1).tensor - finite8.layer(1).isometry(1).tensor).reshape(-1)]
        broken_si = perturb(scale_invariant, 1e-6, role='lam', entry=3)
        deltas.append((broken_si.lam.tensor - scale_invariant.lam.tensor).reshape(-1))
        for delta in deltas:
            assert abs(delta[3] - 1e-6) < 1e-15
            assert np.count_nonzero(np.delete(delta, 3)) == 0
        assert not validate(broken).valid
        assert not validate(broken_si).valid

    def test_shape_checked_on_construction(self):
        with pytest.raises(NetworkValidationError):
            Isometry(np.zeros((2, 2)))
        with pytest.raises(NetworkValidationError):
            Disentangler(np.zeros((2, 2, 3, 3)))


# ------------------------------------------------------------------ #
# Generators                                                           #
# ------------------------------------------------------------------ #


class TestGenerators:
    def test_seed_determinism(self):
        a = random_network(n=4, D=2, seed=3)
        b = random_network(n=4, D=2, seed=3)
        np.testing.assert_array_equal(a.layer(2).isometry(1).tensor, b.layer(2).isometry(1).tensor)
        np.testing.assert_array_equal(a.top.tensor, b.top.tensor)

    def test_distinct_positions(self, finite8):
        layer = finite8.layer(1)
        assert not np.allclose(layer.disentangler(0).tensor, layer.disentangler(1).tensor)

    def test_uniform_layers(self):
        mera = random_network(n=4, D=2, seed=3, uniform=True)
        assert all(mera.layer(k).uniform for k in (1, 2))
        assert validate(mera).valid

    def test_symmetric_tensors(self, symmetric_si):
        s = swap_matrix(2, 2, 0, 1)
        x = symmetric_si.chi.matrix()
        np.testing.assert_allclose(s @ x @ s, x, atol=1e-12)
        lam = symmetric_si.lam.tensor
        np.testing.assert_allclose(lam, lam.transpose(0, 2, 1), atol=1e-12)

    def test_larger_dimension(self):
        si = random_network(D=3, seed=5, scale_invariant=True)
        assert si.D == 3
        assert validate(si).valid

    def test_identity_network(self):
        mera = identity_network(3)
        assert validate(mera).valid
        assert mera.layer(1).isometry(0).tensor[1, 1, 0] == 1.0

    def test_product_top(self):
        top = product_top(2, (1, 0, 0, 1))
        assert top.tensor[1, 0, 0, 1] == 1.0
        assert abs(np.linalg.norm(top.vector()) - 1.0) < 1e-15

    def test_embedding_isometry_valid(self):
        assert validate(ScaleInvariantMera(
            Disentangler(np.eye(4).reshape(2, 2, 2, 2)), embedding_isometry(2), product_top(2))).valid

    def test_tile_shares_tensors(self, scale_invariant):
        mera = tile(scale_invariant, 6)
        assert mera.N == 64
        assert mera.levels == 4
        for k in range(1, 5):
            assert mera.layer(k).isometry(3) is scale_invariant.lam
            assert mera.layer(k).disentangler(0) is scale_invariant.chi

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            random_network(n=2, D=2)
        with pytest.raises(ValueError):
            random_network(n=4, D=1)
