"""Tests for the scale-invariant optimizer and its layer maps."""

import json

import numpy as np
import pytest

from config import Config
from src.core.exceptions import ManifestError, NonMixingError, OptimizationError
from src.core.tensor_ops import embed_operator, polar_isometry
from src.network.mera import validate
from src.services.channel_service import heisenberg_apply, kraus_family, schrodinger_apply
from src.services.observable_service import random_density, random_hermitian
from src.services.optimizer_service import (
    HamiltonianSpec,
    OptimizationConfig,
    OptimizationTrace,
    OptimizerService,
    UpdateResult,
    ascend_hamiltonian,
    create_optimizer_service,
    critical_kappas,
    descend_density,
    ising_two_site,
    load_config,
    optimize,
    site_parity,
    spins_per_site,
    three_site_term,
)
from src.services.oracle_service import OracleService
from src.services.transfer_service import liouville_matrix, spectral_analysis, thermo_expectation

CRITICAL_ENERGY = -4.0 / np.pi


@pytest.fixture(scope='module')
def short_run():
    service = create_optimizer_service(OptimizationConfig(max_sweeps=5, seed=5))
    network, trace = service.run()
    return service, network, trace


# ------------------------------------------------------------------ #
# Configuration                                                        #
# ------------------------------------------------------------------ #


class TestConfig:
    def test_defaults(self):
        config = OptimizationConfig()
        assert config.D == 2
        assert config.hamiltonian.model == 'ising'
        assert config.max_sweeps == 2000
        echo = config.echo()
        assert echo['hamiltonian'] == {'model': 'ising', 'h': 1.0}
        assert echo['real'] is True
        assert echo['parity'] is True

    @pytest.mark.parametrize('kwargs', [{'tol': 0.0}, {'D': 1}, {'max_sweeps': 0}, {'env_terms': 0},
                                        {'D': 3}])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            OptimizationConfig(**kwargs)

    def test_load_ising(self, tmp_path):
        path = tmp_path / 'opt.json'
        path.write_text(json.dumps({'max_sweeps': 7, 'seed': 3, 'hamiltonian': {'model': 'ising', 'h': 0.5}}))
        config = load_config(path)
        assert config.max_sweeps == 7
        assert config.seed == 3
        assert config.hamiltonian.h == 0.5

    def test_load_custom(self, tmp_path):
        h2 = ising_two_site(1.0)
        path = tmp_path / 'opt.json'
        entries = [[[float(z.real), float(z.imag)] for z in row] for row in h2]
        path.write_text(json.dumps({'hamiltonian': {'model': 'custom', 'two_site': entries}}))
        config = load_config(path)
        np.testing.assert_array_equal(config.hamiltonian.two_site_term(2), h2)
        assert config.echo()['hamiltonian']['two_site'] == entries

    def test_load_errors(self, tmp_path):
        path = tmp_path / 'opt.json'
        path.write_text('{"tol": ')
        with pytest.raises(ManifestError):
            load_config(path)
        path.write_text(json.dumps({'tol': -1.0}))
        with pytest.raises(ManifestError):
            load_config(path)
        with pytest.raises(ManifestError):
            load_config(tmp_path / 'missing.json')

    def test_hamiltonian_dimension_checked(self):
        with pytest.raises(ValueError):
            HamiltonianSpec(model='ising').two_site_term(3)
        with pytest.raises(ValueError):
            HamiltonianSpec(model='custom', two_site=np.eye(4)).two_site_term(3)

    def test_blocked_ising_builds(self):
        config = OptimizationConfig(D=4)
        assert config.hamiltonian.spins(4) == 2
        assert config.hamiltonian.two_site_term(4).shape == (16, 16)
        assert spins_per_site(8) == 3
        assert spins_per_site(6) is None
        assert site_parity(3) is None


# ------------------------------------------------------------------ #
# Hamiltonian terms and layer maps                                     #
# ------------------------------------------------------------------ #


class TestLayerMaps:
    def test_ising_two_site(self):
        h2 = ising_two_site(0.6)
        np.testing.assert_allclose(h2, h2.conj().T)
        assert h2[0, 0] == -0.6
        assert h2[0, 3] == -1.0

    @pytest.mark.parametrize('h', [1.0, 0.7])
    def test_blocked_terms_sum_to_the_chain(self, h):
        # three sites of two spins each on a ring of six spins
        h2 = ising_two_site(h, spins=2)
        total = sum(embed_operator(h2, [s, (s + 1) % 3], 3, 4) for s in range(3))
        np.testing.assert_allclose(total, OracleService.ising_hamiltonian(6, h).toarray(), atol=1e-12)

    def test_three_site_term(self):
        np.testing.assert_allclose(three_site_term(np.eye(4), 2), np.eye(8))
        h3 = three_site_term(ising_two_site(1.0), 2)
        assert h3.shape == (8, 8)
        assert abs(np.trace(h3)) < 1e-14

    def test_ascend_is_unital(self, scale_invariant):
        out = ascend_hamiltonian(np.eye(8), scale_invariant.chi, scale_invariant.lam)
        np.testing.assert_allclose(out, np.eye(8), atol=1e-12)

    def test_ascend_descend_are_adjoint(self, scale_invariant, rng):
        h = random_hermitian(8, rng)
        rho = random_density(8, rng)
        chi, lam = scale_invariant.chi, scale_invariant.lam
        lhs = np.trace(ascend_hamiltonian(h, chi, lam) @ rho)
        rhs = np.trace(h @ descend_density(rho, chi, lam))
        assert abs(lhs - rhs) < 1e-12

    def test_descend_gives_state(self, scale_invariant, rng):
        out = descend_density(random_density(8, rng), scale_invariant.chi, scale_invariant.lam)
        assert abs(np.trace(out) - 1.0) < 1e-12
        assert np.linalg.eigvalsh((out + out.conj().T) / 2).min() > -1e-12


# ------------------------------------------------------------------ #
# Optimization                                                         #
# ------------------------------------------------------------------ #


class TestOptimizer:
    def test_environment_hamiltonian_is_negative(self, scale_invariant):
        service = create_optimizer_service()
        h_env = service.environment_hamiltonian(scale_invariant)
        assert np.linalg.eigvalsh(h_env).max() < 1e-10

    def test_response_hamiltonian_is_traceless_on_fixed_point(self, scale_invariant):
        service = create_optimizer_service()
        energy, rho = service.energy(scale_invariant)
        response = service.response_hamiltonian(scale_invariant, energy)
        assert abs(np.trace(rho @ response)) < 1e-9

    def test_response_hamiltonian_solves_its_recursion(self, scale_invariant):
        service = create_optimizer_service()
        energy, _ = service.energy(scale_invariant)
        response = service.response_hamiltonian(scale_invariant, energy)
        ascended = heisenberg_apply(kraus_family(scale_invariant, 'avg'), response)
        np.testing.assert_allclose(response - ascended, service.h3 - energy * np.eye(8), atol=1e-10)

    @pytest.mark.parametrize('role', ['chi', 'lam'])
    def test_environment_is_the_energy_gradient(self, scale_invariant, role):
        service = create_optimizer_service()
        energy, rho = service.energy(scale_invariant)
        env = service.environments(scale_invariant, rho, service.response_hamiltonian(scale_invariant, energy))[role]
        w = service.matrix(scale_invariant, role)
        rng = np.random.default_rng(4)
        direction = rng.standard_normal(w.shape) + 1j * rng.standard_normal(w.shape)
        eps = 1e-5
        plus = polar_isometry(w + eps * direction)
        minus = polar_isometry(w - eps * direction)
        numeric = (service.energy(service.replace(scale_invariant, role, plus))[0]
                   - service.energy(service.replace(scale_invariant, role, minus))[0]) / (2 * eps)
        analytic = 2.0 * np.vdot(env.reshape(-1), ((plus - minus) / (2 * eps)).reshape(-1)).real
        assert analytic == pytest.approx(numeric, rel=1e-5, abs=1e-8)

    def test_constraints_keep_tensors_real_and_even(self):
        service = create_optimizer_service()
        network = service.initial_network(0)
        P = site_parity(2)
        pair = np.kron(P, P)
        chi, lam = network.chi.matrix(), network.lam.matrix()
        assert not np.any(chi.imag) and not np.any(lam.imag)
        np.testing.assert_allclose(pair @ chi @ pair, chi, atol=1e-12)
        np.testing.assert_allclose(P @ lam @ pair, lam, atol=1e-12)
        assert validate(network).valid

    def test_complex_hamiltonian_lifts_real_constraint(self, pauli):
        h2 = ising_two_site(1.0) + 0.3 * (np.kron(pauli['x'], pauli['y']) - np.kron(pauli['y'], pauli['x']))
        service = OptimizerService(OptimizationConfig(hamiltonian=HamiltonianSpec(model='custom', two_site=h2)))
        assert service.real is False

    def test_blocked_fixed_point_uses_iterative_solver(self):
        service = create_optimizer_service(OptimizationConfig(D=4, seed=2))
        assert service.spins == 2
        network = service.initial_network(0)
        family = kraus_family(network, 'avg')
        rho, second = service.fixed_point(family)
        assert rho.shape == (64, 64)
        assert abs(np.trace(rho) - 1.0) < 1e-10
        assert np.linalg.norm(schrodinger_apply(family, rho) - rho) < 1e-6
        assert second < 1.0

    def test_energy_matches_thermodynamic_expectation(self, scale_invariant):
        service = create_optimizer_service()
        energy, rho = service.energy(scale_invariant)
        S = spectral_analysis(liouville_matrix(kraus_family(scale_invariant, 'avg')))
        assert abs(energy - thermo_expectation(S, service.h3).real) < 1e-10
        assert abs(np.trace(rho) - 1.0) < 1e-12

    def test_initial_network_reseeds(self):
        service = create_optimizer_service(OptimizationConfig(seed=9))
        first, second = service.initial_network(0), service.initial_network(1)
        assert not np.allclose(first.chi.tensor, second.chi.tensor)
        np.testing.assert_array_equal(first.lam.tensor, service.initial_network(0).lam.tensor)

    def test_trace_is_monotone(self, short_run):
        _, _, trace = short_run
        assert 1 <= len(trace.energies) <= 5
        assert all(b <= a + 1e-11 for a, b in zip(trace.energies, trace.energies[1:]))
        assert len(trace.residuals) == len(trace.energies) == len(trace.step_sizes) == len(trace.wall_times)

    def test_result_is_valid_network(self, short_run):
        _, network, _ = short_run
        assert validate(network).valid

    def test_energy_is_variational(self, short_run):
        _, _, trace = short_run
        assert trace.exact_energy == pytest.approx(CRITICAL_ENERGY, abs=1e-12)
        assert trace.final_energy >= CRITICAL_ENERGY - 1e-9
        assert trace.energy_error >= -1e-9

    def test_final_energy_matches_network(self, short_run):
        service, network, trace = short_run
        energy, _ = service.energy(network)
        assert abs(energy - trace.final_energy) < 1e-12

    def test_runs_are_deterministic(self, short_run):
        _, network, trace = short_run
        again_network, again = optimize(OptimizationConfig(max_sweeps=5, seed=5))
        assert again.energies == trace.energies
        np.testing.assert_array_equal(again_network.chi.tensor, network.chi.tensor)

    def test_custom_hamiltonian_has_no_reference(self):
        spec = HamiltonianSpec(model='custom', two_site=ising_two_site(1.0))
        service = OptimizerService(OptimizationConfig(hamiltonian=spec, max_sweeps=1))
        assert service.trace.exact_energy is None
        np.testing.assert_allclose(service.h3, three_site_term(ising_two_site(1.0), 2))

    def test_non_mixing_exhausts_retries(self, monkeypatch):
        def never_mixing(self, network):
            raise NonMixingError("stuck", spectrum_excerpt=[1.0, 1.0])

        monkeypatch.setattr(OptimizerService, 'energy', never_mixing)
        monkeypatch.setattr('src.services.optimizer_service.Config.MAX_RETRIES', 1)
        with pytest.raises(OptimizationError) as info:
            create_optimizer_service().run()
        assert info.value.trace.restarts == 1

    def test_rejected_sweeps_stall_instead_of_converging(self, monkeypatch):
        def rejected(self, network, role, energy, rho, h_env):
            return UpdateResult(network, energy, rho, 0.0, 0.1, 0.1)

        monkeypatch.setattr(OptimizerService, 'update', rejected)
        _, trace = optimize(OptimizationConfig(max_sweeps=20, tol=1.0))
        assert trace.stalled
        assert not trace.converged
        assert len(trace.energies) == Config.STALL_SWEEPS
        assert trace.step_sizes == [0.0] * Config.STALL_SWEEPS

    def test_large_gradient_blocks_convergence(self, monkeypatch):
        def small_step(self, network, role, energy, rho, h_env):
            return UpdateResult(network, energy, rho, 1e-3, 0.1, 0.5)

        monkeypatch.setattr(OptimizerService, 'update', small_step)
        _, trace = optimize(OptimizationConfig(max_sweeps=4, tol=1e-6))
        assert not trace.converged
        assert not trace.stalled
        assert len(trace.energies) == 4

    def test_gap_report(self):
        trace = OptimizationTrace(energies=[-1.27], exact_energy=CRITICAL_ENERGY)
        report = trace.gap_report(2)
        assert report['target'] == 1e-3
        assert report['met'] is False
        assert report['gap'] == pytest.approx(trace.energy_error - 1e-3)
        assert OptimizationTrace(energies=[CRITICAL_ENERGY + 5e-5], exact_energy=CRITICAL_ENERGY).gap_report(4)['met']
        assert trace.gap_report(3) is None
        assert OptimizationTrace(energies=[-1.27]).gap_report(2) is None

    @pytest.mark.slow
    def test_critical_ising_at_d2(self):
        # the best product state reaches -1.25 per site at h = 1
        network, trace = optimize(OptimizationConfig())
        assert trace.final_energy < -1.25
        assert -1e-9 <= trace.energy_error < 1e-2
        report = trace.gap_report(2)
        assert report['energy_error'] == trace.energy_error
        assert report['met'] == (trace.energy_error <= 1e-3)
        kappas = critical_kappas(network)
        for axis, expected in (('x', 2 ** -0.125), ('y', 2 ** -1.125), ('z', 0.5)):
            assert kappas[axis]['kappa'] is not None
            assert abs(kappas[axis]['kappa'] - expected) < 0.05
