"""
Optimizer Service Module
Variational energy minimization of a scale-invariant MERA for a
translation-invariant nearest-neighbour Hamiltonian.

Each sweep computes the fixed point rho_T of the averaged descending
channel and the exact derivative of Tr[rho_T h3] through the ascended
Hamiltonian sum_t A^t(h3 - E), then updates chi and lam in turn. An update
tries the polar factor of the negated (biased) environment and a projected
gradient step retracted by the polar factor, keeping whichever lowers the
energy most; the gradient step size adapts between sweeps.

The Ising model at D = 2**b blocks b spins into every site; energies are
reported per spin.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.linalg

from config import Config
from src.core.exceptions import (
    DegeneratePolarError,
    KappaUndefinedError,
    ManifestError,
    NonMixingError,
    OptimizationError,
)
from src.core.tensor_ops import eig_leading, hermitize, polar_isometry, swap_matrix
from src.network.mera import Disentangler, Isometry, ScaleInvariantMera, product_top, random_network
from src.services.channel_service import (
    KrausFamily,
    build_m5,
    heisenberg_apply,
    kraus_family,
    schrodinger_apply,
)
from src.services.observable_service import kappa_state, pauli_observable
from src.services.oracle_service import OracleService
from src.services.transfer_service import density_from_vector, filtered_kappa, liouville_matrix, spectral_analysis
from src.utils.performance import PerformanceTracker

logger = logging.getLogger(__name__)

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

# energy error per spin expected of the critical Ising optimum at each leg dimension
ENERGY_TARGETS = {2: 1e-3, 4: 1e-4}


def spins_per_site(D: int) -> Optional[int]:
    """b with D = 2**b, None otherwise."""
    b = int(round(np.log2(D))) if D >= 2 else 0
    return b if b >= 1 and 2 ** b == D else None


def site_parity(D: int) -> Optional[np.ndarray]:
    """Product of sigma^z over the spins of a site, None unless D = 2**b."""
    if spins_per_site(D) is None:
        return None
    return np.diag([(-1.0) ** bin(i).count('1') for i in range(D)]).astype(complex)


@dataclass
class HamiltonianSpec:
    model: str = 'ising'  # ising | custom
    h: float = 1.0
    two_site: Optional[np.ndarray] = None

    def spins(self, D: int) -> int:
        """Physical spins per site; energies are divided by this."""
        if self.model != 'ising':
            return 1
        b = spins_per_site(D)
        if b is None:
            raise ValueError(f"The Ising model needs D = 2**b (b spins per site), got D={D}")
        return b

    def two_site_term(self, D: int) -> np.ndarray:
        if self.model == 'ising':
            return ising_two_site(self.h, self.spins(D))
        if self.two_site is None or self.two_site.shape != (D * D, D * D):
            raise ValueError(f"Custom Hamiltonian needs a {D * D} x {D * D} two-site term")
        return np.asarray(self.two_site, dtype=complex)


@dataclass
class OptimizationConfig:
    D: int = 2
    max_sweeps: int = 2000
    tol: float = 1e-10
    seed: int = Config.SEED
    hamiltonian: HamiltonianSpec = field(default_factory=HamiltonianSpec)
    symmetric: bool = False  # reflection-symmetric chi and lam
    real: bool = True  # real tensors when the Hamiltonian is real
    parity: bool = True  # parity-even tensors when the Hamiltonian conserves the site parity
    env_terms: int = Config.ENV_TERMS

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError(f"Tolerance must be positive, got {self.tol}")
        if self.D < 2:
            raise ValueError(f"Leg dimension must be >= 2, got {self.D}")
        if self.max_sweeps < 1 or self.env_terms < 1:
            raise ValueError("max_sweeps and env_terms must be positive")
        self.hamiltonian.two_site_term(self.D)

    def echo(self) -> Dict:
        spec = {'model': self.hamiltonian.model}
        if self.hamiltonian.model == 'ising':
            spec['h'] = self.hamiltonian.h
        else:
            spec['two_site'] = [[[float(z.real), float(z.imag)] for z in row] for row in self.hamiltonian.two_site]
        return {'D': self.D, 'max_sweeps': self.max_sweeps, 'tol': self.tol, 'seed': self.seed,
                'hamiltonian': spec, 'symmetric': self.symmetric, 'real': self.real, 'parity': self.parity,
                'env_terms': self.env_terms}


@dataclass
class OptimizationTrace:
    energies: List[float] = field(default_factory=list)  # per spin
    residuals: List[float] = field(default_factory=list)  # |polar(-E) - W|, max over chi and lam
    gradients: List[float] = field(default_factory=list)  # projected gradient norm, max over chi and lam
    wall_times: List[float] = field(default_factory=list)
    step_sizes: List[float] = field(default_factory=list)  # |W' - W| of the accepted updates, 0 if both rejected
    restarts: int = 0
    converged: bool = False
    stalled: bool = False
    exact_energy: Optional[float] = None

    @property
    def final_energy(self) -> Optional[float]:
        return self.energies[-1] if self.energies else None

    @property
    def energy_error(self) -> Optional[float]:
        if self.exact_energy is None or not self.energies:
            return None
        return self.energies[-1] - self.exact_energy

    def gap_report(self, D: int) -> Optional[Dict]:
        """Energy error against the target for D; None without an exact energy or a target."""
        target = ENERGY_TARGETS.get(D)
        if target is None or self.energy_error is None:
            return None
        return {'target': target, 'energy_error': self.energy_error, 'met': self.energy_error <= target,
                'gap': max(self.energy_error - target, 0.0)}


def load_config(path: Union[str, Path]) -> OptimizationConfig:
    """Optimization config from a JSON file."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as e:
        raise ManifestError(f"Cannot read optimization config {path}: {str(e)}")
    spec = data.get('hamiltonian', {'model': 'ising', 'h': 1.0})
    two_site = None
    if spec.get('model') == 'custom':
        two_site = np.array([[complex(e[0], e[1]) for e in row] for row in spec['two_site']])
    try:
        return OptimizationConfig(
            D=int(data.get('D', 2)),
            max_sweeps=int(data.get('max_sweeps', 2000)),
            tol=float(data.get('tol', 1e-10)),
            seed=int(data.get('seed', Config.SEED)),
            hamiltonian=HamiltonianSpec(model=spec.get('model', 'ising'), h=float(spec.get('h', 1.0)),
                                        two_site=two_site),
            symmetric=bool(data.get('symmetric', False)),
            real=bool(data.get('real', True)),
            parity=bool(data.get('parity', True)),
            env_terms=int(data.get('env_terms', Config.ENV_TERMS)),
        )
    except ValueError as e:
        raise ManifestError(f"Invalid optimization config {path}: {str(e)}")


def ising_two_site(h: float = 1.0, spins: int = 1) -> np.ndarray:
    """
    Two-site term of the transverse-field Ising chain with `spins` spins per site.

    The bond -sigma^x sigma^x between the last spin of the left site and the
    first spin of the right site, plus half of each site's internal terms
    (field and intra-site bonds), so that summing over all pairs of sites
    counts every term of the chain once.
    """
    eye = np.eye(2 ** spins)

    def on_spin(single: np.ndarray, position: int) -> np.ndarray:
        return np.kron(np.kron(np.eye(2 ** position), single), np.eye(2 ** (spins - position - 1)))

    inner = -h * sum(on_spin(SIGMA_Z, p) for p in range(spins))
    for p in range(spins - 1):
        inner = inner - on_spin(SIGMA_X, p) @ on_spin(SIGMA_X, p + 1)
    bond = -np.kron(on_spin(SIGMA_X, spins - 1), on_spin(SIGMA_X, 0))
    return bond + (np.kron(inner, eye) + np.kron(eye, inner)) / 2.0


def three_site_term(h2: np.ndarray, D: int) -> np.ndarray:
    """(h2 (x) I + I (x) h2) / 2."""
    eye = np.eye(D)
    return (np.kron(h2, eye) + np.kron(eye, h2)) / 2.0


def ascend_hamiltonian(h3: np.ndarray, chi: Disentangler, lam: Isometry) -> np.ndarray:
    """Average of the L and R Heisenberg maps of one level."""
    return heisenberg_apply(kraus_family(ScaleInvariantMera(chi, lam, product_top(chi.D)), 'avg'), h3)


def descend_density(rho3: np.ndarray, chi: Disentangler, lam: Isometry) -> np.ndarray:
    """Average of the L and R Schroedinger maps of one level."""
    return schrodinger_apply(kraus_family(ScaleInvariantMera(chi, lam, product_top(chi.D)), 'avg'), rho3)


# ket-derivative of Tr[rho M (H on the window) M^dagger] per side, M reshaped around the window
_DERIVATIVE = 'vu,lm,vamb->ualb'

_ENVIRONMENTS = {
    'lam1': 'ABCGHIJKL,abHI,Bbc,cdJK,CdL->AGa',
    'chi1': 'ABCGHIJKL,AGa,Bbc,cdJK,CdL->abHI',
    'lam2': 'ABCGHIJKL,AGa,abHI,cdJK,CdL->Bbc',
    'chi2': 'ABCGHIJKL,AGa,abHI,Bbc,CdL->cdJK',
    'lam3': 'ABCGHIJKL,AGa,abHI,Bbc,cdJK->CdL',
}


@dataclass
class UpdateResult:
    network: ScaleInvariantMera
    energy: float
    rho: np.ndarray
    step: float  # |W' - W|; 0 when rejected
    residual: float
    gradient: float


class OptimizerService:
    """
    Scale-invariant MERA optimizer.

    The object holds the current (chi, lam) pair, the fixed point used as
    a warm start and the adaptive gradient steps; it is mutated only
    between sweeps.
    """

    def __init__(self, config: OptimizationConfig):
        """
        Initialize the optimizer.

        Args:
            config: Optimization settings
        """
        self.config = config
        self.D = config.D
        h2 = config.hamiltonian.two_site_term(config.D)
        self.spins = config.hamiltonian.spins(config.D)
        self.h3 = three_site_term(h2, config.D) / self.spins
        self.network: Optional[ScaleInvariantMera] = None
        self._warm: Optional[np.ndarray] = None
        self.steps = {'chi': Config.STEP_SIZE, 'lam': Config.STEP_SIZE}

        self.real = config.real and not np.any(np.asarray(h2).imag)
        parity = site_parity(config.D) if config.parity else None
        if parity is not None and not np.allclose(np.kron(parity, parity) @ h2 @ np.kron(parity, parity), h2,
                                                  atol=1e-12):
            parity = None
        self.parity = parity
        logger.info("Tensor constraints: real=%s parity=%s reflection=%s", self.real, self.parity is not None,
                    config.symmetric)

        exact = None
        if config.hamiltonian.model == 'ising':
            exact = OracleService.ising_energy_density(config.hamiltonian.h)
        self.trace = OptimizationTrace(exact_energy=exact)

    # ------------------------------------------------------------------
    # Energy and fixed point
    # ------------------------------------------------------------------

    def fixed_point(self, family: KrausFamily) -> Tuple[np.ndarray, float]:
        """rho_T of a channel and the modulus of its second eigenvalue."""
        dim = family.dim
        if dim * dim < Config.DENSE_EIG_LIMIT:
            S = spectral_analysis(liouville_matrix(family))
            if not S.mixing:
                raise NonMixingError("Averaged channel is not mixing", spectrum_excerpt=S.eigenvalues[:6])
            return S.fixed_point, S.subleading_modulus

        def apply(v: np.ndarray) -> np.ndarray:
            return schrodinger_apply(family, v.reshape(dim, dim), enforce_trace=False).reshape(-1)

        result = eig_leading(apply, dim * dim, 2, v0=self._warm)
        second = float(abs(result.values[1]))
        if second >= 1.0 - Config.MIXING_TOL:
            raise NonMixingError("Averaged channel is not mixing", spectrum_excerpt=result.values)
        self._warm = result.vectors[:, 0]
        return density_from_vector(result.vectors[:, 0], dim), second

    def energy(self, network: ScaleInvariantMera) -> Tuple[float, np.ndarray]:
        """Energy per spin Tr[rho_T h3] and rho_T."""
        rho, _ = self.fixed_point(kraus_family(network, 'avg'))
        return float(np.trace(rho @ self.h3).real), rho

    def response_hamiltonian(self, network: ScaleInvariantMera, energy: Optional[float] = None) -> np.ndarray:
        """
        sum_t A^t(h3 - E I) with A the averaged ascending map.

        The terms decay like the subleading spectrum of A; the sum stops once
        a term falls below Config.ENV_TOL relative to h3, or after env_terms.
        """
        if energy is None:
            energy, _ = self.energy(network)
        family = kraus_family(network, 'avg')
        term = self.h3 - energy * np.eye(self.h3.shape[0])
        total = term.copy()
        floor = Config.ENV_TOL * max(float(np.linalg.norm(self.h3)), 1.0)
        for t in range(1, self.config.env_terms):
            term = heisenberg_apply(family, term)
            total = total + term
            if np.linalg.norm(term) < floor:
                break
        else:
            logger.warning("Ascended Hamiltonian truncated after %d terms (last term %.3e)",
                           self.config.env_terms, float(np.linalg.norm(term)))
        return hermitize(total)

    def environment_hamiltonian(self, network: ScaleInvariantMera, energy: Optional[float] = None) -> np.ndarray:
        """The response Hamiltonian shifted by its largest eigenvalue; negative semidefinite."""
        total = self.response_hamiltonian(network, energy)
        bias = float(scipy.linalg.eigvalsh(total).max())
        return total - bias * np.eye(total.shape[0])

    # ------------------------------------------------------------------
    # Environments
    # ------------------------------------------------------------------

    def environments(self, network: ScaleInvariantMera, rho: np.ndarray, h_env: np.ndarray) -> Dict[str, np.ndarray]:
        """
        Derivatives of Tr[h_env Phi(rho)] with respect to conj(chi) and conj(lam).

        With h_env the response Hamiltonian these are the derivatives of the
        energy per spin: dE = 2 Re <env, dW>.
        """
        D = self.D
        m5 = build_m5(network.lam, network.chi).tensor.reshape(D ** 3, D ** 6)
        shapes = {'L': (D ** 3, D, D ** 3, D ** 2), 'R': (D ** 3, D ** 2, D ** 3, D)}
        lam, chi = network.lam.tensor, network.chi.tensor
        others = {'lam1': (chi, lam, chi, lam), 'chi1': (lam, lam, chi, lam), 'lam2': (lam, chi, chi, lam),
                  'chi2': (lam, chi, lam, lam), 'lam3': (lam, chi, lam, chi)}
        env_lam = np.zeros_like(lam)
        env_chi = np.zeros_like(chi)
        for side, shape in shapes.items():
            g = np.einsum(_DERIVATIVE, rho, h_env, m5.reshape(shape).conj(), optimize=True).reshape((D,) * 9)
            for name, spec in _ENVIRONMENTS.items():
                env = 0.5 * np.einsum(spec, g, *others[name], optimize=True)
                if name.startswith('lam'):
                    env_lam = env_lam + env
                else:
                    env_chi = env_chi + env
        return {'lam': env_lam.conj(), 'chi': env_chi.conj()}

    # ------------------------------------------------------------------
    # Constraints
    # ------------------------------------------------------------------

    def constrain(self, role: str, m: np.ndarray) -> np.ndarray:
        """Project a chi or lam matrix onto the real, parity-even and reflection-symmetric subspace in use."""
        if self.real:
            m = m.real.astype(complex)
        if self.parity is not None:
            pair = np.kron(self.parity, self.parity)
            upper = pair if role == 'chi' else self.parity
            m = (m + upper @ m @ pair) / 2
        if self.config.symmetric:
            s = swap_matrix(self.D, 2, 0, 1)
            m = (m + s @ m @ s) / 2 if role == 'chi' else (m + m @ s) / 2
        return m

    @staticmethod
    def tangent(w: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Component of g tangent to the co-isometries at w (w w^dagger = I)."""
        s = g @ w.conj().T
        return g - hermitize(s) @ w

    def _retract(self, role: str, target: np.ndarray) -> Optional[np.ndarray]:
        try:
            m = polar_isometry(target)
        except DegeneratePolarError as e:
            logger.debug("Skipping %s candidate: %s", role, str(e))
            return None
        return m.real.astype(complex) if self.real else m

    @staticmethod
    def matrix(network: ScaleInvariantMera, role: str) -> np.ndarray:
        return network.chi.matrix() if role == 'chi' else network.lam.matrix()

    def replace(self, network: ScaleInvariantMera, role: str, m: np.ndarray) -> ScaleInvariantMera:
        D = self.D
        if role == 'chi':
            return ScaleInvariantMera(Disentangler(m.reshape(D, D, D, D)), network.lam, network.top)
        return ScaleInvariantMera(network.chi, Isometry(m.reshape(D, D, D)), network.top)

    # ------------------------------------------------------------------
    # Updates
    # ------------------------------------------------------------------

    def update(self, network: ScaleInvariantMera, role: str, energy: float, rho: np.ndarray,
               h_env: np.ndarray) -> UpdateResult:
        """
        Update chi or lam against the biased environment Hamiltonian h_env.

        Candidates are the polar factor of the negated environment and the
        polar retraction of a projected gradient step; the step is quartered
        up to Config.BACKTRACKS times until one lowers the energy.
        """
        w = self.matrix(network, role)
        env = self.constrain(role, self.environments(network, rho, h_env)[role].reshape(w.shape))
        gradient = self.tangent(w, env)
        gradient_norm = float(np.linalg.norm(gradient))
        full = self._retract(role, -env)
        residual = float(np.linalg.norm(full - w)) if full is not None else float('nan')

        step = self.steps[role]
        for attempt in range(Config.BACKTRACKS + 1):
            candidates = [self._retract(role, w - step * gradient)]
            if attempt == 0:
                candidates.append(full)
            best = None
            for m in candidates:
                if m is None:
                    continue
                trial = self.replace(network, role, m)
                try:
                    trial_energy, trial_rho = self.energy(trial)
                except NonMixingError:
                    continue
                if trial_energy <= energy + 1e-12 and (best is None or trial_energy < best.energy):
                    best = UpdateResult(trial, trial_energy, trial_rho, float(np.linalg.norm(m - w)),
                                        residual, gradient_norm)
            if best is not None:
                self.steps[role] = min(1.5 * step, 1e3 * Config.STEP_SIZE) if attempt == 0 else step
                return best
            step /= 4.0
        self.steps[role] = step
        logger.info("Rejected %s update (no step lowers the energy, step now %.3g)", role, step)
        return UpdateResult(network, energy, rho, 0.0, residual, gradient_norm)

    def sweep(self) -> float:
        """One chi update followed by one lam update; returns the energy per spin."""
        network, energy, rho = self.network, self._energy, self._rho
        results = []
        for role in ('chi', 'lam'):
            h_env = self.environment_hamiltonian(network, energy)
            result = self.update(network, role, energy, rho, h_env)
            network, energy, rho = result.network, result.energy, result.rho
            results.append(result)
        self.network, self._energy, self._rho = network, energy, rho
        self.trace.residuals.append(max(r.residual for r in results))
        self.trace.gradients.append(max(r.gradient for r in results))
        self.trace.step_sizes.append(max(r.step for r in results))
        return energy

    # ------------------------------------------------------------------
    # Driver
    # ------------------------------------------------------------------

    def initial_network(self, attempt: int) -> ScaleInvariantMera:
        seed = self.config.seed + 1000 * attempt
        network = random_network(D=self.D, seed=seed, scale_invariant=True, symmetric=self.config.symmetric)
        for role in ('chi', 'lam'):
            network = self.replace(network, role, self._retract(role, self.constrain(role, self.matrix(network, role))))
        return network

    def run(self) -> Tuple[ScaleInvariantMera, OptimizationTrace]:
        """
        Optimize until the energy and the gradient are stationary, the run stalls, or sweeps run out.

        Returns:
            (optimized network, trace)
        """
        for attempt in range(Config.MAX_RETRIES + 1):
            self.network = self.initial_network(attempt)
            self._warm = None
            self.steps = {'chi': Config.STEP_SIZE, 'lam': Config.STEP_SIZE}
            self.trace = OptimizationTrace(exact_energy=self.trace.exact_energy, restarts=attempt)
            try:
                self._iterate()
                return self.network, self.trace
            except NonMixingError as e:
                logger.warning("Non-mixing channel on attempt %d: %s", attempt + 1, str(e))
        raise OptimizationError(f"Channel stayed non-mixing after {Config.MAX_RETRIES} restarts", trace=self.trace)

    def _iterate(self):
        self._energy, self._rho = self.energy(self.network)
        previous = self._energy
        rejected = 0
        for sweep in range(1, self.config.max_sweeps + 1):
            energy, seconds = PerformanceTracker.track_execution(self.sweep)
            self.trace.energies.append(energy)
            self.trace.wall_times.append(seconds)
            if sweep % 10 == 0 or sweep == 1:
                logger.info("Sweep %d: energy %.12f (gradient %.3g, step %.3g, %.2fs)", sweep, energy,
                            self.trace.gradients[-1], self.trace.step_sizes[-1], seconds)
            if self.trace.step_sizes[-1] == 0.0:
                rejected += 1
                if rejected >= Config.STALL_SWEEPS:
                    self.trace.stalled = True
                    logger.warning("Stopping after %d sweeps without an accepted update", rejected)
                    break
                continue
            rejected = 0
            if abs(previous - energy) < self.config.tol and self.trace.gradients[-1] < np.sqrt(self.config.tol):
                self.trace.converged = True
                break
            previous = energy
        metrics = PerformanceTracker.create_metrics(self.trace.wall_times, 'optimizer sweeps')
        logger.info("Optimization finished: %d sweeps in %.1fs, energy %.12f",
                    metrics['steps'], metrics['total_s'], self.trace.final_energy)


def critical_kappas(network: ScaleInvariantMera, h: float = 1.0) -> Dict[str, Dict]:
    """
    Filtered kappa of sigma^x, sigma^y and sigma^z on the R channel, next to the Ising values 2**(-nu/2).

    A kappa that no mode carries is reported as None.
    """
    S = spectral_analysis(liouville_matrix(kraus_family(network, 'R')))
    state = kappa_state(network)
    reference = OracleService.ising_reference(h).kappa_th
    report = {}
    for axis in ('x', 'y', 'z'):
        try:
            kappa = filtered_kappa(S, pauli_observable(axis, network.D).window_matrix(), state).kappa
        except KappaUndefinedError:
            kappa = None
        report[axis] = {'kappa': kappa, 'kappa_th': reference[axis],
                        'difference': None if kappa is None else kappa - reference[axis]}
    return report


# Factory function
def create_optimizer_service(config: Optional[OptimizationConfig] = None) -> OptimizerService:
    """
    Factory function to create an optimizer.

    Args:
        config: Optimization settings (defaults: critical Ising, D = 2)

    Returns:
        OptimizerService instance
    """
    return OptimizerService(config or OptimizationConfig())


def optimize(config: OptimizationConfig) -> Tuple[ScaleInvariantMera, OptimizationTrace]:
    """Run a fresh optimizer for the given settings."""
    return create_optimizer_service(config).run()
