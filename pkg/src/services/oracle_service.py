"""
Oracle Service Module
Brute-force references: full state-vector expansion of small finite
networks, exact expectations and partial traces, and transverse-field
Ising ground-state data.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.sparse

from config import Config
from src.core.exceptions import ResourceGuardError
from src.network.mera import FiniteMera, MeraLayer

logger = logging.getLogger(__name__)

# Decay exponents of the x, y and z two-point functions of the critical Ising chain.
ISING_NU = {'x': 0.25, 'y': 2.25, 'z': 2.0}


@dataclass(frozen=True, eq=False)
class StateVector:
    n: int  # number of sites
    D: int
    amplitudes: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape((self.D,) * self.n)


@dataclass(frozen=True)
class IsingReference:
    h: float
    energy_density: float
    nu: Dict[str, float]
    kappa_th: Dict[str, float]


@dataclass(frozen=True, eq=False)
class IsingGround:
    n: int
    h: float
    energy_density: float
    state: np.ndarray
    thermodynamic_energy_density: float


def _expand_layer(psi: np.ndarray, layer: MeraLayer, reverse: bool = False) -> np.ndarray:
    """One layer of descent on a full state tensor (coarse legs in site order)."""
    sites = range(layer.size)
    if not reverse:
        for q in sites:
            psi = np.tensordot(psi, layer.isometry(q).tensor.conj(), axes=([0], [0]))
        # legs are now mid sites (N_f - 1, 0, 1, ..., N_f - 2)
        psi = np.moveaxis(psi, 0, -1)
        for i in sites:
            psi = np.tensordot(psi, layer.disentangler(i).tensor.conj(), axes=([0, 1], [0, 1]))
        return psi
    for q in reversed(sites):
        psi = np.tensordot(layer.isometry(q).tensor.conj(), psi, axes=([0], [psi.ndim - 1]))
    psi = np.moveaxis(psi, 0, -1)
    for i in reversed(sites):
        psi = np.tensordot(layer.disentangler(i).tensor.conj(), psi, axes=([0, 1], [psi.ndim - 2, psi.ndim - 1]))
    return psi


class OracleService:
    """Brute-force reference computations."""

    @staticmethod
    def required_bytes(mera: FiniteMera) -> int:
        return (mera.D ** mera.N) * np.dtype(complex).itemsize

    @staticmethod
    def expand_state(mera: FiniteMera, reverse: bool = False, limit: int = None) -> StateVector:
        """
        Contract the whole network into a state vector.

        Args:
            mera: Finite network with D**N within the guard
            reverse: Contract every layer in the opposite site order
            limit: Maximum number of amplitudes (Config.STATE_LIMIT)

        Returns:
            StateVector on N sites
        """
        limit = Config.STATE_LIMIT if limit is None else limit
        amplitudes = mera.D ** mera.N
        if amplitudes > limit:
            need = OracleService.required_bytes(mera)
            raise ResourceGuardError(
                f"Expanding N={mera.N}, D={mera.D} needs {amplitudes} amplitudes ({need / 2 ** 20:.1f} MiB); "
                f"limit is {limit}",
                required_bytes=need,
            )
        psi = np.array(mera.top.tensor)
        for level in range(mera.levels, 0, -1):
            psi = _expand_layer(psi, mera.layer(level), reverse=reverse)
        state = StateVector(n=mera.N, D=mera.D, amplitudes=psi.reshape(-1))
        if abs(state.norm - 1.0) > 1e-10:
            logger.warning("Expanded state has norm %.12f", state.norm)
        return state

    @staticmethod
    def apply_operator(psi: StateVector, theta: np.ndarray, sites: Sequence[int]) -> np.ndarray:
        """theta acting on the given sites (in order) of psi."""
        sites = [int(s) for s in sites]
        if any(not 0 <= s < psi.n for s in sites) or len(set(sites)) != len(sites):
            raise ValueError(f"Sites {sites} invalid for {psi.n} sites")
        w = len(sites)
        op = np.asarray(theta).reshape((psi.D,) * (2 * w))
        moved = np.tensordot(op, psi.tensor(), axes=(list(range(w, 2 * w)), sites))
        # result legs: operator outputs, then the untouched sites in order
        rest = [s for s in range(psi.n) if s not in sites]
        order = [0] * psi.n
        for a, s in enumerate(sites):
            order[s] = a
        for b, s in enumerate(rest):
            order[s] = w + b
        return np.transpose(moved, order).reshape(-1)

    @staticmethod
    def exact_expectation(psi: StateVector, theta: np.ndarray, sites: Sequence[int]) -> complex:
        """<psi| theta_sites |psi>."""
        return complex(np.vdot(psi.amplitudes, OracleService.apply_operator(psi, theta, sites)))

    @staticmethod
    def exact_reduced_density(psi: StateVector, sites: Sequence[int]) -> np.ndarray:
        """Partial trace of |psi><psi| onto the sites, legs in the given order."""
        sites = [int(s) for s in sites]
        rest = [s for s in range(psi.n) if s not in sites]
        a = np.transpose(psi.tensor(), sites + rest).reshape(psi.D ** len(sites), -1)
        return a @ a.conj().T

    @staticmethod
    def ising_hamiltonian(n: int, h: float = 1.0) -> scipy.sparse.csr_matrix:
        """Periodic H = -sum sigma^x_i sigma^x_{i+1} - h sum sigma^z_i."""
        sx = scipy.sparse.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
        sz = scipy.sparse.csr_matrix(np.array([[1.0, 0.0], [0.0, -1.0]]))

        def site_op(ops: Dict[int, scipy.sparse.csr_matrix]) -> scipy.sparse.csr_matrix:
            result = scipy.sparse.identity(1, format='csr')
            for s in range(n):
                result = scipy.sparse.kron(result, ops.get(s, scipy.sparse.identity(2, format='csr')), format='csr')
            return result

        dim = 2 ** n
        H = scipy.sparse.csr_matrix((dim, dim))
        for s in range(n):
            H = H - site_op({s: sx, (s + 1) % n: sx})
            H = H - h * site_op({s: sz})
        return H

    @staticmethod
    def ising_energy_density(h: float = 1.0) -> float:
        """Free-fermion ground energy per site: -(1/pi) int_0^pi sqrt(1 + h^2 - 2h cos k) dk."""
        value, _ = scipy.integrate.quad(lambda k: np.sqrt(1.0 + h * h - 2.0 * h * np.cos(k)), 0.0, np.pi,
                                        epsabs=1e-13, epsrel=1e-13, limit=200)
        return -value / np.pi

    @staticmethod
    def ising_ground(n: int, h: float = 1.0) -> IsingGround:
        """Dense ground state of the periodic chain (n <= 12)."""
        if n > 12:
            raise ResourceGuardError(f"Dense Ising diagonalization is limited to n <= 12, got n={n}",
                                     required_bytes=(2 ** n) ** 2 * 8)
        if n < 2:
            raise ValueError("Ising chain needs n >= 2")
        H = OracleService.ising_hamiltonian(n, h).toarray()
        energies, vectors = scipy.linalg.eigh(H, subset_by_index=[0, 0])
        return IsingGround(
            n=n, h=h,
            energy_density=float(energies[0]) / n,
            state=vectors[:, 0],
            thermodynamic_energy_density=OracleService.ising_energy_density(h),
        )

    @staticmethod
    def ising_reference(h: float = 1.0) -> IsingReference:
        return IsingReference(
            h=h,
            energy_density=OracleService.ising_energy_density(h),
            nu=dict(ISING_NU),
            kappa_th={axis: float(2.0 ** (-nu / 2.0)) for axis, nu in ISING_NU.items()},
        )
