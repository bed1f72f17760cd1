"""
Transfer Service Module
Liouville-space transfer operator of a scale-invariant channel: spectrum,
fixed point, mixing diagnosis, overlap-filtered subleading modulus and the
power-iteration reference.

Vectorization is row-major: vec(A X B) = (A (x) B^T) vec(X), and
Tr[theta X] = vec(theta^T) . vec(X).
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg

from config import Config
from src.core.exceptions import ChannelError, KappaUndefinedError, NonMixingError
from src.core.tensor_ops import eig_dense, eig_leading, hermitize, sort_by_modulus, trace_distance
from src.services.channel_service import KrausFamily, schrodinger_apply

logger = logging.getLogger(__name__)

READINGS = ('schrodinger', 'heisenberg')


@dataclass(frozen=True, eq=False)
class LiouvilleOperator:
    """Row-major Liouville matrix of a channel; reading tags which picture it implements."""
    matrix: np.ndarray
    reading: str
    D: int
    width: int

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def schrodinger(self) -> np.ndarray:
        return self.matrix if self.reading == 'schrodinger' else self.matrix.conj().T


@dataclass(frozen=True, eq=False)
class SpectralData:
    eigenvalues: np.ndarray  # descending modulus
    right_vectors: np.ndarray  # columns
    left_vectors: Optional[np.ndarray]  # rows, biorthonormal to right_vectors
    fixed_point: Optional[np.ndarray]
    gap: float
    kappa: float  # |lambda_2| until filtered_kappa narrows it
    mixing: bool
    operator: LiouvilleOperator
    condition: float = 1.0
    degenerate_basis: List[np.ndarray] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def subleading_modulus(self) -> float:
        return float(abs(self.eigenvalues[1])) if len(self.eigenvalues) > 1 else 0.0


@dataclass
class KappaResult:
    kappa: float
    eigenvalue: complex
    coefficients: List[Dict] = field(default_factory=list)
    schur: bool = False
    state_filter: str = 'state'  # none | state | two-window


@dataclass
class PowerIteration:
    rho: np.ndarray
    distances: List[float]


def liouville_matrix(family: KrausFamily, reading: str = 'schrodinger') -> LiouvilleOperator:
    """
    Liouville matrix of a Kraus family.

    Args:
        family: Kraus family (any width)
        reading: 'schrodinger' for sum_r K_r^dagger (x) K_r^T (acts on states),
                 'heisenberg' for sum_r K_r (x) K_r^* (acts on observables)

    Returns:
        LiouvilleOperator; the two readings are mutual adjoints
    """
    if reading not in READINGS:
        raise ChannelError(f"Unknown reading '{reading}'")
    k = family.operators
    dim = family.dim
    schrodinger = np.einsum('rca,rdb->abcd', k.conj(), k).reshape(dim * dim, dim * dim)
    matrix = schrodinger if reading == 'schrodinger' else schrodinger.conj().T
    return LiouvilleOperator(matrix=matrix, reading=reading, D=family.D, width=family.width)


def density_from_vector(v: np.ndarray, dim: int) -> np.ndarray:
    """Trace-normalize, hermitize and clip a unit eigenvector into a density matrix."""
    rho = v.reshape(dim, dim)
    rho = hermitize(rho / np.trace(rho))
    w, u = scipy.linalg.eigh(rho)
    if w.min() < -1e-10:
        logger.warning("Fixed point has negative eigenvalue %.3e; clipping", w.min())
    w = np.clip(w, 0.0, None)
    rho = (u * w) @ u.conj().T
    return rho / np.trace(rho).real


def spectral_analysis(E: LiouvilleOperator, k: int = 6, mixing_tol: float = None) -> SpectralData:
    """
    Spectrum, fixed point and mixing diagnosis of a transfer operator.

    Dense up to Config.DENSE_EIG_LIMIT, restarted Arnoldi for the leading k
    eigenpairs beyond it.
    """
    mixing_tol = Config.MIXING_TOL if mixing_tol is None else mixing_tol
    matrix = E.schrodinger()
    dim = int(round(np.sqrt(E.dim)))
    notes = []

    if E.dim <= Config.DENSE_EIG_LIMIT:
        result = eig_dense(matrix)
        values, vectors = result.values, result.vectors
        condition = float(np.linalg.cond(vectors))
        left = np.linalg.inv(vectors) if condition <= Config.CONDITION_LIMIT else None
        if left is None:
            notes.append(f"eigenvector condition {condition:.2e}; overlaps use Schur projections")
        notes.extend(result.notes)
    else:
        result = eig_leading(lambda x: matrix @ x, E.dim, k)
        adjoint = eig_leading(lambda x: matrix.conj().T @ x, E.dim, k)
        values, vectors = result.values, result.vectors
        left = np.zeros((k, E.dim), dtype=complex)
        for idx, value in enumerate(values):
            match = int(np.argmin(np.abs(adjoint.values.conj() - value)))
            u = adjoint.vectors[:, match]
            left[idx] = u.conj() / np.vdot(u, vectors[:, idx])
        condition = 1.0
        notes.extend(result.notes + adjoint.notes)

    if abs(values[0] - 1.0) > 1e-8:
        notes.append(f"leading eigenvalue {values[0]:.12g} is not 1")
        logger.warning("Leading eigenvalue %s differs from 1", values[0])
    second = float(abs(values[1])) if len(values) > 1 else 0.0
    mixing = second < 1.0 - mixing_tol
    if mixing and second > 1.0 - 1e-6:
        notes.append(f"near-threshold mixing: |lambda_2| = {second:.12f}")
        logger.warning("Channel is close to non-mixing: |lambda_2| = %.12f", second)

    if mixing:
        fixed_point = density_from_vector(vectors[:, 0], dim)
        degenerate_basis = []
    else:
        fixed_point = None
        unit = [i for i, v in enumerate(values) if abs(v) >= 1.0 - mixing_tol]
        degenerate_basis = [vectors[:, i].reshape(dim, dim) for i in unit]
        logger.warning("Channel is not mixing: %d unimodular eigenvalues", len(unit))

    return SpectralData(
        eigenvalues=values,
        right_vectors=vectors,
        left_vectors=left,
        fixed_point=fixed_point,
        gap=1.0 - second,
        kappa=second,
        mixing=mixing,
        operator=E,
        condition=condition,
        degenerate_basis=degenerate_basis,
        notes=notes,
    )


def _require_mixing(S: SpectralData):
    if not S.mixing:
        raise NonMixingError("Channel is not mixing; see the degenerate-subspace report",
                             spectrum_excerpt=S.eigenvalues[:6])


def cluster_eigenvalues(values: np.ndarray, tol: float = 1e-6) -> List[List[int]]:
    clusters: List[List[int]] = []
    for i, v in enumerate(values):
        for cluster in clusters:
            if abs(values[cluster[0]] - v) < tol * max(1.0, abs(v)):
                cluster.append(i)
                break
        else:
            clusters.append([i])
    return clusters


def spectral_projector(matrix: np.ndarray, center: complex, tol: float = 1e-6) -> np.ndarray:
    """Projector onto the invariant subspace of eigenvalues near center, along the complementary one."""
    radius = tol * max(1.0, abs(center))
    t, z, sdim = scipy.linalg.schur(matrix.astype(complex), output='complex',
                                    sort=lambda x: abs(x - center) < radius)
    n = matrix.shape[0]
    if sdim == 0:
        return np.zeros_like(matrix, dtype=complex)
    if sdim == n:
        return np.eye(n, dtype=complex)
    t11, t12, t22 = t[:sdim, :sdim], t[:sdim, sdim:], t[sdim:, sdim:]
    x = scipy.linalg.solve_sylvester(t11, -t22, -t12)
    block = np.zeros((n, n), dtype=complex)
    block[:sdim, :sdim] = np.eye(sdim)
    block[:sdim, sdim:] = -x
    return z @ block @ z.conj().T


def window_pairs(rho2: np.ndarray, dim: int) -> np.ndarray:
    """Two-window state regrouped so that row (i1, j1) and column (i2, j2) are the vec indices of each window."""
    return rho2.reshape(dim, dim, dim, dim).transpose(0, 2, 1, 3).reshape(dim * dim, dim * dim)


def filtered_kappa(
    S: SpectralData,
    theta: np.ndarray,
    rho: Optional[np.ndarray] = None,
    tol: float = None,
    condition_limit: float = None,
) -> KappaResult:
    """
    Largest subleading modulus whose eigen-direction overlaps both theta and the state.

    A two-window state (window i then window j, as at the merge level of a
    joint cone) filters mode a by its pair overlaps <l_a (x) l_b, rho> with
    the non-unit modes b that theta excites; these are the weights of the
    connected correlator. A single-window state filters by <l_a, rho>, and
    rho=None skips the state filter.

    Args:
        S: Spectral data of a mixing channel
        theta: Observable on the channel's sites
        rho: None, a state on the channel's sites, or a two-window state
        tol: Relative overlap threshold (Config.OVERLAP_TOL)
        condition_limit: Eigenvector conditioning above which Schur projections are used

    Returns:
        KappaResult with the coefficient table
    """
    _require_mixing(S)
    tol = Config.OVERLAP_TOL if tol is None else tol
    condition_limit = Config.CONDITION_LIMIT if condition_limit is None else condition_limit
    dim = int(round(np.sqrt(S.operator.dim)))
    if rho is None:
        state_filter = 'none'
    elif rho.shape == (dim * dim, dim * dim):
        state_filter = 'two-window'
    elif rho.shape == (dim, dim):
        state_filter = 'state'
    else:
        raise ChannelError(f"State of shape {rho.shape} fits neither one nor two {dim}-dimensional windows")
    theta_vec = theta.T.reshape(-1)
    values = S.eigenvalues

    use_schur = S.left_vectors is None or S.condition > condition_limit
    if not use_schur:
        groups = [[i] for i in range(len(values))]
        left = np.abs(theta_vec @ S.right_vectors[:, :len(values)])
        if state_filter == 'two-window':
            pairs = np.abs(S.left_vectors @ window_pairs(rho, dim) @ S.left_vectors.T)
        elif state_filter == 'state':
            right = np.abs(S.left_vectors @ rho.reshape(-1))
    else:
        matrix = S.operator.schrodinger()
        groups = cluster_eigenvalues(values)
        projectors = [spectral_projector(matrix, values[group[0]]) for group in groups]
        left = np.array([np.linalg.norm(p.T @ theta_vec) for p in projectors])
        if state_filter == 'two-window':
            regrouped = window_pairs(rho, dim)
            pairs = np.array([[np.linalg.norm(p @ regrouped @ q.T) for q in projectors] for p in projectors])
        elif state_filter == 'state':
            right = np.array([np.linalg.norm(p @ rho.reshape(-1)) for p in projectors])

    group_values = [values[max(group, key=lambda i: abs(values[i]))] for group in groups]
    unit = [abs(value - 1.0) < 1e-8 for value in group_values]
    left_rel = left / left.max() if left.max() > 0 else left
    if state_filter == 'none':
        right = np.ones(len(groups))
    elif state_filter == 'two-window':
        partners = [h for h in range(len(groups)) if left_rel[h] > tol and not unit[h]]
        right = pairs[:, partners].max(axis=1) if partners else np.zeros(len(groups))
    # two-window weights are relative to the unit pair, which carries the trace
    scale = pairs.max() if state_filter == 'two-window' else right.max()
    right_rel = right / scale if scale > 0 else right

    table = []
    best = None
    for g, group in enumerate(groups):
        value = group_values[g]
        contributes = (not unit[g]) and left_rel[g] > tol and right_rel[g] > tol
        table.append({
            'index': group[0],
            'multiplicity': len(group),
            'eigenvalue': complex(value),
            'modulus': float(abs(value)),
            'left': float(left_rel[g]),
            'right': float(right_rel[g]),
            'contributes': bool(contributes),
        })
        if contributes and (best is None or abs(value) > abs(best)):
            best = value
    if best is None:
        raise KappaUndefinedError("No subleading eigenvalue overlaps both the observable and the state",
                                  coefficients=table)
    return KappaResult(kappa=float(abs(best)), eigenvalue=complex(best), coefficients=table, schur=use_schur,
                       state_filter=state_filter)

def with_kappa(S: SpectralData, result: KappaResult) -> SpectralData:
    return replace(S, kappa=result.kappa)


def thermo_expectation(S: SpectralData, theta: np.ndarray) -> complex:
    """Tr[rho_T theta] = vec(theta^T) . vec(rho_T)."""
    _require_mixing(S)
    return complex(theta.T.reshape(-1) @ S.fixed_point.reshape(-1))


def fixed_point(family: KrausFamily) -> np.ndarray:
    S = spectral_analysis(liouville_matrix(family))
    _require_mixing(S)
    return S.fixed_point


def fixed_point_power(
    family: KrausFamily,
    rho0: np.ndarray,
    m: int,
    reference: Optional[np.ndarray] = None,
) -> PowerIteration:
    """
    Apply the Schroedinger channel m times.

    Args:
        family: Kraus family
        rho0: Initial density matrix
        m: Number of applications
        reference: Fixed point for the trajectory (computed if omitted)

    Returns:
        PowerIteration with Phi^m(rho0) and the trace distances to the reference
    """
    reference = fixed_point(family) if reference is None else reference
    rho = rho0
    distances = [trace_distance(rho, reference)]
    for _ in range(m):
        rho = schrodinger_apply(family, rho, enforce_trace=False)
        distances.append(trace_distance(rho, reference))
    return PowerIteration(rho=rho, distances=distances)


def trajectory_slope(distances: Sequence[float], floor: float = 1e-12, ceiling: float = 1e-3) -> float:
    """Least-squares slope of ln(distance) against iteration over the points within [floor, ceiling]."""
    steps = np.array([i for i, d in enumerate(distances) if floor < d < ceiling], dtype=float)
    if len(steps) < 3:
        raise ValueError("Trajectory has fewer than three points in the fit window")
    logs = np.log([distances[int(i)] for i in steps])
    design = np.column_stack([steps, np.ones_like(steps)])
    (slope, _), *_ = np.linalg.lstsq(design, logs, rcond=None)
    return float(slope)


def scaling_dimensions(S: SpectralData, k: int = 5) -> List[float]:
    """-log2 |lambda| for the k leading non-unit eigenvalues."""
    rest = [v for v in S.eigenvalues if abs(v - 1.0) > 1e-8][:k]
    return [float(-np.log2(abs(v))) if abs(v) > 0 else float('inf') for v in rest]


def lr_spectral_deviation(left: KrausFamily, right: KrausFamily) -> float:
    """Max difference between the sorted eigenvalue moduli of two channels."""
    a = np.sort(np.abs(eig_dense(liouville_matrix(left).matrix).values))
    b = np.sort(np.abs(eig_dense(liouville_matrix(right).matrix).values))
    return float(np.abs(a - b).max())


def spectrum_excerpt(S: SpectralData, count: int = 6) -> List[complex]:
    order = sort_by_modulus(S.eigenvalues)
    return [complex(S.eigenvalues[i]) for i in order[:count]]
