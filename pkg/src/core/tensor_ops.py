"""
Tensor Operations Module
Dense complex tensor algebra shared by every QuMERA service: pairwise
contraction, leg permutation, matrix reshapes, polar projection and the
dense / iterative eigensolvers.

Entries are stored row-major with the leftmost leg slowest, so every
reshape between tensors and matrices is a plain numpy view.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from config import Config
from src.core.exceptions import (
    ContractionError,
    DegeneratePolarError,
    EigenSolverError,
    PermutationError,
)

logger = logging.getLogger(__name__)

# Tensors are plain complex ndarrays; legs are addressed by position.
DenseTensor = np.ndarray


@dataclass(frozen=True)
class EigenResult:
    """Eigenpairs sorted by descending modulus."""
    values: np.ndarray
    vectors: np.ndarray  # columns are right eigenvectors
    residuals: np.ndarray
    degenerate: bool = False
    notes: List[str] = field(default_factory=list)

    def pairs(self) -> List[Tuple[complex, np.ndarray]]:
        return [(complex(self.values[i]), self.vectors[:, i]) for i in range(len(self.values))]


def random_tensor(shape: Sequence[int], rng: np.random.Generator) -> DenseTensor:
    """I.i.d. complex standard Gaussian entries, real and imaginary parts N(0, 1/2)."""
    shape = tuple(int(s) for s in shape)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / np.sqrt(2.0)


def contract(a: DenseTensor, b: DenseTensor, pairs: Sequence[Tuple[int, int]]) -> DenseTensor:
    """
    Contract legs of a with legs of b.

    Args:
        a: First tensor
        b: Second tensor
        pairs: (leg of a, leg of b) pairs to be summed over

    Returns:
        Tensor whose legs are the free legs of a followed by the free legs of b
    """
    legs_a = [int(p[0]) for p in pairs]
    legs_b = [int(p[1]) for p in pairs]
    if len(set(legs_a)) != len(legs_a) or len(set(legs_b)) != len(legs_b):
        raise ContractionError(f"Leg paired twice in {list(pairs)}")
    for la, lb in zip(legs_a, legs_b):
        if not (0 <= la < a.ndim) or not (0 <= lb < b.ndim):
            raise ContractionError(f"Leg pair ({la}, {lb}) out of range for ranks ({a.ndim}, {b.ndim})",
                                   leg_pair=(la, lb))
        if a.shape[la] != b.shape[lb]:
            raise ContractionError(
                f"Dimension mismatch on leg pair ({la}, {lb}): {a.shape[la]} != {b.shape[lb]}",
                leg_pair=(la, lb),
            )
    return np.tensordot(a, b, axes=(legs_a, legs_b))


def permute(a: DenseTensor, order: Sequence[int]) -> DenseTensor:
    """Reorder legs: leg i of the result is leg order[i] of a."""
    order = [int(o) for o in order]
    if sorted(order) != list(range(a.ndim)):
        raise PermutationError(f"{order} is not a permutation of {a.ndim} legs")
    return np.ascontiguousarray(np.transpose(a, order))


def inverse_permutation(order: Sequence[int]) -> List[int]:
    inverse = [0] * len(order)
    for i, o in enumerate(order):
        inverse[o] = i
    return inverse


def to_matrix(a: DenseTensor, n_row_legs: int) -> np.ndarray:
    """Group the first n_row_legs legs into rows and the rest into columns."""
    rows = int(np.prod(a.shape[:n_row_legs], dtype=np.int64))
    return a.reshape(rows, -1)


def from_matrix(m: np.ndarray, shape: Sequence[int]) -> DenseTensor:
    if int(np.prod(shape, dtype=np.int64)) != m.size:
        raise ValueError(f"Cannot reshape {m.shape} matrix into legs {tuple(shape)}")
    return m.reshape(tuple(shape))


def polar_isometry(m: np.ndarray, tol: float = None) -> np.ndarray:
    """
    Isometric polar factor W = U V^dagger of m = U S V^dagger.

    Args:
        m: Tall or wide matrix of full rank
        tol: Relative singular-value floor below which m counts as rank deficient

    Returns:
        W with W^dagger W = I (tall) or W W^dagger = I (wide)
    """
    tol = Config.STRUCT_TOL if tol is None else tol
    u, s, vh = scipy.linalg.svd(m, full_matrices=False)
    scale = max(float(s[0]), 1.0) if s.size else 1.0
    if s.size == 0 or float(s[-1]) <= tol * scale:
        smallest = float(s[-1]) if s.size else 0.0
        raise DegeneratePolarError(
            f"Polar projection of rank-deficient {m.shape} matrix (smallest singular value {smallest:.3e})",
            smallest_singular_value=smallest,
        )
    return u @ vh


def sort_by_modulus(values: np.ndarray) -> np.ndarray:
    """Indices ordering values by descending modulus, ties by real then imaginary part."""
    values = np.asarray(values)
    modulus = np.round(np.abs(values), 12)
    return np.lexsort((-np.round(values.imag, 12), -np.round(values.real, 12), -modulus))


def _residuals(m: np.ndarray, values: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    diff = m @ vectors - vectors * values[np.newaxis, :]
    norms = np.linalg.norm(vectors, axis=0)
    norms[norms == 0] = 1.0
    return np.linalg.norm(diff, axis=0) / norms


def eig_dense(m: np.ndarray, tol: float = None) -> EigenResult:
    """Full eigendecomposition, eigenvalues sorted by descending modulus."""
    tol = Config.EIG_TOL if tol is None else tol
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"eig_dense needs a square matrix, got shape {m.shape}")
    if m.shape[0] > Config.DENSE_EIG_LIMIT:
        logger.warning("Dense eigensolver on %d x %d matrix (limit %d)", m.shape[0], m.shape[1],
                       Config.DENSE_EIG_LIMIT)
    try:
        values, vectors = scipy.linalg.eig(m)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EigenSolverError(f"Dense eigensolver failed: {str(e)}")
    order = sort_by_modulus(values)
    values = values[order]
    vectors = vectors[:, order]
    residuals = _residuals(m, values, vectors)
    worst = float(residuals.max()) if residuals.size else 0.0
    if worst > tol * max(1.0, float(np.linalg.norm(m, 2))):
        raise EigenSolverError(f"Dense eigenpairs have residual {worst:.3e} above tolerance {tol:.1e}",
                               residual=worst)
    return EigenResult(values=values, vectors=vectors, residuals=residuals)


def eig_leading(
    apply: Callable[[np.ndarray], np.ndarray],
    dim: int,
    k: int,
    tol: float = None,
    v0: Optional[np.ndarray] = None,
) -> EigenResult:
    """
    Leading k eigenpairs of a linear action by restarted Arnoldi.

    Args:
        apply: Maps a length-dim vector to its image
        dim: Vector length
        k: Number of eigenpairs
        tol: Residual tolerance
        v0: Optional starting vector (warm start)

    Returns:
        EigenResult; degenerate is set when the k-th and (k+1)-th moduli coincide
    """
    tol = Config.ITER_TOL if tol is None else tol
    if k < 1:
        raise ValueError("eig_leading needs k >= 1")

    if k + 1 >= dim - 1:
        # Too small for ARPACK; materialise the action.
        m = np.column_stack([apply(col) for col in np.eye(dim, dtype=complex)])
        full = eig_dense(m)
        values, vectors = full.values, full.vectors
    else:
        operator = scipy.sparse.linalg.LinearOperator((dim, dim), matvec=apply, dtype=complex)
        start = np.ones(dim, dtype=complex) / np.sqrt(dim) if v0 is None else np.asarray(v0, dtype=complex)
        try:
            values, vectors = scipy.sparse.linalg.eigs(operator, k=k + 1, which='LM', v0=start,
                                                       tol=tol * 1e-2)
        except scipy.sparse.linalg.ArpackNoConvergence as e:
            raise EigenSolverError(f"Arnoldi iteration did not converge: {str(e)}")
        order = sort_by_modulus(values)
        values = values[order]
        vectors = vectors[:, order]

    degenerate = len(values) > k and abs(abs(values[k - 1]) - abs(values[k])) < tol
    values = values[:k]
    vectors = vectors[:, :k]
    images = np.column_stack([apply(vectors[:, i]) for i in range(k)])
    residuals = np.linalg.norm(images - vectors * values[np.newaxis, :], axis=0) / np.linalg.norm(vectors, axis=0)

    notes = []
    if degenerate:
        notes.append("leading cluster extends beyond k")
        logger.warning("Degenerate leading cluster beyond k=%d", k)
    worst = float(residuals.max()) if residuals.size else 0.0
    if worst > tol * max(1.0, float(np.abs(values).max())):
        raise EigenSolverError(f"Leading eigenpairs have residual {worst:.3e} above tolerance {tol:.1e}",
                               residual=worst)
    return EigenResult(values=values, vectors=vectors, residuals=residuals,
                       degenerate=bool(degenerate), notes=notes)


def hermitize(m: np.ndarray) -> np.ndarray:
    return (m + m.conj().T) / 2


def trace_norm(a: np.ndarray) -> float:
    """Sum of the singular values of a."""
    return float(scipy.linalg.svdvals(a).sum())


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Half the trace norm of a - b for hermitian a, b."""
    return 0.5 * float(np.abs(scipy.linalg.eigvalsh(hermitize(a - b))).sum())


def partial_trace(rho: np.ndarray, D: int, n_sites: int, keep: Sequence[int]) -> np.ndarray:
    """Reduced density of the sites in keep, legs in the order of keep."""
    keep = [int(s) for s in keep]
    tensor = rho.reshape((D,) * (2 * n_sites))
    ket = list(range(n_sites))
    bra = [n_sites + s if s in keep else s for s in range(n_sites)]
    out = keep + [n_sites + s for s in keep]
    reduced = np.einsum(tensor, ket + bra, out)
    dim = D ** len(keep)
    return reduced.reshape(dim, dim)


def embed_operator(op: np.ndarray, positions: Sequence[int], n_sites: int, D: int) -> np.ndarray:
    """Operator acting as op on positions (in order) and as identity on the other sites."""
    positions = [int(p) for p in positions]
    w = len(positions)
    rest = [s for s in range(n_sites) if s not in positions]
    r = len(rest)
    full = np.multiply.outer(op.reshape((D,) * (2 * w)), np.eye(D ** r).reshape((D,) * (2 * r)))
    ket_axes, bra_axes = [], []
    for s in range(n_sites):
        if s in positions:
            a = positions.index(s)
            ket_axes.append(a)
            bra_axes.append(w + a)
        else:
            b = rest.index(s)
            ket_axes.append(2 * w + b)
            bra_axes.append(2 * w + r + b)
    dim = D ** n_sites
    return np.transpose(full, ket_axes + bra_axes).reshape(dim, dim)


def swap_matrix(D: int, n_sites: int, i: int, j: int) -> np.ndarray:
    """Permutation unitary exchanging sites i and j."""
    order = list(range(n_sites))
    order[i], order[j] = order[j], order[i]
    eye = np.eye(D ** n_sites).reshape((D,) * (2 * n_sites))
    dim = D ** n_sites
    return np.transpose(eye, order + list(range(n_sites, 2 * n_sites))).reshape(dim, dim)
