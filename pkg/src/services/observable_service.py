"""
Observable Service Module
Local expectations, reduced densities and two-point correlators through the
causal-cone channels, thermodynamic correlator series on deep tilings of a
scale-invariant network, decay fits and the critical-exponent relation.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import Config
from src.core.exceptions import DomainError, ManifestError
from src.core.tensor_ops import embed_operator
from src.network.mera import FiniteMera, ScaleInvariantMera, tile
from src.services.channel_service import (
    causal_cone,
    cyclic_distance,
    heisenberg_apply,
    joint_cone,
    joint_density,
    merge_density,
    schrodinger_apply,
    top_density,
)

logger = logging.getLogger(__name__)

PAULI = {
    'i': np.eye(2, dtype=complex),
    'x': np.array([[0, 1], [1, 0]], dtype=complex),
    'y': np.array([[0, -1j], [1j, 0]], dtype=complex),
    'z': np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True, eq=False)
class Observable:
    """Hermitian operator on 1 or 3 consecutive sites; width 1 sits at the window center unless offset says otherwise."""
    matrix: np.ndarray
    width: int
    D: int
    offset: int = 1  # position of a width-1 operator inside the 3-site window
    label: str = 'custom'

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (self.D ** self.width,) * 2:
            raise ValueError(f"Observable of width {self.width} needs a {self.D ** self.width}-dim matrix, got {m.shape}")
        if self.width not in (1, 3):
            raise ValueError(f"Observable width must be 1 or 3, got {self.width}")
        m.setflags(write=False)
        object.__setattr__(self, 'matrix', m)

    @property
    def hermiticity_residual(self) -> float:
        return float(np.abs(self.matrix - self.matrix.conj().T).max())

    def window_matrix(self) -> np.ndarray:
        """The operator on the full 3-site window."""
        if self.width == 3:
            return np.asarray(self.matrix)
        return embed_operator(self.matrix, [self.offset], 3, self.D)


def pauli_observable(name: str, D: int = 2, offset: int = 1) -> Observable:
    """
    Single-site Pauli operator ('x', 'y', 'z', 'i'), or a product string of three such letters.

    For D = 2**b a site holds b spins and the Pauli acts on its first spin.
    """
    name = name.lower()
    spins = int(round(np.log2(D))) if D >= 2 else 0
    if spins < 1 or 2 ** spins != D:
        raise ValueError(f"Pauli observables need D = 2**b, got D={D}")
    rest = np.eye(D // 2)

    def on_site(letter: str) -> np.ndarray:
        return np.kron(PAULI[letter], rest)

    if len(name) == 1 and name in PAULI:
        return Observable(on_site(name), width=1, D=D, offset=offset, label=name)
    if len(name) == 3 and all(c in PAULI for c in name):
        m = np.kron(np.kron(on_site(name[0]), on_site(name[1])), on_site(name[2]))
        return Observable(m, width=3, D=D, label=name)
    raise ValueError(f"Unknown Pauli observable '{name}'")


def load_observable(path: Union[str, Path], D: int) -> Observable:
    """Observable from a .npy matrix or a JSON file {"matrix": [[[re, im], ...], ...]}."""
    path = Path(path)
    try:
        if path.suffix == '.npy':
            m = np.load(path)
        else:
            data = json.loads(path.read_text())
            rows = data['matrix'] if isinstance(data, dict) else data
            m = np.array([[complex(e[0], e[1]) for e in row] for row in rows])
    except (OSError, ValueError, KeyError, TypeError, IndexError) as e:
        raise ManifestError(f"Cannot read observable from {path}: {str(e)}")
    width = 1 if m.shape[0] == D else 3
    return Observable(m, width=width, D=D, label=path.name)


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return (g + g.conj().T) / 2


def random_density(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def _as_observable(theta, D: int) -> Observable:
    if isinstance(theta, Observable):
        return theta
    m = np.asarray(theta)
    return Observable(m, width=1 if m.shape[0] == D else 3, D=D)


# ============================================================
# Finite networks
# ============================================================

def reduced_density(mera: FiniteMera, j: int) -> np.ndarray:
    """Density of sites (j - 1, j, j + 1), descended through the cone channels."""
    cone = causal_cone(mera, j)
    rho = top_density(mera.top, cone.traced_site)
    for step in reversed(cone.steps):
        rho = schrodinger_apply(step.family(), rho)
    return rho


def ascended_operator(mera: FiniteMera, theta: np.ndarray, j: int) -> np.ndarray:
    """B_j: the window operator lifted through every cone level in the Heisenberg picture."""
    cone = causal_cone(mera, j)
    b = theta
    for step in cone.steps:
        b = heisenberg_apply(step.family(), b)
    return b


def local_expectation(mera: FiniteMera, theta, j: int, picture: str = 'schrodinger') -> complex:
    """
    Expectation of an observable on the window around site j.

    Args:
        mera: Finite network
        theta: Observable or matrix on 1 or 3 sites
        j: Window center
        picture: 'schrodinger' descends rho_C; 'heisenberg' ascends theta

    Returns:
        Complex expectation value (real for hermitian theta)
    """
    op = _as_observable(theta, mera.D).window_matrix()
    if picture == 'heisenberg':
        cone = causal_cone(mera, j)
        return complex(np.trace(top_density(mera.top, cone.traced_site) @ ascended_operator(mera, op, j)))
    return complex(np.trace(reduced_density(mera, j) @ op))


def two_point(mera: FiniteMera, theta_i, theta_j, i: int, j: int) -> complex:
    """
    <theta_i theta_j> for windows centered at i and j.

    Width-1 observables closer than three sites are evaluated as one 3-site
    operator through a single cone; other overlapping windows use the exact
    union density.
    """
    obs_i = _as_observable(theta_i, mera.D)
    obs_j = _as_observable(theta_j, mera.D)
    D = mera.D
    if obs_i.width == 1 and obs_j.width == 1 and obs_i.offset == 1 and obs_j.offset == 1 \
            and cyclic_distance(i, j, mera.N) < 3:
        if (j - i) % mera.N > mera.N // 2:
            obs_i, obs_j, i, j = obs_j, obs_i, j, i
        gap = (j - i) % mera.N
        start = i - 1 if gap < 2 else i
        op = np.eye(D ** 3, dtype=complex)
        op = op @ embed_operator(obs_i.matrix, [(i - start) % mera.N], 3, D)
        op = op @ embed_operator(obs_j.matrix, [(j - start) % mera.N], 3, D)
        return local_expectation(mera, op, start + 1)

    plan = joint_cone(mera, i, j)
    rho = joint_density(mera, plan)
    a = obs_i.window_matrix()
    b = obs_j.window_matrix()
    if not plan.overlapping:
        return complex(np.trace(rho @ np.kron(a, b)))
    window_i, window_j = plan.windows
    union = list(window_i) + [s for s in window_j if s not in window_i]
    n = len(union)
    op_i = embed_operator(a, [union.index(s) for s in window_i], n, D)
    op_j = embed_operator(b, [union.index(s) for s in window_j], n, D)
    return complex(np.trace(rho @ op_i @ op_j))


def connected_correlator(mera: FiniteMera, theta_i, theta_j, i: int, j: int) -> complex:
    return two_point(mera, theta_i, theta_j, i, j) - local_expectation(mera, theta_i, i) * local_expectation(mera, theta_j, j)


# ============================================================
# Thermodynamic series
# ============================================================

@dataclass
class LineFit:
    slope: float
    intercept: float
    residual: float
    leverage: List[float] = field(default_factory=list)


@dataclass
class CorrelatorSeries:
    ks: List[int]
    separations: List[int]
    values: List[complex]
    fit: Optional[LineFit]
    excluded: List[int] = field(default_factory=list)  # k values left out of the fit
    depth: int = 0
    boundary_error: float = 0.0
    converged: bool = True

    @property
    def nu_fit(self) -> Optional[float]:
        return None if self.fit is None else -self.fit.slope


def fit_line(x: Sequence[float], y: Sequence[float]) -> LineFit:
    """Ordinary least squares y = slope * x + intercept with residual norm and per-point leverage."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    design = np.column_stack([x, np.ones_like(x)])
    coeffs, *_ = np.linalg.lstsq(design, y, rcond=None)
    residual = float(np.linalg.norm(design @ coeffs - y))
    hat = design @ np.linalg.pinv(design.T @ design) @ design.T
    return LineFit(slope=float(coeffs[0]), intercept=float(coeffs[1]), residual=residual,
                   leverage=[float(h) for h in np.diag(hat)])


def _series_point(mera: FiniteMera, theta: Observable, k: int) -> complex:
    i = mera.N // 2
    return connected_correlator(mera, theta, theta, i, i + 2 ** k)


def correlator_values(mera: FiniteMera, theta: Observable, ks: Sequence[int], threads: int = None) -> List[complex]:
    threads = Config.THREADS if threads is None else threads
    if threads <= 1:
        return [_series_point(mera, theta, k) for k in ks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda k: _series_point(mera, theta, k), ks))


def _depth_estimate(errors: List[Tuple[int, float]], tol: float) -> Optional[int]:
    """Depth whose boundary effect reaches tol, from the decay of the last two measured errors."""
    if len(errors) < 2:
        return None
    (d1, e1), (d2, e2) = errors[-2], errors[-1]
    if not (e1 > e2 > 0.0) or d2 <= d1:
        return None
    rate = (e2 / e1) ** (1.0 / (d2 - d1))
    return d2 + int(np.ceil(np.log(tol / e2) / np.log(rate))) + 1


def connected_correlator_series(
    si: ScaleInvariantMera,
    theta,
    kmax: int = None,
    kmin: int = 3,
    depth_tol: float = None,
    max_extensions: int = 6,
    threads: int = None,
) -> CorrelatorSeries:
    """
    Connected correlators at separations 2**k around the center of deep tilings.

    The tiling depth starts at kmax + 3 and grows until the values at two
    depths a few levels apart agree within depth_tol. After two
    measurements the next depth is extrapolated from the geometric decay of
    the differences; otherwise the depth doubles.

    Args:
        si: Scale-invariant network
        theta: Observable for both windows
        kmax: Largest separation exponent (Config.KMAX)
        kmin: Smallest separation exponent
        depth_tol: Change in every value below which the tiling depth is accepted
        max_extensions: Depth comparisons tried before giving up
        threads: Worker threads (Config.THREADS)

    Returns:
        CorrelatorSeries with the fit of log2|delta| against k
    """
    kmax = Config.KMAX if kmax is None else kmax
    depth_tol = Config.DEPTH_TOL if depth_tol is None else depth_tol
    obs = _as_observable(theta, si.D)
    ks = list(range(kmin, kmax + 1))
    if max_extensions < 1:
        raise ValueError("max_extensions must be positive")
    gap = max(4, kmax // 2)

    depth, values = kmax + 3, None
    errors: List[Tuple[int, float]] = []
    boundary_error = float('inf')
    for _ in range(max_extensions):
        if depth > Config.MAX_DEPTH - gap:
            depth, values = Config.MAX_DEPTH - gap, None
        if values is None:
            values = correlator_values(tile(si, depth), obs, ks, threads)
        deeper_depth = depth + gap
        deeper = correlator_values(tile(si, deeper_depth), obs, ks, threads)
        boundary_error = max(abs(a - b) for a, b in zip(values, deeper))
        errors.append((depth, boundary_error))
        logger.info("Correlator series at depth %d: boundary error %.3e", depth, boundary_error)
        if boundary_error < depth_tol or depth >= Config.MAX_DEPTH - gap:
            break
        target = _depth_estimate(errors, depth_tol)
        following = 2 * depth if target is None else max(target, deeper_depth)
        values = deeper if following == deeper_depth else None
        depth = following
    values, depth = deeper, deeper_depth
    converged = boundary_error < depth_tol
    if not converged:
        logger.warning("Correlator series not converged in depth: boundary error %.3e at depth %d",
                       boundary_error, depth)

    kept = [(k, v) for k, v in zip(ks, values) if abs(v) >= Config.FIT_FLOOR]
    excluded = [k for k, v in zip(ks, values) if abs(v) < Config.FIT_FLOOR]
    fit = fit_line([k for k, _ in kept], [np.log2(abs(v)) for _, v in kept]) if len(kept) >= 2 else None
    if excluded:
        logger.info("Excluded %d points below %.0e from the fit", len(excluded), Config.FIT_FLOOR)
    return CorrelatorSeries(ks=ks, separations=[2 ** k for k in ks], values=values, fit=fit,
                            excluded=excluded, depth=depth, boundary_error=boundary_error,
                            converged=converged)


def correlation_state(si: ScaleInvariantMera, k: int = 3, depth: int = None) -> np.ndarray:
    """
    Two-window state at the merge level of the series windows at separation 2**k.

    This is the state whose pair overlaps weight the eigenmodes in the
    connected correlator; window i comes first.
    """
    depth = max(Config.KMAX, k) + 3 if depth is None else depth
    mera = tile(si, depth)
    i = mera.N // 2
    plan = joint_cone(mera, i, i + 2 ** k)
    if plan.overlapping:
        raise ValueError(f"Windows at separation 2**{k} overlap on every level")
    return merge_density(mera, plan)


def kappa_state(si: ScaleInvariantMera, k: int = 3) -> Optional[np.ndarray]:
    """correlation_state when its intermediate densities fit Config.STATE_LIMIT, else None (no state filter)."""
    if si.D ** 16 > Config.STATE_LIMIT:
        logger.warning("Two-window state at D=%d exceeds the state limit; kappa is filtered by the observable only",
                       si.D)
        return None
    return correlation_state(si, k)


def critical_exponent(kappa: float) -> float:
    """nu = -2 log2 kappa for 0 < kappa < 1."""
    if not 0.0 < kappa < 1.0:
        raise DomainError(f"kappa must lie in (0, 1), got {kappa}")
    return -2.0 * np.log2(kappa)


@dataclass
class ExponentCheck:
    nu_kappa: float
    nu_fit: Optional[float]
    relative_difference: Optional[float]
    bound_holds: Optional[bool]  # nu_fit >= nu_kappa - 0.05
    relation_holds: Optional[bool] = None  # relative difference within 5%


def exponent_cross_check(series: CorrelatorSeries, kappa: float) -> ExponentCheck:
    nu_kappa = critical_exponent(kappa)
    if series.nu_fit is None:
        return ExponentCheck(nu_kappa, None, None, None, None)
    nu_fit = series.nu_fit
    return ExponentCheck(
        nu_kappa=nu_kappa,
        nu_fit=nu_fit,
        relative_difference=abs(nu_fit - nu_kappa) / nu_kappa,
        bound_holds=nu_fit >= nu_kappa - 0.05,
        relation_holds=abs(nu_fit - nu_kappa) / nu_kappa <= 0.05,
    )
