"""
MERA Network Module
Binary MERA on a periodic chain of N = 2**n sites: disentanglers, isometries,
the top tensor and the layer geometry, plus rule validation and generators.

Geometry at level k (k = 1 lowest): the fine lattice has N / 2**(k-1) sites,
the coarse lattice N / 2**k. Isometry q maps coarse site q onto the mid sites
(2q - 1, 2q) modulo the fine size; disentangler i maps mid sites (2i, 2i + 1)
onto fine sites (2i, 2i + 1). The physical ket descends through the adjoints
of the upper-by-lower matrices of these tensors.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

from config import Config
from src.core.exceptions import NetworkValidationError
from src.core.tensor_ops import polar_isometry, random_tensor, swap_matrix

logger = logging.getLogger(__name__)


def _frozen_array(tensor, ndim: int, role: str) -> np.ndarray:
    array = np.array(tensor, dtype=complex)
    if array.ndim != ndim or len(set(array.shape)) != 1:
        raise NetworkValidationError(f"{role} needs {ndim} legs of equal dimension, got shape {array.shape}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Disentangler:
    """Legs (u1, u2, l1, l2); unitary as a (u1 u2) x (l1 l2) matrix."""
    tensor: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'tensor', _frozen_array(self.tensor, 4, 'Disentangler'))

    @property
    def D(self) -> int:
        return self.tensor.shape[0]

    def matrix(self) -> np.ndarray:
        return self.tensor.reshape(self.D ** 2, self.D ** 2)


@dataclass(frozen=True, eq=False)
class Isometry:
    """Legs (u, l1, l2); the D x D**2 matrix satisfies W W^dagger = I."""
    tensor: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'tensor', _frozen_array(self.tensor, 3, 'Isometry'))

    @property
    def D(self) -> int:
        return self.tensor.shape[0]

    def matrix(self) -> np.ndarray:
        return self.tensor.reshape(self.D, self.D ** 2)


@dataclass(frozen=True, eq=False)
class TopTensor:
    """Normalized amplitudes of the four top sites."""
    tensor: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'tensor', _frozen_array(self.tensor, 4, 'TopTensor'))

    @property
    def D(self) -> int:
        return self.tensor.shape[0]

    def vector(self) -> np.ndarray:
        return self.tensor.reshape(-1)


@dataclass(frozen=True, eq=False)
class MeraLayer:
    """
    One level of the network.

    Tensors are held either one per position (tuple length == size) or as a
    single shared tensor (tuple length 1); accessors index modulo the tuple length.
    """
    size: int  # coarse sites == isometries == disentanglers
    disentanglers: Tuple[Disentangler, ...]
    isometries: Tuple[Isometry, ...]

    def __post_init__(self):
        for name, items in (('disentanglers', self.disentanglers), ('isometries', self.isometries)):
            if len(items) not in (1, self.size):
                raise NetworkValidationError(
                    f"Layer of size {self.size} holds {len(items)} {name}; expected 1 or {self.size}")
        object.__setattr__(self, 'disentanglers', tuple(self.disentanglers))
        object.__setattr__(self, 'isometries', tuple(self.isometries))

    @property
    def fine_size(self) -> int:
        return 2 * self.size

    @property
    def uniform(self) -> bool:
        return len(self.disentanglers) == 1 and len(self.isometries) == 1

    def disentangler(self, i: int) -> Disentangler:
        return self.disentanglers[i % self.size % len(self.disentanglers)]

    def isometry(self, q: int) -> Isometry:
        return self.isometries[q % self.size % len(self.isometries)]

    def isometry_outputs(self, q: int) -> Tuple[int, int]:
        q = q % self.size
        return ((2 * q - 1) % self.fine_size, 2 * q)

    def disentangler_sites(self, i: int) -> Tuple[int, int]:
        i = i % self.size
        return (2 * i, 2 * i + 1)

    def isometry_of_mid_site(self, site: int) -> int:
        site = site % self.fine_size
        return site // 2 if site % 2 == 0 else ((site + 1) // 2) % self.size


@dataclass(frozen=True, eq=False)
class FiniteMera:
    """Network on N = 2**n sites with n - 2 layers (level 1 first) and a 4-site top."""
    n: int
    D: int
    layers: Tuple[MeraLayer, ...]
    top: TopTensor

    def __post_init__(self):
        if self.n < 3:
            raise NetworkValidationError(f"Finite networks need n >= 3, got n={self.n}")
        if len(self.layers) != self.n - 2:
            raise NetworkValidationError(f"n={self.n} needs {self.n - 2} layers, got {len(self.layers)}")
        for k, layer in enumerate(self.layers, start=1):
            expected = 2 ** (self.n - k)
            if layer.size != expected:
                raise NetworkValidationError(f"Level {k} has {layer.size} sites; expected {expected}")
        object.__setattr__(self, 'layers', tuple(self.layers))

    @property
    def N(self) -> int:
        return 2 ** self.n

    @property
    def levels(self) -> int:
        return self.n - 2

    def layer(self, level: int) -> MeraLayer:
        return self.layers[level - 1]

    def lattice_size(self, level: int) -> int:
        """Number of sites below layer `level` (level = levels + 1 is the top)."""
        return self.N // 2 ** (level - 1)


@dataclass(frozen=True, eq=False)
class ScaleInvariantMera:
    """Infinite network where every layer holds the same chi and lam."""
    chi: Disentangler
    lam: Isometry
    top: TopTensor

    @property
    def D(self) -> int:
        return self.chi.D


Network = Union[FiniteMera, ScaleInvariantMera]


@dataclass
class TensorResidual:
    role: str  # chi | lam | top
    level: Optional[int]
    position: Optional[int]
    residual: float


@dataclass
class ValidationReport:
    entries: List[TensorResidual] = field(default_factory=list)
    tol: float = 1e-12

    @property
    def max_residual(self) -> float:
        return max((e.residual for e in self.entries), default=0.0)

    @property
    def valid(self) -> bool:
        return self.max_residual <= self.tol

    def failures(self) -> List[TensorResidual]:
        return [e for e in self.entries if e.residual > self.tol]


def disentangler_residual(chi: Disentangler) -> float:
    x = chi.matrix()
    eye = np.eye(x.shape[0])
    return float(max(np.abs(x @ x.conj().T - eye).max(), np.abs(x.conj().T @ x - eye).max()))


def isometry_residual(lam: Isometry) -> float:
    w = lam.matrix()
    return float(np.abs(w @ w.conj().T - np.eye(w.shape[0])).max())


def top_residual(top: TopTensor) -> float:
    return float(abs(np.vdot(top.vector(), top.vector()).real - 1.0))


def validate(network: Network, tol: float = None) -> ValidationReport:
    """Per-tensor deviation from the contraction rules; valid iff all are within tol."""
    report = ValidationReport(tol=Config.STRUCT_TOL if tol is None else tol)
    dims = set()
    if isinstance(network, ScaleInvariantMera):
        report.entries.append(TensorResidual('chi', None, None, disentangler_residual(network.chi)))
        report.entries.append(TensorResidual('lam', None, None, isometry_residual(network.lam)))
        dims.update({network.chi.D, network.lam.D})
    else:
        for k, layer in enumerate(network.layers, start=1):
            shared_chi = len(layer.disentanglers) == 1
            shared_lam = len(layer.isometries) == 1
            for i, chi in enumerate(layer.disentanglers):
                report.entries.append(TensorResidual('chi', k, None if shared_chi else i, disentangler_residual(chi)))
                dims.add(chi.D)
            for q, lam in enumerate(layer.isometries):
                report.entries.append(TensorResidual('lam', k, None if shared_lam else q, isometry_residual(lam)))
                dims.add(lam.D)
    report.entries.append(TensorResidual('top', None, None, top_residual(network.top)))
    dims.add(network.top.D)
    if len(dims) > 1:
        # Mixed leg dimensions cannot be contracted at all.
        report.entries.append(TensorResidual('dimension', None, None, float('inf')))
    return report


def _random_disentangler(D: int, rng: np.random.Generator, symmetric: bool) -> Disentangler:
    g = random_tensor((D * D, D * D), rng)
    if symmetric:
        s = swap_matrix(D, 2, 0, 1)
        g = (g + s @ g @ s) / 2
    return Disentangler(polar_isometry(g).reshape(D, D, D, D))


def _random_isometry(D: int, rng: np.random.Generator, symmetric: bool) -> Isometry:
    g = random_tensor((D * D, D), rng)
    if symmetric:
        g = (g + swap_matrix(D, 2, 0, 1) @ g) / 2
    w = polar_isometry(g)  # tall, W^dagger W = I
    return Isometry(w.conj().T.reshape(D, D, D))


def _random_top(D: int, rng: np.random.Generator) -> TopTensor:
    c = random_tensor((D,) * 4, rng)
    return TopTensor(c / np.linalg.norm(c))


def random_network(
    n: Optional[int] = None,
    D: int = 2,
    seed: int = None,
    scale_invariant: bool = False,
    symmetric: bool = False,
    uniform: bool = False,
) -> Network:
    """
    Random valid network, deterministic in seed.

    Args:
        n: log2 of the number of sites (finite networks only)
        D: Leg dimension
        seed: Generator seed (Config.SEED if omitted)
        scale_invariant: Return a ScaleInvariantMera instead of a FiniteMera
        symmetric: Draw reflection-symmetric chi and lam
        uniform: Share one chi and one lam per layer (finite networks)

    Returns:
        FiniteMera or ScaleInvariantMera
    """
    if D < 2:
        raise ValueError(f"Leg dimension must be >= 2, got {D}")
    rng = np.random.default_rng(Config.SEED if seed is None else seed)
    if scale_invariant:
        chi = _random_disentangler(D, rng, symmetric)
        lam = _random_isometry(D, rng, symmetric)
        return ScaleInvariantMera(chi=chi, lam=lam, top=_random_top(D, rng))

    if n is None or n < 3:
        raise ValueError(f"Finite networks need n >= 3, got n={n}")
    layers = []
    for k in range(1, n - 1):
        size = 2 ** (n - k)
        count = 1 if uniform else size
        chis = tuple(_random_disentangler(D, rng, symmetric) for _ in range(count))
        lams = tuple(_random_isometry(D, rng, symmetric) for _ in range(count))
        layers.append(MeraLayer(size=size, disentanglers=chis, isometries=lams))
    return FiniteMera(n=n, D=D, layers=tuple(layers), top=_random_top(D, rng))


def identity_disentangler(D: int) -> Disentangler:
    return Disentangler(np.eye(D * D).reshape(D, D, D, D))


def embedding_isometry(D: int) -> Isometry:
    """lam[u, l1, l2] = delta(u, l1) delta(l2, 0)."""
    lam = np.zeros((D, D, D))
    for u in range(D):
        lam[u, u, 0] = 1.0
    return Isometry(lam)


def product_top(D: int, levels: Tuple[int, int, int, int] = (0, 0, 0, 0)) -> TopTensor:
    c = np.zeros((D,) * 4)
    c[tuple(levels)] = 1.0
    return TopTensor(c)


def identity_network(n: int, D: int = 2, top: Optional[TopTensor] = None) -> FiniteMera:
    """Identity disentanglers, embedding isometries, product top |0000> unless given."""
    if n < 3:
        raise ValueError(f"Finite networks need n >= 3, got n={n}")
    chi = identity_disentangler(D)
    lam = embedding_isometry(D)
    layers = tuple(MeraLayer(size=2 ** (n - k), disentanglers=(chi,), isometries=(lam,)) for k in range(1, n - 1))
    return FiniteMera(n=n, D=D, layers=layers, top=top or product_top(D))


def tile(si: ScaleInvariantMera, n: int) -> FiniteMera:
    """Finite network of depth n sharing the scale-invariant tensors in every layer."""
    layers = tuple(MeraLayer(size=2 ** (n - k), disentanglers=(si.chi,), isometries=(si.lam,))
                   for k in range(1, n - 1))
    return FiniteMera(n=n, D=si.D, layers=layers, top=si.top)


def perturb(network: Network, eps: float, role: str = 'chi', level: int = 1, position: int = 0,
            entry: int = 0) -> Network:
    """Copy of network with one tensor entry shifted by eps (breaks the contraction rules)."""
    def shifted(tensor: np.ndarray) -> np.ndarray:
        # C-ordered copy so the flat view writes into t
        t = np.array(tensor, dtype=complex, order='C')
        t.reshape(-1)[entry] += eps
        return t

    if isinstance(network, ScaleInvariantMera):
        if role == 'chi':
            return ScaleInvariantMera(Disentangler(shifted(network.chi.tensor)), network.lam, network.top)
        if role == 'lam':
            return ScaleInvariantMera(network.chi, Isometry(shifted(network.lam.tensor)), network.top)
        return ScaleInvariantMera(network.chi, network.lam, TopTensor(shifted(network.top.tensor)))

    if role == 'top':
        return FiniteMera(network.n, network.D, network.layers, TopTensor(shifted(network.top.tensor)))
    layers = list(network.layers)
    layer = layers[level - 1]
    chis, lams = list(layer.disentanglers), list(layer.isometries)
    if role == 'chi':
        idx = position % len(chis)
        chis[idx] = Disentangler(shifted(chis[idx].tensor))
    else:
        idx = position % len(lams)
        lams[idx] = Isometry(shifted(lams[idx].tensor))
    layers[level - 1] = MeraLayer(layer.size, tuple(chis), tuple(lams))
    return FiniteMera(network.n, network.D, tuple(layers), network.top)
