"""
Channel Service Module
Reads MERA layers as quantum channels: causal-cone compound tensors
(M5, M7, M9), their Kraus families, Heisenberg / Schroedinger actions,
the swap relation between left and right families, and the cone plans
used to evaluate one- and two-site observables.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from config import Config
from src.core.exceptions import ChannelError, ConeTooShortError
from src.core.tensor_ops import contract, partial_trace, permute, swap_matrix
from src.network.mera import (
    Disentangler,
    FiniteMera,
    Isometry,
    MeraLayer,
    ScaleInvariantMera,
    TopTensor,
)

logger = logging.getLogger(__name__)

COMPOUND_KINDS = {3: 'M5', 4: 'M7', 5: 'M9'}
SIDES = ('L', 'R')
WINDOW_OFFSET = {'L': 1, 'R': 2}


@dataclass(frozen=True, eq=False)
class CompoundTensor:
    """k isometries and k - 1 disentanglers; legs are k upper then 2k lower."""
    kind: str
    tensor: np.ndarray

    @property
    def k(self) -> int:
        return self.tensor.ndim // 3

    @property
    def D(self) -> int:
        return self.tensor.shape[0]


@dataclass(frozen=True, eq=False)
class KrausFamily:
    """
    Operators K_r with sum_r K_r K_r^dagger = I.

    Heisenberg action: theta -> sum_r K_r theta K_r^dagger (unital).
    Schroedinger action: rho -> sum_r K_r^dagger rho K_r (trace preserving).
    """
    side: str  # L | R | avg
    width: int
    D: int
    operators: np.ndarray  # (count, D**width, D**width)

    def __post_init__(self):
        ops = np.array(self.operators, dtype=complex)
        dim = self.D ** self.width
        if ops.ndim != 3 or ops.shape[1:] != (dim, dim):
            raise ChannelError(f"Kraus operators of shape {ops.shape} do not act on {self.width} sites of dimension {self.D}")
        ops.setflags(write=False)
        object.__setattr__(self, 'operators', ops)

    @property
    def dim(self) -> int:
        return self.D ** self.width

    def __len__(self) -> int:
        return self.operators.shape[0]

    def normalization_residual(self) -> float:
        total = np.einsum('rab,rcb->ac', self.operators, self.operators.conj())
        return float(np.abs(total - np.eye(self.dim)).max())


# ============================================================
# Compounds and Kraus families
# ============================================================

def build_compound(lams: Sequence[Isometry], chis: Sequence[Disentangler]) -> CompoundTensor:
    """
    Contract lam chi lam ... lam left to right.

    Args:
        lams: k isometries, left to right (k = 3, 4, 5)
        chis: k - 1 disentanglers; chis[t] joins lams[t] and lams[t + 1]

    Returns:
        CompoundTensor with legs (u_0 .. u_{k-1}, s_0 .. s_{2k-1})
    """
    k = len(lams)
    if k not in COMPOUND_KINDS or len(chis) != k - 1:
        raise ChannelError(f"Compound needs 3-5 isometries and one fewer disentangler, got {k} and {len(chis)}")
    dims = {t.D for t in list(lams) + list(chis)}
    if len(dims) != 1:
        raise ChannelError(f"Leg dimensions differ inside compound: {sorted(dims)}")

    tensor = np.asarray(lams[0].tensor)
    labels = ['u0', 's0', 'a']
    for t in range(k - 1):
        tensor = contract(tensor, chis[t].tensor, [(labels.index('a'), 0)])
        labels = [l for l in labels if l != 'a'] + ['a', f's{2 * t + 1}', f's{2 * t + 2}']
        tensor = contract(tensor, lams[t + 1].tensor, [(labels.index('a'), 1)])
        labels = [l for l in labels if l != 'a'] + [f'u{t + 1}', 'a']
    labels[labels.index('a')] = f's{2 * k - 1}'
    order = [labels.index(f'u{t}') for t in range(k)] + [labels.index(f's{t}') for t in range(2 * k)]
    return CompoundTensor(kind=COMPOUND_KINDS[k], tensor=permute(tensor, order))


def build_m5(lam: Isometry, chi: Disentangler) -> CompoundTensor:
    return build_compound([lam] * 3, [chi] * 2)


def build_m7(lam: Isometry, chi: Disentangler) -> CompoundTensor:
    return build_compound([lam] * 4, [chi] * 3)


def build_m9(lam: Isometry, chi: Disentangler) -> CompoundTensor:
    return build_compound([lam] * 5, [chi] * 4)


def window_positions(k: int, side: str) -> List[int]:
    if side not in WINDOW_OFFSET:
        raise ChannelError(f"Unknown side '{side}'")
    start = WINDOW_OFFSET[side]
    return list(range(start, start + k))


def kraus_from_compound(c: CompoundTensor, side: str) -> KrausFamily:
    """
    Slice a compound into its Kraus family.

    The operator input is a contiguous window of k lower legs (starting at
    lower leg 1 for L, 2 for R); the remaining k lower legs, in order, form
    the spectator index r. K_r[u, l] = c[u, r-legs, l-legs].
    """
    k, D = c.k, c.D
    window = window_positions(k, side)
    spectators = [s for s in range(2 * k) if s not in window]
    order = list(range(k)) + [k + s for s in spectators] + [k + w for w in window]
    dim = D ** k
    ops = permute(c.tensor, order).reshape(dim, dim, dim).transpose(1, 0, 2)
    return KrausFamily(side=side, width=k, D=D, operators=ops)


def kraus_family(si: ScaleInvariantMera, side: str = 'R') -> KrausFamily:
    """Width-3 family of a scale-invariant network; side 'avg' gives the averaged channel."""
    m5 = build_m5(si.lam, si.chi)
    if side == 'avg':
        return average_family(kraus_from_compound(m5, 'L'), kraus_from_compound(m5, 'R'))
    return kraus_from_compound(m5, side)


def average_family(left: KrausFamily, right: KrausFamily) -> KrausFamily:
    """Kraus family of the equal-weight mixture of two channels."""
    if left.dim != right.dim:
        raise ChannelError(f"Cannot average channels on {left.dim} and {right.dim} dimensions")
    ops = np.concatenate([left.operators, right.operators]) / np.sqrt(2.0)
    return KrausFamily(side='avg', width=left.width, D=left.D, operators=ops)


def _check_operand(family: KrausFamily, m: np.ndarray, name: str):
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ChannelError(f"{name} must be square, got shape {m.shape}")
    if m.shape[0] != family.dim:
        raise ChannelError(f"{name} is {m.shape[0]}-dimensional; channel acts on {family.dim}")


def heisenberg_apply(family: KrausFamily, theta: np.ndarray) -> np.ndarray:
    _check_operand(family, theta, 'theta')
    k = family.operators
    return np.einsum('rab,bc,rdc->ad', k, theta, k.conj(), optimize=True)


def schrodinger_apply(family: KrausFamily, rho: np.ndarray, enforce_trace: bool = True) -> np.ndarray:
    _check_operand(family, rho, 'rho')
    if enforce_trace and abs(np.trace(rho) - 1.0) > 1e-10:
        raise ChannelError(f"rho has trace {np.trace(rho):.12g}; expected 1")
    k = family.operators
    return np.einsum('rab,ac,rcd->bd', k.conj(), rho, k, optimize=True)


def swap_conjugation(D: int) -> np.ndarray:
    """Permutation exchanging the first and third of three sites; P = P^dagger = P^-1."""
    return swap_matrix(D, 3, 0, 2)


def reflected_index(r: int, D: int, width: int) -> int:
    digits = np.unravel_index(r, (D,) * width)
    return int(np.ravel_multi_index(tuple(reversed(digits)), (D,) * width))


def pi_deviation(left: KrausFamily, right: KrausFamily) -> float:
    """max_r |R_r - P L_r' P| with r' the reversed spectator tuple; zero for reflection-symmetric tensors."""
    if left.width != 3 or right.width != 3:
        raise ChannelError("The swap relation is defined for width-3 families")
    p = swap_conjugation(left.D)
    worst = 0.0
    for r in range(len(right)):
        mirrored = p @ left.operators[reflected_index(r, left.D, 3)] @ p
        worst = max(worst, float(np.abs(right.operators[r] - mirrored).max()))
    return worst


def pi_map_deviation(left: KrausFamily, right: KrausFamily) -> float:
    """max |Phi_H^R - Pi o Phi_H^L o Pi| as row-major Liouville matrices."""
    p = swap_conjugation(left.D)
    pp = np.kron(p, p)

    def heisenberg_matrix(family: KrausFamily) -> np.ndarray:
        k = family.operators
        return np.einsum('rac,rbd->abcd', k, k.conj()).reshape(family.dim ** 2, family.dim ** 2)

    mirrored = pp @ heisenberg_matrix(left) @ pp
    return float(np.abs(heisenberg_matrix(right) - mirrored).max())


def choi_matrix(family: KrausFamily) -> np.ndarray:
    """Choi matrix sum_ab |a><b| (x) Phi_S(|a><b|)."""
    dim = family.dim
    choi = np.zeros((dim, dim, dim, dim), dtype=complex)
    for a in range(dim):
        for b in range(dim):
            unit = np.zeros((dim, dim), dtype=complex)
            unit[a, b] = 1.0
            choi[a, :, b, :] = schrodinger_apply(family, unit, enforce_trace=False)
    return choi.reshape(dim * dim, dim * dim)


def choi_min_eigenvalue(family: KrausFamily) -> float:
    choi = choi_matrix(family)
    return float(scipy.linalg.eigvalsh((choi + choi.conj().T) / 2).min())


def top_density(top: TopTensor, traced_site: int) -> np.ndarray:
    """Three-site density of |top><top| with one site traced; sites ordered cyclically after it."""
    if not 0 <= traced_site < 4:
        raise ValueError(f"traced_site must be in 0..3, got {traced_site}")
    psi = top.vector()
    keep = [(traced_site + t) % 4 for t in (1, 2, 3)]
    return partial_trace(np.outer(psi, psi.conj()), top.D, 4, keep)


# ============================================================
# Single-site causal cone
# ============================================================

@dataclass(frozen=True, eq=False)
class ConeStep:
    level: int
    window_start: int  # leftmost fine site of the 3-site window at this level
    side: str
    compound: CompoundTensor

    def family(self) -> KrausFamily:
        return kraus_from_compound(self.compound, self.side)


@dataclass(frozen=True, eq=False)
class CausalCone:
    site: int
    steps: Tuple[ConeStep, ...]  # lowest level first
    top_window_start: int
    traced_site: int

    @property
    def sides(self) -> List[str]:
        return [s.side for s in self.steps]


def window_step(window_start: int, fine_size: int) -> Tuple[int, str]:
    """Parent window start and side (L on even alignment, R on odd) of a 3-site window."""
    p = window_start % fine_size
    return p // 2, ('L' if p % 2 == 0 else 'R')


def level_compound(layer: MeraLayer, first_isometry: int, k: int = 3) -> CompoundTensor:
    lams = [layer.isometry(first_isometry + t) for t in range(k)]
    chis = [layer.disentangler(first_isometry + t) for t in range(k - 1)]
    return build_compound(lams, chis)


def causal_cone(mera: FiniteMera, j: int) -> CausalCone:
    """
    Compounds and sides carrying the window (j - 1, j, j + 1) up to the top.

    Args:
        mera: Finite network with N >= 8
        j: Central site of the window

    Returns:
        CausalCone with n - 2 steps, lowest level first
    """
    if mera.N < 8:
        raise ConeTooShortError(f"Causal cones need N >= 8, got N={mera.N}")
    if not 0 <= j < mera.N:
        raise ValueError(f"Site {j} out of range for N={mera.N}")
    p = (j - 1) % mera.N
    steps = []
    for level in range(1, mera.levels + 1):
        layer = mera.layer(level)
        parent, side = window_step(p, layer.fine_size)
        steps.append(ConeStep(level=level, window_start=p, side=side, compound=level_compound(layer, parent)))
        p = parent
    return CausalCone(site=j, steps=tuple(steps), top_window_start=p, traced_site=(p + 3) % 4)


# ============================================================
# Site-set descent
# ============================================================

class _SiteDensity:
    """Density tensor with legs (ket sites..., bra sites...) labelled by site."""

    def __init__(self, rho: np.ndarray, labels: Sequence, D: int):
        self.labels = list(labels)
        self.D = D
        self.tensor = rho.reshape((D,) * (2 * len(self.labels)))

    def _indices(self):
        n = len(self.labels)
        return list(range(n)), list(range(n, 2 * n)), 2 * n

    def apply(self, ket_op: np.ndarray, inputs: Sequence, outputs: Sequence):
        """ket -> ket_op (legs: inputs then outputs); the bra receives conj(ket_op)."""
        ket, bra, nxt = self._indices()
        pos = [self.labels.index(l) for l in inputs]
        out_ket = list(range(nxt, nxt + len(outputs)))
        out_bra = list(range(nxt + len(outputs), nxt + 2 * len(outputs)))
        keep = [i for i in range(len(self.labels)) if i not in pos]
        result = [ket[i] for i in keep] + out_ket + [bra[i] for i in keep] + out_bra
        self.tensor = np.einsum(
            self.tensor, ket + bra,
            ket_op, [ket[i] for i in pos] + out_ket,
            ket_op.conj(), [bra[i] for i in pos] + out_bra,
            result,
            optimize=True,
        )
        self.labels = [self.labels[i] for i in keep] + list(outputs)

    def trace(self, label):
        ket, bra, _ = self._indices()
        i = self.labels.index(label)
        bra[i] = ket[i]
        keep = [t for t in range(len(self.labels)) if t != i]
        self.tensor = np.einsum(self.tensor, ket + bra, [ket[t] for t in keep] + [bra[t] for t in keep])
        self.labels = [self.labels[t] for t in keep]

    def matrix(self, order: Sequence) -> np.ndarray:
        n = len(self.labels)
        perm = [self.labels.index(l) for l in order]
        t = np.transpose(self.tensor, perm + [n + p for p in perm])
        dim = self.D ** n
        return t.reshape(dim, dim)


def parent_sites(sites: Sequence[int], layer: MeraLayer) -> List[int]:
    """Coarse sites whose isometries reach the given fine sites through the layer."""
    mids = set()
    for s in sites:
        mids.update(layer.disentangler_sites((s % layer.fine_size) // 2))
    return sorted({layer.isometry_of_mid_site(m) for m in mids})


def descend_sites(rho: np.ndarray, parents: Sequence[int], targets: Sequence[int], layer: MeraLayer) -> np.ndarray:
    """
    Exact one-layer descent of a density on coarse sites to fine sites.

    Args:
        rho: Density on `parents`, legs in that order
        parents: Coarse sites; must include parent_sites(targets)
        targets: Fine sites of the result, in the requested order
        layer: The layer between the two lattices

    Returns:
        Density on `targets`
    """
    targets = [t % layer.fine_size for t in targets]
    D = layer.isometry(0).D
    disentanglers = sorted({t // 2 for t in targets})
    mids = set()
    for d in disentanglers:
        mids.update(layer.disentangler_sites(d))
    needed = {layer.isometry_of_mid_site(m) for m in mids}
    missing = needed - set(parents)
    if missing:
        raise ChannelError(f"Descent to {targets} needs coarse sites {sorted(missing)}")

    state = _SiteDensity(rho, [('c', q) for q in parents], D)
    pending = list(disentanglers)
    for q in parents:
        if q not in needed:
            state.trace(('c', q))
            continue
        outputs = [('m', s) for s in layer.isometry_outputs(q)]
        state.apply(layer.isometry(q).tensor.conj(), [('c', q)], outputs)
        for label in outputs:
            if label[1] not in mids:
                state.trace(label)
        for d in list(pending):
            pair = [('m', s) for s in layer.disentangler_sites(d)]
            if all(p in state.labels for p in pair):
                fine = [('f', s) for s in layer.disentangler_sites(d)]
                state.apply(layer.disentangler(d).tensor.conj(), pair, fine)
                for label in fine:
                    if label[1] not in targets:
                        state.trace(label)
                pending.remove(d)
    return state.matrix([('f', t) for t in targets])


def site_chain(mera: FiniteMera, sites: Sequence[int], level: int = 1) -> List[List[int]]:
    """Site sets from the lattice below `level` up to the top lattice."""
    chain = [[s % mera.lattice_size(level) for s in sites]]
    for lv in range(level, mera.levels + 1):
        chain.append(parent_sites(chain[-1], mera.layer(lv)))
    return chain


def site_density(mera: FiniteMera, sites: Sequence[int], level: int = 1) -> np.ndarray:
    """Reduced density on arbitrary distinct sites of the lattice below `level`, legs in the given order."""
    if len(set(s % mera.lattice_size(level) for s in sites)) != len(sites):
        raise ValueError(f"Sites {list(sites)} are not distinct")
    chain = site_chain(mera, sites, level)
    psi = mera.top.vector()
    rho = partial_trace(np.outer(psi, psi.conj()), mera.D, 4, chain[-1])
    for lv in range(mera.levels, level - 1, -1):
        rho = descend_sites(rho, chain[lv - level + 1], chain[lv - level], mera.layer(lv))
    return rho


# ============================================================
# Joint cone of two windows
# ============================================================

def cyclic_distance(a: int, b: int, size: int) -> int:
    d = (b - a) % size
    return min(d, size - d)


def _disjoint_windows(p: int, q: int, size: int) -> bool:
    return (q - p) % size >= 3 and (p - q) % size >= 3


@dataclass(frozen=True, eq=False)
class JointCone:
    """
    Plan for a two-window expectation.

    The two windows are carried by separate single-site cone steps for the
    first split_levels levels; above that their union is descended exactly
    from the top through the site sets in `site_sets` (merge lattice first).
    """
    i: int
    j: int
    split_levels: int
    mbar: int  # int(log2 |i - j|) - 1
    steps_i: Tuple[ConeStep, ...]
    steps_j: Tuple[ConeStep, ...]
    windows: Tuple[Tuple[int, ...], Tuple[int, ...]]  # window sites on the merge lattice
    site_sets: Tuple[Tuple[int, ...], ...]
    compound_kinds: Tuple[str, ...]
    overlapping: bool

    @property
    def merge_level(self) -> int:
        return self.split_levels + 1


def joint_cone(mera: FiniteMera, i: int, j: int) -> JointCone:
    """
    Plan evaluating an observable on the windows around sites i and j.

    Args:
        mera: Finite network with N >= 8
        i: Center of the first window
        j: Center of the second window

    Returns:
        JointCone; windows closer than three sites give split_levels == 0
        and overlapping == True
    """
    if mera.N < 8:
        raise ConeTooShortError(f"Causal cones need N >= 8, got N={mera.N}")
    if i % mera.N == j % mera.N:
        raise ValueError("joint_cone needs two distinct sites")
    r = cyclic_distance(i, j, mera.N)
    mbar = max(int(np.floor(np.log2(r))) - 1, 0)

    p_i, p_j = (i - 1) % mera.N, (j - 1) % mera.N
    overlapping = not _disjoint_windows(p_i, p_j, mera.N)
    steps_i, steps_j = [], []
    if not overlapping:
        for level in range(1, mera.levels + 1):
            layer = mera.layer(level)
            q_i, side_i = window_step(p_i, layer.fine_size)
            q_j, side_j = window_step(p_j, layer.fine_size)
            if not _disjoint_windows(q_i, q_j, layer.size):
                break
            steps_i.append(ConeStep(level, p_i, side_i, level_compound(layer, q_i)))
            steps_j.append(ConeStep(level, p_j, side_j, level_compound(layer, q_j)))
            p_i, p_j = q_i, q_j
    split = len(steps_i)
    size = mera.lattice_size(split + 1)
    window_i = tuple((p_i + t) % size for t in range(3))
    window_j = tuple((p_j + t) % size for t in range(3))
    union = list(window_i) + [s for s in window_j if s not in window_i]
    chain = site_chain(mera, union, split + 1)
    kinds = tuple(COMPOUND_KINDS.get(len(s), 'generic') for s in chain[1:])
    logger.debug("Joint cone (%d, %d): split %d, mbar %d, top segment %s", i, j, split, mbar, kinds)
    return JointCone(
        i=i, j=j, split_levels=split, mbar=mbar,
        steps_i=tuple(steps_i), steps_j=tuple(steps_j),
        windows=(window_i, window_j),
        site_sets=tuple(tuple(s) for s in chain),
        compound_kinds=kinds,
        overlapping=overlapping,
    )


def merge_density(mera: FiniteMera, plan: JointCone) -> np.ndarray:
    """Density of the two windows on the merge lattice, window i first."""
    chain = [list(s) for s in plan.site_sets]
    psi = mera.top.vector()
    rho = partial_trace(np.outer(psi, psi.conj()), mera.D, 4, chain[-1])
    base = plan.merge_level
    for lv in range(mera.levels, base - 1, -1):
        rho = descend_sites(rho, chain[lv - base + 1], chain[lv - base], mera.layer(lv))
    return rho


def joint_density(mera: FiniteMera, plan: JointCone) -> np.ndarray:
    """
    Density on the union of the two bottom windows.

    For disjoint windows the result is on six sites, window i then window j;
    otherwise on the union, window i first.
    """
    rho = merge_density(mera, plan)
    if plan.overlapping:
        return rho
    dim = mera.D ** 3
    tensor = rho.reshape(dim, dim, dim, dim)
    for step_i, step_j in zip(reversed(plan.steps_i), reversed(plan.steps_j)):
        k_i = step_i.family().operators
        k_j = step_j.family().operators
        tensor = np.einsum('rab,ajcl,rcd->bjdl', k_i.conj(), tensor, k_i, optimize=True)
        tensor = np.einsum('rab,iakc,rcd->ibkd', k_j.conj(), tensor, k_j, optimize=True)
    return tensor.reshape(dim * dim, dim * dim)
