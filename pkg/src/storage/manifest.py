"""
Manifest Module
Reads and writes networks as JSON manifests (format_version 1).

Every tensor is stored as {role, level, position, shape, entries} with the
entries a flat row-major list of [re, im] pairs. position null marks a
tensor shared by every position of its layer; level null marks the
scale-invariant tensors and the top.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from src.core.exceptions import ManifestError, NetworkValidationError
from src.network.mera import (
    Disentangler,
    FiniteMera,
    Isometry,
    MeraLayer,
    Network,
    ScaleInvariantMera,
    TopTensor,
    validate,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
KINDS = ('finite', 'scale_invariant')


def encode_tensor(tensor: np.ndarray, role: str, level: Optional[int] = None, position: Optional[int] = None) -> Dict:
    flat = np.asarray(tensor, dtype=complex).reshape(-1)
    return {
        'role': role,
        'level': level,
        'position': position,
        'shape': list(tensor.shape),
        'entries': [[float(z.real), float(z.imag)] for z in flat],
    }


def decode_tensor(entry: Dict) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in entry['shape'])
        pairs = np.array(entry['entries'], dtype=float)
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError(f"Malformed tensor entry: {str(e)}")
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ManifestError(f"Entries of {entry.get('role')} must be [re, im] pairs")
    if pairs.shape[0] != int(np.prod(shape)):
        raise ManifestError(f"{entry.get('role')} has {pairs.shape[0]} entries for shape {list(shape)}")
    return (pairs[:, 0] + 1j * pairs[:, 1]).reshape(shape)


def to_document(network: Network) -> Dict:
    """JSON-ready manifest of a network."""
    if isinstance(network, ScaleInvariantMera):
        return {
            'format_version': FORMAT_VERSION,
            'kind': 'scale_invariant',
            'D': network.D,
            'tensors': [
                encode_tensor(network.chi.tensor, 'chi'),
                encode_tensor(network.lam.tensor, 'lam'),
                encode_tensor(network.top.tensor, 'top'),
            ],
        }

    tensors = []
    for level in range(1, network.levels + 1):
        layer = network.layer(level)
        for role, items in (('chi', layer.disentanglers), ('lam', layer.isometries)):
            if len(items) == 1:
                tensors.append(encode_tensor(items[0].tensor, role, level, None))
            else:
                tensors.extend(encode_tensor(t.tensor, role, level, p) for p, t in enumerate(items))
    tensors.append(encode_tensor(network.top.tensor, 'top'))
    return {'format_version': FORMAT_VERSION, 'kind': 'finite', 'D': network.D, 'n': network.n, 'tensors': tensors}


def _collect(tensors: List[Dict], role: str, level: Optional[int]) -> List[Dict]:
    return [t for t in tensors if t.get('role') == role and t.get('level') == level]


def _layer_tensors(entries: List[Dict], role: str, level: int, size: int) -> tuple:
    wrap = Disentangler if role == 'chi' else Isometry
    if len(entries) == 1 and entries[0].get('position') is None:
        return (wrap(decode_tensor(entries[0])),)
    by_position = {e.get('position'): e for e in entries}
    if sorted(by_position, key=lambda p: (p is None, p)) != list(range(size)):
        raise ManifestError(f"Level {level} needs one shared {role} or positions 0..{size - 1}")
    return tuple(wrap(decode_tensor(by_position[p])) for p in range(size))


def from_document(document: Dict) -> Network:
    """Network from a parsed manifest; raises ManifestError on format problems."""
    if not isinstance(document, dict):
        raise ManifestError("Manifest must be a JSON object")
    if document.get('format_version') != FORMAT_VERSION:
        raise ManifestError(f"Unsupported format_version {document.get('format_version')!r}")
    kind = document.get('kind')
    if kind not in KINDS:
        raise ManifestError(f"Unknown kind {kind!r}; expected one of {KINDS}")
    tensors = document.get('tensors')
    if not isinstance(tensors, list):
        raise ManifestError("Manifest has no tensor list")

    try:
        top_entries = _collect(tensors, 'top', None)
        if len(top_entries) != 1:
            raise ManifestError(f"Expected one top tensor, found {len(top_entries)}")
        top = TopTensor(decode_tensor(top_entries[0]))

        if kind == 'scale_invariant':
            chi, lam = _collect(tensors, 'chi', None), _collect(tensors, 'lam', None)
            if len(chi) != 1 or len(lam) != 1:
                raise ManifestError("A scale-invariant manifest holds exactly one chi and one lam")
            return ScaleInvariantMera(Disentangler(decode_tensor(chi[0])), Isometry(decode_tensor(lam[0])), top)

        n = int(document['n'])
        layers = []
        for level in range(1, n - 1):
            size = 2 ** (n - level)
            chis = _layer_tensors(_collect(tensors, 'chi', level), 'chi', level, size)
            lams = _layer_tensors(_collect(tensors, 'lam', level), 'lam', level, size)
            layers.append(MeraLayer(size=size, disentanglers=chis, isometries=lams))
        return FiniteMera(n=n, D=int(document['D']), layers=tuple(layers), top=top)
    except ManifestError:
        raise
    except (AttributeError, KeyError, TypeError, ValueError, NetworkValidationError) as e:
        raise ManifestError(f"Invalid manifest: {str(e)}")


def save(network: Network, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_document(network)))
    logger.info("Saved %s manifest to %s", 'scale-invariant' if isinstance(network, ScaleInvariantMera) else 'finite', path)
    return path


def load(path: Union[str, Path], check: bool = True, tol: float = None) -> Network:
    """
    Load a manifest.

    Args:
        path: JSON manifest file
        check: Run validate() and raise NetworkValidationError on failure
        tol: Validation tolerance (Config.STRUCT_TOL)

    Returns:
        FiniteMera or ScaleInvariantMera
    """
    try:
        document = json.loads(Path(path).read_text())
    except OSError as e:
        raise ManifestError(f"Cannot read manifest {path}: {str(e)}")
    except ValueError as e:
        raise ManifestError(f"Manifest {path} is not valid JSON: {str(e)}")
    network = from_document(document)
    if check:
        report = validate(network, tol)
        if not report.valid:
            worst = report.failures()[0]
            raise NetworkValidationError(
                f"Manifest {path} breaks the contraction rules ({worst.role} residual {worst.residual:.3e})",
                report=report,
            )
    return network
