"""
Records Module
ResultRecord JSON documents and the CSV files written next to them.

Complex numbers are written as [re, im]; CSV floats carry 17 significant
digits so every value reads back bit-exactly.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from src import __version__

logger = logging.getLogger(__name__)

SPECTRUM_COLUMNS = ['index', 're', 'im', 'abs', 'left', 'right']
SERIES_COLUMNS = ['k', 'r', 'delta_re', 'delta_im', 'log2_abs_delta', 'excluded']
TRACE_COLUMNS = ['sweep', 'energy', 'residual', 'gradient', 'step', 'wall_time']


def _fmt(value: float) -> str:
    return format(float(value), '.17g')


def to_jsonable(value: Any) -> Any:
    """Recursively convert numpy scalars, arrays and complex numbers."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return [float(value.real), float(value.imag)]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, Path):
        return str(value)
    return value


@dataclass
class ResultRecord:
    command: str
    config: Dict[str, Any]
    seed: Optional[int]
    outputs: Dict[str, Any] = field(default_factory=dict)
    tool_version: str = __version__
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def to_dict(self) -> Dict[str, Any]:
        return {
            'command': self.command,
            'config': to_jsonable(self.config),
            'seed': self.seed,
            'outputs': to_jsonable(self.outputs),
            'tool_version': self.tool_version,
            'timestamp': self.timestamp,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        logger.info("Wrote %s record to %s", self.command, path)
        return path


def _write_rows(path: Union[str, Path], columns: List[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)
    return path


def write_spectrum_csv(path: Union[str, Path], eigenvalues: Sequence[complex],
                       coefficients: Optional[List[Dict]] = None) -> Path:
    """index, re, im, abs, left, right; the overlap columns are empty without a coefficient table."""
    overlaps = {c['index']: c for c in coefficients or []}
    rows = []
    for i, value in enumerate(eigenvalues):
        c = overlaps.get(i)
        rows.append([i, _fmt(value.real), _fmt(value.imag), _fmt(abs(value)),
                     _fmt(c['left']) if c else '', _fmt(c['right']) if c else ''])
    return _write_rows(path, SPECTRUM_COLUMNS, rows)


def write_series_csv(path: Union[str, Path], series) -> Path:
    """One row per separation r = 2**k of a CorrelatorSeries."""
    rows = []
    for k, r, value in zip(series.ks, series.separations, series.values):
        magnitude = abs(value)
        log_value = _fmt(np.log2(magnitude)) if magnitude > 0 else ''
        rows.append([k, r, _fmt(value.real), _fmt(value.imag), log_value, int(k in series.excluded)])
    return _write_rows(path, SERIES_COLUMNS, rows)


def write_trace_csv(path: Union[str, Path], trace) -> Path:
    """One row per optimizer sweep; the gradient column is empty for traces that carry none."""
    gradients = list(trace.gradients)
    rows = [[i + 1, _fmt(e), _fmt(r), _fmt(gradients[i]) if i < len(gradients) else '', _fmt(s), _fmt(t)]
            for i, (e, r, s, t) in enumerate(zip(trace.energies, trace.residuals, trace.step_sizes, trace.wall_times))]
    return _write_rows(path, TRACE_COLUMNS, rows)


def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f))
