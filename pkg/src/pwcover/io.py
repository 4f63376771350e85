"""Feature-file parsing and trace serialization."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .covering import SelectionTrace
from .errors import InvalidInputError

TRACE_SCHEMA_VERSION = 1


def parse_feature_text(text: str, labels: bool = False, source: str = "<input>"):
    """Parse comma-separated feature rows.

    Lines starting with ``#`` are comments (the first one may name the
    columns); blank lines are skipped. With ``labels`` the last column is read
    as an integer label and returned separately.

    Returns
    -------
    points : ndarray, shape (n, d)
    labels : ndarray of int or None
    """
    rows: list[list[float]] = []
    labs: list[int] = []
    width = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = [t.strip() for t in line.split(",")]
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise InvalidInputError(f"{source}:{lineno}: expected {width} fields, got {len(tokens)}")
        vals = []
        for tok in tokens:
            try:
                x = float(tok)
            except ValueError:
                raise InvalidInputError(f"{source}:{lineno}: not a number: {tok!r}") from None
            if not math.isfinite(x):
                raise InvalidInputError(f"{source}:{lineno}: non-finite value {tok!r}")
            vals.append(x)
        if labels:
            if width < 2:
                raise InvalidInputError(f"{source}:{lineno}: need features plus a label column")
            lab = vals.pop()
            if lab != int(lab):
                raise InvalidInputError(f"{source}:{lineno}: label {tokens[-1]!r} is not an integer")
            labs.append(int(lab))
        rows.append(vals)
    if not rows:
        raise InvalidInputError(f"{source}: no data rows")
    pts = np.array(rows, dtype=np.float64)
    return pts, (np.array(labs, dtype=np.int64) if labels else None)


def read_feature_file(path, labels: bool = False):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    return parse_feature_text(text, labels=labels, source=str(path))


def write_feature_file(path, points, labels=None, header: list[str] | None = None) -> None:
    """Write points with round-trip float formatting (``repr``)."""
    pts = np.asarray(points, dtype=np.float64)
    lines = []
    if header:
        lines.append("# " + ",".join(header))
    for i, row in enumerate(pts):
        fields = [repr(float(x)) for x in row]
        if labels is not None:
            fields.append(str(int(labels[i])))
        lines.append(",".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def trace_to_dict(trace: SelectionTrace, timings: bool = True,
                  config: dict[str, Any] | None = None, **extra) -> dict[str, Any]:
    d = {
        "schema_version": TRACE_SCHEMA_VERSION,
        "algorithm": trace.algorithm,
        "k": trace.k,
        "chosen": [int(j) for j in trace.chosen],
        "pw_values": [float(x) for x in trace.pw_values],
        "phi_values": [float(x) for x in trace.phi_values],
        "wall_times_ms": [1e3 * t for t in trace.wall_times] if timings else None,
        "converged": bool(trace.converged),
        "early_stopped": bool(trace.early_stopped),
    }
    d.update(extra)
    d["config"] = config or {}
    return d


def write_trace(path, trace: SelectionTrace, timings: bool = True,
                config: dict[str, Any] | None = None, **extra) -> None:
    payload = trace_to_dict(trace, timings, config, **extra)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def read_trace(path) -> dict[str, Any]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "schema_version" not in data:
        raise InvalidInputError(f"{path}: missing schema_version")
    return data
