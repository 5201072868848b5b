"""On-disk formats.

DSMX container: ``b"DSMX"``, uint32 rows, uint32 cols, then ``rows*cols``
little-endian float64 values in row-major order.  Vectors are stored as a
single column.  Graphs are JSON documents with ``positions`` (p x 3) and
``edges`` (list of ``[i, j, distance]``).
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import UsageError
from .model import SourceGraph

MAGIC = b"DSMX"
_HEADER = struct.Struct("<4sII")


def to_dsmx_bytes(a) -> bytes:
    a = np.asarray(a, dtype="<f8")
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise UsageError(f"DSMX holds 2-D arrays, got ndim={a.ndim}")
    rows, cols = a.shape
    return _HEADER.pack(MAGIC, rows, cols) + np.ascontiguousarray(a).tobytes()


def from_dsmx_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise ValueError("truncated DSMX header")
    magic, rows, cols = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ValueError(f"bad DSMX magic {magic!r}")
    expected = _HEADER.size + 8 * rows * cols
    if len(buf) != expected:
        raise ValueError(f"DSMX payload is {len(buf)} bytes, expected {expected}")
    data = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    return data.reshape(rows, cols).astype(float)


def write_dsmx(path, a) -> None:
    Path(path).write_bytes(to_dsmx_bytes(a))


def read_dsmx(path) -> np.ndarray:
    return from_dsmx_bytes(Path(path).read_bytes())


def write_csv_matrix(path, a) -> None:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in a:
            w.writerow([repr(float(v)) for v in row])


def read_csv_matrix(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return np.array(rows, dtype=float)


def read_matrix(path) -> np.ndarray:
    """Read a DSMX file, or CSV when the extension is ``.csv``."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_csv_matrix(path)
    return read_dsmx(path)


def graph_to_dict(graph: SourceGraph) -> dict:
    edges = [[int(i), int(j), float(d)] for i, j, d in graph.edges]
    return {"positions": graph.positions.tolist(), "edges": edges}


def graph_from_dict(doc: dict) -> SourceGraph:
    try:
        positions = doc["positions"]
        edges = doc.get("edges", [])
    except (KeyError, TypeError) as exc:
        raise UsageError("graph document needs 'positions' and 'edges'") from exc
    return SourceGraph(np.asarray(positions, dtype=float), np.asarray(edges, dtype=float).reshape(-1, 3))


def write_graph(path, graph: SourceGraph) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(graph)))


def read_graph(path) -> SourceGraph:
    return graph_from_dict(json.loads(Path(path).read_text()))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def fingerprint(a) -> str:
    """SHA-256 of the DSMX encoding; identifies a truth array across files."""
    return hashlib.sha256(to_dsmx_bytes(a)).hexdigest()


_TRAJ_FIELDS = (
    "predicted_mean", "predicted_cov", "filtered_mean", "filtered_cov",
    "smoothed_mean", "smoothed_cov", "gains", "lag_cov",
)


def save_trajectory(directory, traj, fields=None) -> None:
    """Write each requested trajectory field to ``<field>.dsmx`` plus ``manifest.json``.

    Stacked covariance fields of shape ``(T+1, p, p)`` are flattened to
    ``((T+1)*p, p)``; the manifest records the original shapes.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fields = fields or [f for f in _TRAJ_FIELDS if getattr(traj, f) is not None]
    shapes = {}
    for name in fields:
        arr = getattr(traj, name)
        if arr is None:
            raise UsageError(f"trajectory has no field {name!r}")
        shapes[name] = list(arr.shape)
        write_dsmx(directory / f"{name}.dsmx", arr.reshape(-1, arr.shape[-1]))
    write_json(directory / "manifest.json", {
        "T": int(traj.T), "p": int(traj.p), "fields": shapes,
    })


def load_trajectory_fields(directory) -> dict:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    out = {}
    for name, shape in manifest["fields"].items():
        out[name] = read_dsmx(directory / f"{name}.dsmx").reshape(shape)
    return out
