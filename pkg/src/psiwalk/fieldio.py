"""Binary field snapshots with a JSON sidecar header.

Layout: ``<name>.f64`` holds flat little-endian 64-bit floats in row-major
order over the grid axes.  Complex (wave) fields interleave re/im per point;
vector (drift) fields append the component axis last.  ``<name>.json`` holds
``{dims, points, extent, boundary, time, kind}``.  Round trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .grids import DensityField, Grid, ScalarField, WaveField

_KINDS = ("wave", "density", "drift", "scalar")


def _header(grid: Grid, time: float, kind: str) -> dict:
    return {
        "dims": grid.dims,
        "points": list(grid.points),
        "extent": [list(e) for e in grid.extent],
        "boundary": list(grid.boundary),
        "time": time,
        "kind": kind,
    }


def write_field(field, path) -> Path:
    """Write a field (or a guidance DriftField) as binary + sidecar.

    ``path`` may omit the ``.f64`` suffix.  Returns the binary path.
    """
    kind = getattr(field, "kind", None)
    if kind not in _KINDS:
        raise ValueError(f"cannot serialize object of kind {kind!r}")
    path = Path(path)
    if path.suffix != ".f64":
        path = path.with_suffix(".f64")
    values = field.values if kind != "drift" else field.vectors
    if kind == "wave":
        raw = np.ascontiguousarray(values, dtype="<c16").tobytes()
    else:
        raw = np.ascontiguousarray(values, dtype="<f8").tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(raw)
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(_header(field.grid, field.time, kind), indent=1))
    return path


def read_field(path):
    """Read a snapshot back; the sidecar decides the concrete field type."""
    path = Path(path)
    if path.suffix != ".f64":
        path = path.with_suffix(".f64")
    header = json.loads(path.with_suffix(".json").read_text())
    grid = Grid(
        points=tuple(header["points"]),
        extent=tuple((lo, hi) for lo, hi in header["extent"]),
        boundary=tuple(header["boundary"]),
    )
    kind = header["kind"]
    raw = path.read_bytes()
    time = header["time"]
    if kind == "wave":
        values = np.frombuffer(raw, dtype="<c16").reshape(grid.points)
        return WaveField(grid, values, time)
    if kind == "density":
        values = np.frombuffer(raw, dtype="<f8").reshape(grid.points)
        return DensityField(grid, values, time)
    if kind == "scalar":
        values = np.frombuffer(raw, dtype="<f8").reshape(grid.points)
        return ScalarField(grid, values, time)
    if kind == "drift":
        from .guidance import DriftField

        vectors = np.frombuffer(raw, dtype="<f8").reshape(grid.points + (grid.dims,))
        return DriftField(grid=grid, vectors=vectors, time=time, params=None)
    raise ValueError(f"unknown snapshot kind {kind!r}")
