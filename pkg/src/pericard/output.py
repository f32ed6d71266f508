"""VTU snapshots, PVD collections and CSV time series."""

from __future__ import annotations

import csv
import sys
from pathlib import Path
from xml.sax.saxutils import quoteattr

import numpy as np

from .elements import GMSH_TO_VTK_TET10
from .mesh import Mesh

VTK_QUADRATIC_TETRA = 24

_VTK_TYPES = {
    np.dtype(np.float64): "Float64",
    np.dtype(np.float32): "Float32",
    np.dtype(np.int64): "Int64",
    np.dtype(np.int32): "Int32",
    np.dtype(np.uint8): "UInt8",
}


def _array_info(a):
    a = np.ascontiguousarray(a)
    if a.dtype not in _VTK_TYPES:
        a = a.astype(np.float64)
    ncomp = 1 if a.ndim == 1 else int(np.prod(a.shape[1:]))
    return a.reshape(len(a), ncomp) if a.ndim > 1 else a, ncomp


def write_vtu(path, mesh: Mesh, point_data=None, cell_data=None, *, fmt="appended", displacement=None):
    """Write the solid elements as quadratic tetrahedra.

    Parameters
    ----------
    point_data, cell_data : dict of str -> array
        Nodal ``(N,)``/``(N, k)`` and element ``(E,)``/``(E, k)`` fields.
    fmt : {"appended", "ascii"}
        Raw appended binary (little-endian, UInt64 headers) or inline ASCII.
    displacement : array, optional
        Written as ``displacement`` point data; the geometry stays the
        reference one so viewers can warp by vector.
    """
    if fmt not in ("appended", "ascii"):
        raise ValueError("fmt must be 'appended' or 'ascii'")
    point_data = dict(point_data or {})
    cell_data = dict(cell_data or {})
    if displacement is not None:
        point_data = {"displacement": np.asarray(displacement, float).reshape(-1, 3), **point_data}
    for name, a in point_data.items():
        if len(a) != mesh.n_nodes:
            raise ValueError(f"point field {name!r} has {len(a)} rows, mesh has {mesh.n_nodes} nodes")
    for name, a in cell_data.items():
        if len(a) != mesh.n_elements:
            raise ValueError(f"cell field {name!r} has {len(a)} rows, mesh has {mesh.n_elements} elements")

    conn = mesh.elements[:, GMSH_TO_VTK_TET10].astype(np.int64)
    arrays = []  # (section, name, array, ncomp)
    arrays.append(("Points", "Points", mesh.nodes.astype(np.float64), 3))
    arrays.append(("Cells", "connectivity", conn.ravel(), 1))
    arrays.append(("Cells", "offsets", np.arange(1, mesh.n_elements + 1, dtype=np.int64) * 10, 1))
    arrays.append(("Cells", "types", np.full(mesh.n_elements, VTK_QUADRATIC_TETRA, np.uint8), 1))
    for name, a in point_data.items():
        a, nc = _array_info(np.asarray(a))
        arrays.append(("PointData", name, a, nc))
    for name, a in cell_data.items():
        a, nc = _array_info(np.asarray(a))
        arrays.append(("CellData", name, a, nc))

    blobs = []
    offset = 0
    xml = {"Points": [], "Cells": [], "PointData": [], "CellData": []}
    for section, name, a, nc in arrays:
        a = np.ascontiguousarray(a)
        if a.dtype.byteorder == ">" or (a.dtype.byteorder == "=" and sys.byteorder == "big"):
            a = a.byteswap().view(a.dtype.newbyteorder("<"))
        attrs = f'type="{_VTK_TYPES[a.dtype]}" Name={quoteattr(name)} NumberOfComponents="{nc}"'
        if fmt == "ascii":
            body = " ".join(repr(v) if isinstance(v, float) else str(v) for v in a.ravel().tolist())
            xml[section].append(f'<DataArray {attrs} format="ascii">{body}</DataArray>')
        else:
            raw = a.tobytes()
            xml[section].append(f'<DataArray {attrs} format="appended" offset="{offset}"/>')
            blob = np.uint64(len(raw)).tobytes() + raw
            blobs.append(blob)
            offset += len(blob)

    head = [
        '<?xml version="1.0"?>',
        '<VTKFile type="UnstructuredGrid" version="1.0" byte_order="LittleEndian" header_type="UInt64">',
        "<UnstructuredGrid>",
        f'<Piece NumberOfPoints="{mesh.n_nodes}" NumberOfCells="{mesh.n_elements}">',
        "<PointData>", *xml["PointData"], "</PointData>",
        "<CellData>", *xml["CellData"], "</CellData>",
        "<Points>", *xml["Points"], "</Points>",
        "<Cells>", *xml["Cells"], "</Cells>",
        "</Piece>",
        "</UnstructuredGrid>",
    ]
    with open(path, "wb") as fh:
        fh.write("\n".join(head).encode())
        if fmt == "appended":
            fh.write(b'\n<AppendedData encoding="raw">\n_')
            for b in blobs:
                fh.write(b)
            fh.write(b"\n</AppendedData>")
        fh.write(b"\n</VTKFile>\n")


def write_pvd(path, entries):
    """Collection file listing ``(time, vtu file name)`` pairs."""
    lines = ['<?xml version="1.0"?>', '<VTKFile type="Collection" version="1.0">', "<Collection>"]
    lines += [f'<DataSet timestep="{float(t)!r}" file={quoteattr(str(f))}/>' for t, f in entries]
    lines += ["</Collection>", "</VTKFile>", ""]
    Path(path).write_text("\n".join(lines))


class TimeSeriesWriter:
    """CSV with a fixed column list, header first, one row per call to :meth:`write`.

    Floats are written with ``repr`` so values round-trip exactly and two
    identical runs give identical files.
    """

    def __init__(self, path, columns):
        self.columns = list(columns)
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(self.columns)
        self._fh.flush()

    def write(self, row: dict):
        missing = [c for c in self.columns if c not in row]
        if missing:
            raise KeyError(f"time-series row lacks columns {missing}")
        self._w.writerow([_fmt(row[c]) for c in self.columns])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def read_time_series(path):
    """Read a CSV written by :class:`TimeSeriesWriter` into ``{column: float array}``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    return {c: np.array([float(r[i]) for r in body]) for i, c in enumerate(head)}
