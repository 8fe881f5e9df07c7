"""Legacy ASCII VTK export of fields on the whole two-region mesh.

P2 velocities are subsampled to mesh vertices (edge-midpoint values are
dropped). Point fields that live on one region are zero on vertices of the
other one; the displacement is ``d_f`` on fluid vertices and ``d_s`` on
solid vertices (they agree on the interface).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FileFormatError
from .offline import _check_new

__all__ = ["point_values", "write_vtk", "read_vtk"]


def point_values(space, coeffs):
    """Vertex values ``(n_vertices, n_components)`` of a field; zero off the space's region."""
    coeffs = np.asarray(coeffs, dtype=float)
    nc = space.n_components
    out = np.zeros((space.mesh.n_vertices, nc))
    nodal = coeffs.reshape(space.n_nodes, nc)
    out[space.vertices] = nodal[space.vertex_to_node[space.vertices]]
    return out


def _fmt(a):
    return " ".join(repr(float(v)) for v in a)


def write_vtk(path, mesh, point_data=None, cell_data=None, displacement=None, coords=None, title="fsirom", overwrite=False):
    """Write an unstructured grid of triangles.

    ``point_data`` maps names to ``(n_vertices,)`` scalars or ``(n_vertices, 2)``
    vectors; ``coords`` overrides vertex positions and ``displacement`` is added
    to them, which gives the deformed configuration.
    """
    path = _check_new(path, overwrite)
    pts = np.array(mesh.vertices if coords is None else coords, dtype=float)
    if displacement is not None:
        pts = pts + np.asarray(displacement, dtype=float)
    n, m = mesh.n_vertices, mesh.n_triangles
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
    lines += [f"{_fmt(p)} 0.0" for p in pts]
    lines.append(f"CELLS {m} {4 * m}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {m}")
    lines += ["5"] * m
    cell_data = dict(cell_data or {})
    cell_data.setdefault("region", mesh.region)
    lines.append(f"CELL_DATA {m}")
    for name, vals in cell_data.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [repr(float(v)) for v in np.asarray(vals)]
    if point_data:
        lines.append(f"POINT_DATA {n}")
        for name, vals in point_data.items():
            vals = np.asarray(vals, dtype=float)
            if vals.ndim == 2 and vals.shape[1] == 1:
                vals = vals[:, 0]
            if vals.shape[0] != n:
                raise ValueError(f"point field {name!r} has {vals.shape[0]} values for {n} vertices")
            if vals.ndim == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [repr(float(v)) for v in vals]
            else:
                lines.append(f"VECTORS {name} double")
                lines += [f"{_fmt(v)} 0.0" for v in vals]
    Path(path).write_text("\n".join(lines) + "\n")
    return path


def read_vtk(path):
    """Minimal reader for files produced by :func:`write_vtk`.

    Returns ``(points (n, 3), triangles (m, 3), point_data, cell_data)``.
    """
    tokens = Path(path).read_text().split("\n")
    if not tokens[0].startswith("# vtk DataFile"):
        raise FileFormatError(f"{path}: not a legacy VTK file")
    it = iter(tokens[4:])
    points = tris = None
    point_data, cell_data = {}, {}
    section = None
    for line in it:
        if not line.strip():
            continue
        head = line.split()
        if head[0] == "POINTS":
            k = int(head[1])
            points = np.array([[float(x) for x in next(it).split()] for _ in range(k)])
        elif head[0] == "CELLS":
            k = int(head[1])
            tris = np.array([[int(x) for x in next(it).split()[1:]] for _ in range(k)])
        elif head[0] == "CELL_TYPES":
            for _ in range(int(head[1])):
                if next(it).strip() != "5":
                    raise FileFormatError(f"{path}: non-triangle cell")
        elif head[0] in ("CELL_DATA", "POINT_DATA"):
            section = (cell_data if head[0] == "CELL_DATA" else point_data, int(head[1]))
        elif head[0] == "SCALARS":
            store, k = section
            next(it)  # lookup table
            store[head[1]] = np.array([float(next(it)) for _ in range(k)])
        elif head[0] == "VECTORS":
            store, k = section
            store[head[1]] = np.array([[float(x) for x in next(it).split()] for _ in range(k)])
        else:
            raise FileFormatError(f"{path}: unexpected line {line!r}")
    return points, tris, point_data, cell_data
