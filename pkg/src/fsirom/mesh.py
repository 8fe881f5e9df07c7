"""Two-region triangulations of the channel-with-leaflets geometry.

The generator splits the channel into axis-aligned blocks whose edges sit on
every material boundary, so fluid and solid triangles share interface edges
exactly. The diagonal orientation is mirrored about the channel mid-line,
which makes the mesh (and hence the discrete problem) symmetric top/bottom.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FileFormatError, InvalidGeometryError, InvalidMeshError, MeshingFailedError

__all__ = [
    "Region",
    "BoundaryTag",
    "ChannelGeometry",
    "Mesh",
    "Violation",
    "ValidationReport",
    "generate_channel_mesh",
    "rectangle_mesh",
    "validate_mesh",
    "interface_facets",
    "read_mesh",
    "write_mesh",
]

MAX_TRIANGLES = 2_000_000


class Region(enum.IntEnum):
    FLUID = 1
    SOLID = 2


class BoundaryTag(enum.IntEnum):
    INLET = 10
    OUTLET = 11
    TOP = 12
    BOTTOM = 13
    FSI_INTERFACE = 20
    SOLID_CLAMP = 21


FLUID_TAGS = frozenset(
    {BoundaryTag.INLET, BoundaryTag.OUTLET, BoundaryTag.TOP, BoundaryTag.BOTTOM, BoundaryTag.FSI_INTERFACE}
)
SOLID_TAGS = frozenset({BoundaryTag.SOLID_CLAMP, BoundaryTag.FSI_INTERFACE})


@dataclass(frozen=True)
class ChannelGeometry:
    """Channel with two wall-mounted leaflets, all lengths in cm.

    ``map_transition`` is the width of the blending zones on either side of
    the leaflet strip used by the shape parametrization; the generator puts
    vertex lines at their ends.
    """

    length: float = 10.0
    height: float = 2.5
    leaflet_length: float = 1.0
    leaflet_thickness: float = 0.2
    leaflet_x_position: float = 1.0
    target_edge_size: float = 0.1
    map_transition: float = 0.5

    def check(self):
        if not (self.length > 0 and self.height > 0 and self.target_edge_size > 0):
            raise InvalidGeometryError("length, height and edge size must be positive")
        if not 0 < self.leaflet_length < self.height / 2:
            raise InvalidGeometryError(
                f"leaflet_length={self.leaflet_length} must lie in (0, height/2={self.height / 2})"
            )
        if not 0 < self.leaflet_thickness < self.length:
            raise InvalidGeometryError("leaflet_thickness must lie in (0, length)")
        if self.leaflet_x_position <= 0 or self.leaflet_x_position + self.leaflet_thickness >= self.length:
            raise InvalidGeometryError("leaflets must lie strictly inside the channel")
        if self.map_transition < 0:
            raise InvalidGeometryError("map_transition must be nonnegative")

    @property
    def strip(self):
        return self.leaflet_x_position, self.leaflet_x_position + self.leaflet_thickness

    def transition_bounds(self):
        """x-range of the blending zones ``(left_start, strip_left, strip_right, right_end)``."""
        x0, x1 = self.strip
        return max(0.0, x0 - self.map_transition), x0, x1, min(self.length, x1 + self.map_transition)


@dataclass(eq=False)
class Mesh:
    """Conforming triangulation with region and facet tags.

    ``facet_tags`` maps a sorted vertex pair ``(i, j)`` to a :class:`BoundaryTag`.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    region: np.ndarray
    facet_tags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.region = np.ascontiguousarray(self.region, dtype=np.int64)
        self.facet_tags = {tuple(sorted(map(int, k))): BoundaryTag(v) for k, v in self.facet_tags.items()}
        self._edges = None

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def signed_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def cells(self, region):
        return np.flatnonzero(self.region == int(region))

    def edge_table(self):
        """Unique edges and, for every edge, the triangles that contain it.

        Returns ``(edges, tri_edges, owners)`` where ``edges`` is ``(n_e, 2)``
        sorted pairs, ``tri_edges[t, k]`` is the edge between local vertices
        ``k`` and ``(k+1) % 3`` of triangle ``t``, and ``owners`` lists the
        owning triangle ids per edge.
        """
        if self._edges is None:
            t = self.triangles
            local = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1).reshape(-1, 2)
            local = np.sort(local, axis=1)
            edges, inverse = np.unique(local, axis=0, return_inverse=True)
            inverse = inverse.reshape(-1)
            tri_edges = inverse.reshape(-1, 3)
            owners = [[] for _ in range(len(edges))]
            for flat, e in enumerate(inverse):
                owners[e].append(flat // 3)
            self._edges = (edges, tri_edges, owners)
        return self._edges

    def tagged_edges(self, tag):
        return np.array(sorted(k for k, v in self.facet_tags.items() if v == tag), dtype=np.int64).reshape(-1, 2)

    def tagged_vertices(self, *tags):
        verts = set()
        for k, v in self.facet_tags.items():
            if v in tags:
                verts.update(k)
        return np.array(sorted(verts), dtype=np.int64)


@dataclass
class Violation:
    kind: str
    index: object
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    def __bool__(self):
        return bool(self.violations)

    def __len__(self):
        return len(self.violations)

    def kinds(self):
        return {v.kind for v in self.violations}

    def add(self, kind, index, detail=""):
        self.violations.append(Violation(kind, index, detail))


def _divisions(breaks, h):
    coords = [breaks[0]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, math.ceil((b - a) / h - 1e-9))
        coords.extend(np.linspace(a, b, n + 1)[1:])
    return np.array(coords)


def _unique_breaks(values):
    out = []
    for v in sorted(values):
        if not out or v - out[-1] > 1e-12:
            out.append(v)
    return out


def _block_mesh(xs, ys, solid_fn, mirror_y):
    nx, ny = len(xs) - 1, len(ys) - 1
    if 2 * nx * ny > MAX_TRIANGLES:
        raise MeshingFailedError(f"{2 * nx * ny} triangles exceed the limit {MAX_TRIANGLES}")
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    tris, region = [], []
    for i in range(nx):
        xc = 0.5 * (xs[i] + xs[i + 1])
        for j in range(ny):
            yc = 0.5 * (ys[j] + ys[j + 1])
            v00, v10, v11, v01 = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if mirror_y is not None and yc > mirror_y:
                tris += [(v00, v10, v01), (v10, v11, v01)]
            else:
                tris += [(v00, v10, v11), (v00, v11, v01)]
            r = Region.SOLID if solid_fn(xc, yc) else Region.FLUID
            region += [r, r]
    return vertices, np.array(tris), np.array(region)


def _tag_boundary(mesh, xmin, xmax, ymin, ymax, tol=1e-12):
    edges, _, owners = mesh.edge_table()
    tags = {}
    v = mesh.vertices
    for e, own in enumerate(owners):
        regs = {int(mesh.region[t]) for t in own}
        a, b = edges[e]
        key = (int(a), int(b))
        if len(own) == 2:
            if regs == {Region.FLUID, Region.SOLID}:
                tags[key] = BoundaryTag.FSI_INTERFACE
            continue
        pa, pb = v[a], v[b]
        if regs == {Region.SOLID}:
            tags[key] = BoundaryTag.SOLID_CLAMP
        elif abs(pa[0] - xmin) < tol and abs(pb[0] - xmin) < tol:
            tags[key] = BoundaryTag.INLET
        elif abs(pa[0] - xmax) < tol and abs(pb[0] - xmax) < tol:
            tags[key] = BoundaryTag.OUTLET
        elif abs(pa[1] - ymin) < tol and abs(pb[1] - ymin) < tol:
            tags[key] = BoundaryTag.BOTTOM
        elif abs(pa[1] - ymax) < tol and abs(pb[1] - ymax) < tol:
            tags[key] = BoundaryTag.TOP
    mesh.facet_tags = tags
    return mesh


def generate_channel_mesh(geom: ChannelGeometry) -> Mesh:
    """Structured block triangulation of the channel with two leaflets."""
    geom.check()
    a, x0, x1, b = geom.transition_bounds()
    xbreaks = _unique_breaks([0.0, a, x0, x1, b, geom.length])
    H, ell = geom.height, geom.leaflet_length
    ybreaks = _unique_breaks([0.0, ell, H / 2, H - ell, H])
    xs = _divisions(xbreaks, geom.target_edge_size)
    ys = _divisions(ybreaks, geom.target_edge_size)

    def solid(xc, yc):
        return x0 < xc < x1 and (yc < ell or yc > H - ell)

    vertices, tris, region = _block_mesh(xs, ys, solid, mirror_y=H / 2)
    mesh = _tag_boundary(Mesh(vertices, tris, region), 0.0, geom.length, 0.0, H)
    report = validate_mesh(mesh)
    if report:
        raise MeshingFailedError(f"generated mesh violates {sorted(report.kinds())}")
    return mesh


def rectangle_mesh(nx, ny, lx=1.0, ly=1.0):
    """All-fluid ``nx`` by ``ny`` right-triangle mesh of ``[0, lx] x [0, ly]``.

    Tags follow the channel convention: left INLET, right OUTLET, bottom
    BOTTOM, top TOP. Used by convergence and extension tests.
    """
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    vertices, tris, region = _block_mesh(xs, ys, lambda x, y: False, mirror_y=None)
    return _tag_boundary(Mesh(vertices, tris, region), 0.0, lx, 0.0, ly)


def _point_on_segment(points, a, b, tol):
    ab = b - a
    L2 = ab @ ab
    s = ((points - a) @ ab) / L2
    proj = a + np.outer(s, ab)
    dist = np.linalg.norm(points - proj, axis=1)
    return (dist < tol) & (s > tol) & (s < 1 - tol)


def validate_mesh(mesh: Mesh) -> ValidationReport:
    """Report every violated mesh invariant; an empty report means valid."""
    report = ValidationReport()
    areas = mesh.signed_areas()
    for t in np.flatnonzero(areas <= 0):
        report.add("NEGATIVE_AREA", int(t), f"signed area {areas[t]:.3e}")
    bad_region = ~np.isin(mesh.region, [Region.FLUID, Region.SOLID])
    for t in np.flatnonzero(bad_region):
        report.add("BAD_REGION", int(t))

    edges, _, owners = mesh.edge_table()
    scale = np.ptp(mesh.vertices, axis=0).max() if mesh.n_vertices else 1.0
    tol = 1e-10 * max(scale, 1.0)
    edge_keys = {(int(a), int(b)): e for e, (a, b) in enumerate(edges)}
    for e, own in enumerate(owners):
        key = (int(edges[e, 0]), int(edges[e, 1]))
        if len(own) > 2:
            report.add("NONCONFORMING_EDGE", key, f"shared by {len(own)} triangles")
            continue
        regs = sorted(int(mesh.region[t]) for t in own)
        tag = mesh.facet_tags.get(key)
        if len(own) == 2:
            if regs == [Region.FLUID, Region.SOLID]:
                if tag is None:
                    report.add("UNTAGGED_BOUNDARY_EDGE", key, "fluid-solid edge")
                elif tag != BoundaryTag.FSI_INTERFACE:
                    report.add("WRONG_INTERFACE_TAG", key, tag.name)
            elif tag is not None:
                report.add("TAGGED_INTERIOR_EDGE", key, tag.name)
            continue
        if tag is None:
            report.add("UNTAGGED_BOUNDARY_EDGE", key)
            continue
        if regs == [Region.FLUID] and tag not in FLUID_TAGS - {BoundaryTag.FSI_INTERFACE}:
            report.add("BAD_TAG", key, f"{tag.name} on fluid boundary")
        if regs == [Region.SOLID] and tag != BoundaryTag.SOLID_CLAMP:
            report.add("BAD_TAG", key, f"{tag.name} on solid boundary")
    for key in mesh.facet_tags:
        if key not in edge_keys:
            report.add("DANGLING_TAG", key)

    # hanging nodes along boundary edges (interior hanging nodes would have
    # produced unmatched boundary edges already).
    boundary = [e for e, own in enumerate(owners) if len(own) == 1]
    v = mesh.vertices
    for e in boundary:
        a, b = edges[e]
        hit = _point_on_segment(v, v[a], v[b], tol)
        hit[[a, b]] = False
        if hit.any():
            report.add("HANGING_NODE", (int(a), int(b)), f"vertex {int(np.flatnonzero(hit)[0])}")
    return report


def interface_facets(mesh: Mesh):
    """FSI edges with their unit normals pointing out of the fluid region.

    Returns a list of ``((i, j), normal, fluid_triangle)`` tuples.
    """
    report = validate_mesh(mesh)
    if report:
        raise InvalidMeshError(f"mesh invalid: {sorted(report.kinds())}")
    edges, _, owners = mesh.edge_table()
    index = {(int(a), int(b)): e for e, (a, b) in enumerate(edges)}
    out = []
    v = mesh.vertices
    for key in sorted(k for k, tag in mesh.facet_tags.items() if tag == BoundaryTag.FSI_INTERFACE):
        own = owners[index[key]]
        tf = next(t for t in own if mesh.region[t] == Region.FLUID)
        a, b = key
        tvec = v[b] - v[a]
        n = np.array([tvec[1], -tvec[0]]) / np.hypot(*tvec)
        third = next(int(k) for k in mesh.triangles[tf] if k not in key)
        if n @ (v[third] - v[a]) > 0:
            n = -n
        out.append((key, n, int(tf)))
    return out


def write_mesh(mesh: Mesh, path):
    path = Path(path)
    lines = ["FSIMESH 1", f"VERTICES {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"TRIANGLES {mesh.n_triangles}")
    lines += [f"{i} {j} {k} {r}" for (i, j, k), r in zip(mesh.triangles.tolist(), mesh.region.tolist())]
    facets = sorted(mesh.facet_tags.items())
    lines.append(f"FACETS {len(facets)}")
    lines += [f"{i} {j} {int(t)}" for (i, j), t in facets]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_mesh(path) -> Mesh:
    tokens = Path(path).read_text().split("\n")
    tokens = [t.strip() for t in tokens if t.strip()]
    if not tokens or tokens[0] != "FSIMESH 1":
        raise FileFormatError(f"{path}: missing 'FSIMESH 1' header")
    pos = 1

    def section(name):
        nonlocal pos
        head = tokens[pos].split()
        if head[0] != name:
            raise FileFormatError(f"{path}: expected {name}, found {head[0]}")
        n = int(head[1])
        rows = [r.split() for r in tokens[pos + 1 : pos + 1 + n]]
        pos += 1 + n
        return rows

    verts = np.array(section("VERTICES"), dtype=float).reshape(-1, 2)
    tri_rows = np.array(section("TRIANGLES"), dtype=np.int64).reshape(-1, 4)
    facet_rows = section("FACETS")
    tags = {(int(i), int(j)): BoundaryTag(int(t)) for i, j, t in facet_rows}
    return Mesh(verts, tri_rows[:, :3], tri_rows[:, 3], tags)
