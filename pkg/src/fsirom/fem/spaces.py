"""Lagrange function spaces restricted to one mesh region."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ..errors import SpaceMismatchError
from ..mesh import Mesh, Region
from .quadrature import triangle_rule

__all__ = ["Family", "FunctionSpace", "Field", "p1_values", "p2_values"]

_DLAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
_EDGES = ((0, 1), (1, 2), (2, 0))


class Family(str, enum.Enum):
    P1_SCALAR = "P1_SCALAR"
    P1_VECTOR = "P1_VECTOR"
    P2_SCALAR = "P2_SCALAR"
    P2_VECTOR = "P2_VECTOR"

    @property
    def degree(self):
        return 2 if self.name.startswith("P2") else 1

    @property
    def n_components(self):
        return 2 if self.name.endswith("VECTOR") else 1


def _barycentric(xi):
    xi = np.atleast_2d(xi)
    return np.column_stack([1.0 - xi[:, 0] - xi[:, 1], xi[:, 0], xi[:, 1]])


def p1_values(xi):
    """P1 basis values ``(n_points, 3)`` and reference gradients ``(n_points, 3, 2)``."""
    lam = _barycentric(xi)
    return lam, np.broadcast_to(_DLAMBDA, (len(lam), 3, 2)).copy()


def p2_values(xi):
    """P2 basis values ``(n_points, 6)`` and reference gradients ``(n_points, 6, 2)``.

    Local order: three vertex functions, then edges (0,1), (1,2), (2,0).
    """
    lam = _barycentric(xi)
    n = len(lam)
    val = np.empty((n, 6))
    grad = np.empty((n, 6, 2))
    for i in range(3):
        val[:, i] = lam[:, i] * (2 * lam[:, i] - 1)
        grad[:, i] = (4 * lam[:, i] - 1)[:, None] * _DLAMBDA[i]
    for k, (i, j) in enumerate(_EDGES):
        val[:, 3 + k] = 4 * lam[:, i] * lam[:, j]
        grad[:, 3 + k] = 4 * (lam[:, i, None] * _DLAMBDA[j] + lam[:, j, None] * _DLAMBDA[i])
    return val, grad


class FunctionSpace:
    """Continuous Lagrange space on the triangles of one region.

    Vector spaces interleave components: the dof of node ``n``, component
    ``c`` is ``2 * n + c``. Nodes are the region's vertices (in increasing
    global order) followed, for P2, by its edges.
    """

    def __init__(self, mesh: Mesh, family, region=Region.FLUID):
        self.mesh = mesh
        self.family = Family(family)
        self.region = Region(region)
        self.cells = mesh.cells(self.region)
        tri = mesh.triangles[self.cells]
        self.vertices = np.unique(tri)
        self.vertex_to_node = np.full(mesh.n_vertices, -1, dtype=np.int64)
        self.vertex_to_node[self.vertices] = np.arange(len(self.vertices))
        cell_nodes = self.vertex_to_node[tri]
        coords = mesh.vertices[self.vertices]
        self.edges = None
        if self.family.degree == 2:
            edges, tri_edges, _ = mesh.edge_table()
            cell_edges = tri_edges[self.cells]
            used = np.unique(cell_edges)
            edge_to_node = np.full(len(edges), -1, dtype=np.int64)
            edge_to_node[used] = len(self.vertices) + np.arange(len(used))
            self.edge_to_node = edge_to_node
            self.edges = edges[used]
            cell_nodes = np.hstack([cell_nodes, edge_to_node[cell_edges]])
            mid = 0.5 * (mesh.vertices[self.edges[:, 0]] + mesh.vertices[self.edges[:, 1]])
            coords = np.vstack([coords, mid])
        self.cell_nodes = cell_nodes
        self.node_coords = coords
        self.n_nodes = len(coords)
        self.n_components = self.family.n_components
        self.n_dofs = self.n_nodes * self.n_components
        nc = self.n_components
        self.dof_map = (nc * cell_nodes[:, :, None] + np.arange(nc)).reshape(len(self.cells), -1)

        p = mesh.vertices[tri]
        B = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        self.B = B
        self.detB = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
        self.area = 0.5 * np.abs(self.detB)
        self.Binv = np.linalg.inv(B)
        xi, w = triangle_rule()
        self.qweights = w
        self.qpoints = xi
        self.basis, self.dbasis = (p2_values if self.family.degree == 2 else p1_values)(xi)

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_local(self):
        return self.cell_nodes.shape[1]

    def same_cells(self, other):
        return other.mesh is self.mesh and other.region == self.region

    def require_same_cells(self, other):
        if not self.same_cells(other):
            raise SpaceMismatchError(f"{self.family.value}/{self.region.name} vs {other.family.value}/{other.region.name}")

    def quadrature_points(self):
        """Physical (reference configuration) quadrature points ``(n_cells, n_q, 2)``."""
        x0 = self.mesh.vertices[self.mesh.triangles[self.cells, 0]]
        return x0[:, None, :] + np.einsum("eij,qj->eqi", self.B, self.qpoints)

    def gradients(self, Finv=None):
        """Basis gradients ``(n_cells, n_q, n_local, 2)`` in the configuration mapped by ``Finv``.

        ``Finv`` is the per-cell inverse deformation gradient of the map from
        the mesh configuration; ``None`` means the mesh configuration itself.
        """
        M = self.Binv if Finv is None else self.Binv @ Finv
        return np.matmul(self.dbasis[None], M[:, None])

    def node_set(self, vertices=None, tags=None):
        """Local node ids lying on the given global vertices or on edges with the given tags."""
        nodes = set()
        if vertices is not None:
            loc = self.vertex_to_node[np.asarray(vertices, dtype=np.int64)]
            nodes.update(int(n) for n in loc if n >= 0)
        if tags is not None:
            tags = set(tags)
            keyed = [k for k, t in self.mesh.facet_tags.items() if t in tags]
            for a, b in keyed:
                for v in (a, b):
                    n = self.vertex_to_node[v]
                    if n >= 0:
                        nodes.add(int(n))
            if self.family.degree == 2 and keyed:
                edges, _, _ = self.mesh.edge_table()
                lookup = {(int(a), int(b)): e for e, (a, b) in enumerate(edges)}
                for k in keyed:
                    n = self.edge_to_node[lookup[k]]
                    if n >= 0:
                        nodes.add(int(n))
        return np.array(sorted(nodes), dtype=np.int64)

    def node_dofs(self, nodes):
        nodes = np.asarray(nodes, dtype=np.int64)
        nc = self.n_components
        return (nc * nodes[:, None] + np.arange(nc)).ravel()

    def boundary_dofs(self, *tags):
        return self.node_dofs(self.node_set(tags=tags))

    def interpolate(self, fn):
        """Nodal interpolant of ``fn(xy) -> (n,)`` or ``(n, 2)``."""
        vals = np.asarray(fn(self.node_coords), dtype=float)
        return vals.reshape(-1) if self.n_components == 1 else vals.reshape(self.n_nodes, 2).ravel()

    def evaluate(self, coeffs):
        """Values ``(n_cells, n_q)`` or ``(n_cells, n_q, 2)`` at quadrature points."""
        local = self.local(coeffs)
        if self.n_components == 1:
            return np.einsum("qa,ea->eq", self.basis, local)
        return np.einsum("qa,eac->eqc", self.basis, local)

    def local(self, coeffs):
        coeffs = np.asarray(coeffs)
        if self.n_components == 1:
            return coeffs[self.cell_nodes]
        return coeffs.reshape(-1, 2)[self.cell_nodes]


@dataclass
class Field:
    """Coefficient vector on a function space."""

    space: FunctionSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.n_dofs,):
            raise SpaceMismatchError(f"expected {self.space.n_dofs} coefficients, got {self.coefficients.shape}")
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("field contains non-finite values")

    @classmethod
    def zeros(cls, space):
        return cls(space, np.zeros(space.n_dofs))

    def nodal(self):
        return self.coefficients.reshape(self.space.n_nodes, self.space.n_components)
