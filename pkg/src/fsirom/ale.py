"""ALE kinematics and the shape-parametrization map.

The shape map stretches the leaflet strip vertically so the leaflets get
length ``mu_g``; it is blended to the identity over ``map_transition`` on
both sides of the strip and applied through its P1 interpolant, so it is
affine on every triangle and continuous everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ParameterOutOfRangeError
from .fem import CellMap, Factorization, Field, FormKind, FunctionSpace, assemble_bilinear
from .mesh import ChannelGeometry, Mesh

__all__ = [
    "GeometricMap",
    "build_geometric_map",
    "AleState",
    "deformation_state",
    "HarmonicExtension",
    "harmonic_extension",
    "displacement_gradients",
]

MU_G_RANGE = (0.8, 1.0)


@dataclass(frozen=True)
class GeometricMap:
    """Piecewise-affine map from the reference channel to the one with leaflet length ``mu_g``."""

    geom: ChannelGeometry
    mu_g: float

    @property
    def is_identity(self):
        return self.mu_g == self.geom.leaflet_length

    def _y_breaks(self):
        H, ell, m = self.geom.height, self.geom.leaflet_length, self.mu_g
        return np.array([0.0, ell, H - ell, H]), np.array([0.0, m, H - m, H])

    def stretch(self, y):
        """Vertical piecewise-linear stretch used inside the leaflet strip."""
        ref, new = self._y_breaks()
        return np.interp(y, ref, new)

    def blend(self, x):
        """Weight of the stretch: 1 inside the strip, linear ramps to 0 across the transitions."""
        a, x0, x1, b = self.geom.transition_bounds()
        x = np.asarray(x, dtype=float)
        w = np.zeros_like(x)
        w[(x >= x0) & (x <= x1)] = 1.0
        if x0 > a:
            m = (x > a) & (x < x0)
            w[m] = (x[m] - a) / (x0 - a)
        if b > x1:
            m = (x > x1) & (x < b)
            w[m] = (b - x[m]) / (b - x1)
        return w

    def __call__(self, xy):
        xy = np.asarray(xy, dtype=float)
        if self.is_identity:
            return xy.copy()
        out = xy.copy()
        y = xy[..., 1]
        out[..., 1] = y + self.blend(xy[..., 0]) * (self.stretch(y) - y)
        return out

    def zone_matrices(self):
        """Constant gradients on the three zones of the leaflet strip."""
        H, ell, m = self.geom.height, self.geom.leaflet_length, self.mu_g
        leaf = np.diag([1.0, m / ell])
        gap = np.diag([1.0, (H - 2 * m) / (H - 2 * ell)])
        return {"bottom_leaflet": leaf, "gap": gap, "top_leaflet": leaf.copy()}

    def pieces(self, mesh: Mesh, cells=None):
        """Per-cell affine pieces ``(A, b)`` with ``T(x) = A x + b`` on each triangle."""
        cells = np.arange(mesh.n_triangles) if cells is None else np.asarray(cells)
        n = len(cells)
        if self.is_identity:
            return np.broadcast_to(np.eye(2), (n, 2, 2)).copy(), np.zeros((n, 2))
        tri = mesh.triangles[cells]
        p = mesh.vertices[tri]
        q = self(mesh.vertices)[tri]
        B = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        Bq = np.stack([q[:, 1] - q[:, 0], q[:, 2] - q[:, 0]], axis=2)
        A = Bq @ np.linalg.inv(B)
        b = q[:, 0] - np.einsum("eij,ej->ei", A, p[:, 0])
        return A, b

    def cell_map(self, space: FunctionSpace) -> CellMap:
        """Gradient ``G`` and determinant ``K`` on the cells of ``space``."""
        if self.is_identity:
            return CellMap.identity(space.n_cells)
        A, _ = self.pieces(space.mesh, space.cells)
        return CellMap(A)


def build_geometric_map(geom: ChannelGeometry, mu_g, valid_range=MU_G_RANGE) -> GeometricMap:
    lo, hi = valid_range
    if not lo <= mu_g <= hi:
        raise ParameterOutOfRangeError(f"mu_g={mu_g} outside [{lo}, {hi}]", mu_g=mu_g)
    geom.check()
    if not 0 < mu_g < geom.height / 2:
        raise ParameterOutOfRangeError(f"mu_g={mu_g} incompatible with channel height {geom.height}")
    return GeometricMap(geom, float(mu_g))


def displacement_gradients(space: FunctionSpace, coeffs):
    """Per-cell gradient ``(n_cells, 2, 2)`` of a P1 vector field; ``[c, k] = d u_c / d x_k``."""
    local = space.local(coeffs)
    grads = space.gradients()[:, 0]
    return np.einsum("eac,eak->eck", local, grads)


@dataclass
class AleState:
    """Deformation of the fluid mesh by ``d_f``, composed with the shape map.

    ``F = I + grad(d_f) G^-1`` and ``J = det F`` relate the parametrized
    configuration to the current one; ``total`` carries ``F G`` and ``J K``,
    the map from the reference mesh used by all pulled-back forms. Values are
    constant per cell; :meth:`at_quadrature` broadcasts them.
    """

    d_f: Field
    F: np.ndarray
    J: np.ndarray
    shape: CellMap
    total: CellMap

    def at_quadrature(self, n_q):
        n = len(self.J)
        return np.broadcast_to(self.F[:, None], (n, n_q, 2, 2)), np.broadcast_to(self.J[:, None], (n, n_q))


def deformation_state(d_f: Field, shape_map: CellMap | None = None) -> AleState:
    space = d_f.space
    shape_map = CellMap.identity(space.n_cells) if shape_map is None else shape_map
    grad = displacement_gradients(space, d_f.coefficients)
    Ftot = shape_map.F + grad
    total = CellMap(Ftot)
    F = np.einsum("eij,ejk->eik", Ftot, shape_map.Finv)
    J = total.J / shape_map.J
    return AleState(d_f, F, J, shape_map, total)


class HarmonicExtension:
    """Factorized pulled-back Laplace extension of interface data into the fluid.

    ``trace_nodes`` are the Dirichlet nodes carrying the data; ``zero_nodes``
    are held at zero (the remaining fluid boundary). Where the two overlap the
    trace wins.
    """

    def __init__(self, space: FunctionSpace, trace_nodes, zero_nodes, shape_map: CellMap | None = None):
        self.space = space
        self.trace_nodes = np.asarray(trace_nodes, dtype=np.int64)
        A = assemble_bilinear(FormKind.STIFFNESS_LAPLACE, space, cmap=shape_map)
        fixed_nodes = np.union1d(self.trace_nodes, np.asarray(zero_nodes, dtype=np.int64))
        self.fixed = space.node_dofs(fixed_nodes)
        self.trace_dofs = space.node_dofs(self.trace_nodes)
        free = np.ones(space.n_dofs, dtype=bool)
        free[self.fixed] = False
        self.free = np.flatnonzero(free)
        A = sp.csr_matrix(A)
        self._A_fD = A[self.free][:, self.fixed]
        self._lu = Factorization(A[self.free][:, self.free])
        self._pos = np.searchsorted(self.fixed, self.trace_dofs)

    def __call__(self, trace):
        """Extend nodal trace values ``(n_trace, 2)`` (or flat) to a fluid coefficient vector."""
        trace = np.asarray(trace, dtype=float).reshape(-1)
        out = np.zeros(self.space.n_dofs)
        gD = np.zeros(len(self.fixed))
        gD[self._pos] = trace
        out[self.fixed] = gD
        if np.any(gD):
            out[self.free] = self._lu.solve(-(self._A_fD @ gD))
        return out

    def many(self, traces):
        """Extend several traces at once; ``traces`` is ``(n_trace_dofs, k)``."""
        traces = np.asarray(traces, dtype=float)
        out = np.zeros((self.space.n_dofs, traces.shape[1]))
        gD = np.zeros((len(self.fixed), traces.shape[1]))
        gD[self._pos] = traces
        out[self.fixed] = gD
        out[self.free] = self._lu.solve(-(self._A_fD @ gD), check=False)
        return out


def harmonic_extension(space, trace, trace_nodes, zero_nodes, shape_map=None):
    """One-shot form of :class:`HarmonicExtension`; returns a :class:`Field`."""
    return Field(space, HarmonicExtension(space, trace_nodes, zero_nodes, shape_map)(trace))
