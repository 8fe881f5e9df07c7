"""Sparse assembly of the volume and interface forms.

All geometric factors are per cell: the ALE displacement is P1 and the
shape map is piecewise affine, so the total deformation gradient is constant
on every triangle. A :class:`CellMap` carries that gradient and its
determinant; forms are written in the mapped configuration and pulled back
with it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import NonpositiveJacobianError, SpaceMismatchError
from .quadrature import edge_rule
from .spaces import FunctionSpace, p1_values, p2_values

__all__ = [
    "FormKind",
    "CellMap",
    "InterfaceData",
    "assemble_bilinear",
    "assemble_local",
    "interface_data",
]


class FormKind(str, enum.Enum):
    MASS = "MASS"
    STIFFNESS_LAPLACE = "STIFFNESS_LAPLACE"
    FLUID_VISCOUS = "FLUID_VISCOUS"
    FLUID_CONVECTION = "FLUID_CONVECTION"
    PRESSURE_LAPLACE = "PRESSURE_LAPLACE"
    PRESSURE_GRAD = "PRESSURE_GRAD"
    DIVERGENCE = "DIVERGENCE"
    SOLID_ELASTICITY = "SOLID_ELASTICITY"
    INTERFACE_MASS = "INTERFACE_MASS"
    INTERFACE_NORMAL_FLUX = "INTERFACE_NORMAL_FLUX"
    INTERFACE_TRACTION = "INTERFACE_TRACTION"


@dataclass
class CellMap:
    """Per-cell deformation gradient ``F`` (n, 2, 2) and determinant ``J``."""

    F: np.ndarray
    J: np.ndarray = None

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float)
        if self.J is None:
            self.J = self.F[:, 0, 0] * self.F[:, 1, 1] - self.F[:, 0, 1] * self.F[:, 1, 0]
        bad = np.flatnonzero(~(self.J > 0))
        if len(bad):
            raise NonpositiveJacobianError(
                f"J <= 0 on {len(bad)} cells (first cell {bad[0]}, J={self.J[bad[0]]:.3e})", cell=int(bad[0])
            )
        self.Finv = np.linalg.inv(self.F)

    @classmethod
    def identity(cls, n):
        return cls(np.broadcast_to(np.eye(2), (n, 2, 2)).copy(), np.ones(n))

    def __len__(self):
        return len(self.J)


def assemble_local(local, rows, cols, shape):
    """Scatter element matrices ``(n_cells, n_r, n_c)`` into a CSR matrix."""
    n, nr, nc = local.shape
    I = np.broadcast_to(rows[:, :, None], (n, nr, nc)).ravel()
    Jc = np.broadcast_to(cols[:, None, :], (n, nr, nc)).ravel()
    A = sp.coo_matrix((local.ravel(), (I, Jc)), shape=shape).tocsr()
    A.sum_duplicates()
    return A


def _weights(space, cmap):
    """Quadrature weights ``(n_cells, n_q)`` including area and Jacobian."""
    J = np.ones(space.n_cells) if cmap is None else cmap.J
    return (space.area * J)[:, None] * space.qweights[None, :]


def _finv(cmap):
    return None if cmap is None else cmap.Finv


def _vectorize(local_scalar):
    """Block-diagonal vector element matrix from a scalar one (interleaved dofs)."""
    n, a, b = local_scalar.shape
    out = np.zeros((n, a, 2, b, 2))
    out[:, :, 0, :, 0] = local_scalar
    out[:, :, 1, :, 1] = local_scalar
    return out.reshape(n, 2 * a, 2 * b)


def _mass(space, cmap):
    w = _weights(space, cmap)
    loc = np.einsum("eq,qa,qb->eab", w, space.basis, space.basis, optimize=True)
    return _vectorize(loc) if space.n_components == 2 else loc


def _laplace(space, cmap):
    w = _weights(space, cmap)
    g = space.gradients(_finv(cmap))
    loc = np.einsum("eq,eqak,eqbk->eab", w, g, g, optimize=True)
    return _vectorize(loc) if space.n_components == 2 else loc


def _viscous(space, cmap):
    """Local matrix of ``int J (L + L^T) : L_v`` with ``L`` the mapped velocity gradient."""
    w = _weights(space, cmap)
    g = space.gradients(_finv(cmap))
    n, _, na, _ = g.shape
    gg = np.einsum("eq,eqak,eqbk->eab", w, g, g, optimize=True)
    loc = np.zeros((n, na, 2, na, 2))
    loc[:, :, 0, :, 0] = gg
    loc[:, :, 1, :, 1] = gg
    loc += np.einsum("eq,eqbc,eqad->eacbd", w, g, g, optimize=True)
    return loc.reshape(n, 2 * na, 2 * na)


def _convection(space, cmap, advection):
    """Local matrix of ``int J (grad u F^-1 a) . v`` for a given advecting field ``a``."""
    w = _weights(space, cmap)
    g = space.gradients(_finv(cmap))
    ga = np.einsum("eqbk,eqk->eqb", g, advection)
    s = np.einsum("eq,qa,eqb->eab", w, space.basis, ga, optimize=True)
    return _vectorize(s)


def _pressure_grad(vspace, qspace, cmap):
    """Rows: vector test space; columns: scalar trial space; ``int J F^-T grad p . v``."""
    w = _weights(vspace, cmap)
    h = qspace.gradients(_finv(cmap))
    loc = np.einsum("eq,qa,eqbc->eacb", w, vspace.basis, h, optimize=True)
    n, na = loc.shape[:2]
    return loc.reshape(n, 2 * na, -1)


def _divergence(qspace, vspace, cmap):
    """Rows: scalar test; columns: vector trial; ``int J tr(grad u F^-1) q``."""
    w = _weights(vspace, cmap)
    g = vspace.gradients(_finv(cmap))
    loc = np.einsum("eq,qa,eqbd->eabd", w, qspace.basis, g, optimize=True)
    n, na, nb = loc.shape[:3]
    return loc.reshape(n, na, 2 * nb)


def _elasticity(space, cmap, lam, mu):
    w = _weights(space, cmap)
    g = space.gradients(_finv(cmap))
    n, _, na, _ = g.shape
    gg = np.einsum("eq,eqak,eqbk->eab", w, g, g, optimize=True)
    loc = lam * np.einsum("eq,eqac,eqbd->eacbd", w, g, g, optimize=True)
    loc += mu * np.einsum("eq,eqbc,eqad->eacbd", w, g, g, optimize=True)
    loc[:, :, 0, :, 0] += mu * gg
    loc[:, :, 1, :, 1] += mu * gg
    return loc.reshape(n, 2 * na, 2 * na)


@dataclass
class InterfaceData:
    """Geometry of the FSI edges as seen from the fluid side.

    ``cells`` index the fluid spaces' cell arrays; ``vertices`` are global
    vertex ids (n_edges, 2); ``normals`` point out of the fluid; ``xi`` are
    the reference coordinates of the edge quadrature points inside the fluid
    cell, ``s`` the edge parameters and ``sw`` their weights.
    """

    vertices: np.ndarray
    cells: np.ndarray
    normals: np.ndarray
    lengths: np.ndarray
    xi: np.ndarray
    s: np.ndarray
    sw: np.ndarray

    @property
    def n_edges(self):
        return len(self.cells)

    def nanson(self, cmap=None):
        """Mapped area-weighted normal ``J F^-T n`` per edge, shape (n_edges, 2)."""
        if cmap is None:
            return self.normals.copy()
        Finv = cmap.Finv[self.cells]
        return cmap.J[self.cells, None] * np.einsum("eji,ej->ei", Finv, self.normals)


def interface_data(space: FunctionSpace, facets) -> InterfaceData:
    """Collect FSI edge data for the fluid ``space`` from :func:`interface_facets` output."""
    mesh = space.mesh
    cell_index = np.full(mesh.n_triangles, -1, dtype=np.int64)
    cell_index[space.cells] = np.arange(space.n_cells)
    s, sw = edge_rule()
    verts, cells, normals, lengths, xis = [], [], [], [], []
    for (a, b), n, tf in facets:
        e = cell_index[tf]
        if e < 0:
            raise SpaceMismatchError("interface facet not adjacent to the space's region")
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        pts = pa[None, :] + s[:, None] * (pb - pa)[None, :]
        x0 = mesh.vertices[mesh.triangles[tf, 0]]
        xis.append((pts - x0) @ space.Binv[e].T)
        verts.append((a, b))
        cells.append(e)
        normals.append(n)
        lengths.append(np.linalg.norm(pb - pa))
    return InterfaceData(
        np.array(verts, dtype=np.int64).reshape(-1, 2),
        np.array(cells, dtype=np.int64),
        np.array(normals).reshape(-1, 2),
        np.array(lengths),
        np.array(xis).reshape(-1, len(s), 2),
        s,
        sw,
    )


def _edge_p1(s):
    return np.column_stack([1.0 - s, s])


def _interface_mass(qspace, idata):
    psi = _edge_p1(idata.s)
    loc = np.einsum("q,qa,qb->ab", idata.sw, psi, psi, optimize=True)[None] * idata.lengths[:, None, None]
    nodes = qspace.vertex_to_node[idata.vertices]
    return assemble_local(loc, nodes, nodes, (qspace.n_dofs, qspace.n_dofs))


def _interface_normal_flux(qspace, sspace, idata, cmap):
    """``B[q_a, (e_b, d)] = int_Gamma psi_a psi_b (J F^-T n)_d ds``."""
    psi = _edge_p1(idata.s)
    nu = idata.nanson(cmap)
    mm = np.einsum("q,qa,qb->ab", idata.sw, psi, psi, optimize=True)[None] * idata.lengths[:, None, None]
    loc = np.einsum("eab,ed->eabd", mm, nu).reshape(idata.n_edges, 2, 4)
    rows = qspace.vertex_to_node[idata.vertices]
    snodes = sspace.vertex_to_node[idata.vertices]
    cols = (2 * snodes[:, :, None] + np.arange(2)).reshape(-1, 4)
    if (rows < 0).any() or (snodes < 0).any():
        raise SpaceMismatchError("interface vertices missing from a space")
    return assemble_local(loc, rows, cols, (qspace.n_dofs, sspace.n_dofs))


def _interface_values(vspace, idata):
    """P2 values and reference-cell gradients at edge quadrature points."""
    pts = idata.xi.reshape(-1, 2)
    fn = p2_values if vspace.family.degree == 2 else p1_values
    val, dval = fn(pts)
    nq = idata.xi.shape[1]
    return val.reshape(idata.n_edges, nq, -1), dval.reshape(idata.n_edges, nq, -1, 2)


def _interface_traction(sspace, vspace, idata, cmap):
    """Viscous traction ``-int_Gamma ((L + L^T) J F^-T n) . e ds`` (unit viscosity).

    Rows: solid vector test space; columns: fluid velocity dofs.
    """
    _, dval = _interface_values(vspace, idata)
    cells = idata.cells
    M = vspace.Binv[cells]
    if cmap is not None:
        M = np.einsum("eij,ejk->eik", M, cmap.Finv[cells])
    g = np.einsum("ejk,eqaj->eqak", M, dval)
    nu = idata.nanson(cmap)
    psi = _edge_p1(idata.s)
    w = idata.lengths[:, None] * idata.sw[None, :]
    n, _, nb, _ = g.shape
    gn = np.einsum("eqbk,ek->eqb", g, nu)
    loc = np.zeros((n, 2, 2, nb, 2))
    diag = -np.einsum("eq,qa,eqb->eab", w, psi, gn, optimize=True)
    loc[:, :, 0, :, 0] = diag
    loc[:, :, 1, :, 1] = diag
    loc -= np.einsum("eq,qa,eqbc,ed->eacbd", w, psi, g, nu, optimize=True)
    loc = loc.reshape(n, 4, 2 * nb)
    snodes = sspace.vertex_to_node[idata.vertices]
    rows = (2 * snodes[:, :, None] + np.arange(2)).reshape(-1, 4)
    cols = vspace.dof_map[cells]
    return assemble_local(loc, rows, cols, (sspace.n_dofs, vspace.n_dofs))


def assemble_bilinear(kind, test, trial=None, cmap=None, *, advection=None, lam=None, mu=None, interface=None):
    """Assemble a bilinear form into a CSR matrix (rows: ``test``, columns: ``trial``).

    ``cmap`` supplies the per-cell total deformation gradient (ALE map composed
    with the shape map); ``None`` means the undeformed mesh.
    """
    kind = FormKind(kind)
    trial = test if trial is None else trial
    if kind in (FormKind.INTERFACE_MASS, FormKind.INTERFACE_NORMAL_FLUX, FormKind.INTERFACE_TRACTION):
        if interface is None:
            raise ValueError(f"{kind.value} needs interface data")
        if kind is FormKind.INTERFACE_MASS:
            return _interface_mass(test, interface)
        if kind is FormKind.INTERFACE_NORMAL_FLUX:
            return _interface_normal_flux(test, trial, interface, cmap)
        return _interface_traction(test, trial, interface, cmap)

    test.require_same_cells(trial)
    if cmap is not None and len(cmap) != test.n_cells:
        raise SpaceMismatchError(f"cell map has {len(cmap)} cells, space has {test.n_cells}")
    if kind is FormKind.MASS:
        loc = _mass(test, cmap)
    elif kind in (FormKind.STIFFNESS_LAPLACE, FormKind.PRESSURE_LAPLACE):
        if kind is FormKind.PRESSURE_LAPLACE and test.family.value != "P1_SCALAR":
            raise SpaceMismatchError("PRESSURE_LAPLACE is defined on the P1 pressure space")
        loc = _laplace(test, cmap)
    elif kind is FormKind.FLUID_VISCOUS:
        loc = _viscous(test, cmap)
    elif kind is FormKind.FLUID_CONVECTION:
        loc = _convection(test, cmap, advection)
    elif kind is FormKind.PRESSURE_GRAD:
        loc = _pressure_grad(test, trial, cmap)
    elif kind is FormKind.DIVERGENCE:
        loc = _divergence(test, trial, cmap)
    elif kind is FormKind.SOLID_ELASTICITY:
        loc = _elasticity(test, cmap, lam, mu)
    else:  # pragma: no cover
        raise ValueError(kind)
    return assemble_local(loc, test.dof_map, trial.dof_map, (test.n_dofs, trial.n_dofs))
