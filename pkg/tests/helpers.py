"""Small numerical utilities shared by the test modules."""

import numpy as np

from fsirom.fem import Factorization, FormKind, FunctionSpace, apply_dirichlet, assemble_bilinear
from fsirom.mesh import BoundaryTag, rectangle_mesh

WALLS = (BoundaryTag.INLET, BoundaryTag.OUTLET, BoundaryTag.TOP, BoundaryTag.BOTTOM)


def exact_poisson(xy):
    return np.sin(np.pi * xy[..., 0]) * np.sin(np.pi * xy[..., 1])


def solve_poisson(n, family):
    """Solve -lap u = 2 pi^2 sin(pi x) sin(pi y) on the unit square; return the L2 error."""
    mesh = rectangle_mesh(n, n)
    space = FunctionSpace(mesh, family)
    A = assemble_bilinear(FormKind.STIFFNESS_LAPLACE, space)
    xq = space.quadrature_points()
    w = space.area[:, None] * space.qweights[None, :]
    f = 2 * np.pi**2 * exact_poisson(xq)
    local = np.einsum("eq,qa,eq->ea", w, space.basis, f)
    b = np.bincount(space.cell_nodes.ravel(), local.ravel(), minlength=space.n_dofs)
    dofs = space.boundary_dofs(*WALLS)
    A, b = apply_dirichlet(A, b, dofs, 0.0)
    u = Factorization(A).solve(b)
    err = space.evaluate(u) - exact_poisson(xq)
    return float(np.sqrt(np.sum(w * err**2)))


def observed_rates(ns, family):
    errs = np.array([solve_poisson(n, family) for n in ns])
    return errs, np.log2(errs[:-1] / errs[1:])


def inlet_flux(disc, u):
    """``int_{inlet} u . n ds`` with the outward normal ``(-1, 0)``; Simpson is exact for P2."""
    V, mesh = disc.V, disc.mesh
    edges, _, _ = mesh.edge_table()
    lookup = {(int(a), int(b)): e for e, (a, b) in enumerate(edges)}
    U = np.asarray(u).reshape(-1, 2)
    total = 0.0
    for a, b in mesh.tagged_edges(BoundaryTag.INLET):
        length = np.linalg.norm(mesh.vertices[b] - mesh.vertices[a])
        na, nb = V.vertex_to_node[[a, b]]
        nm = V.edge_to_node[lookup[(int(a), int(b))]]
        ux = (U[na, 0] + 4 * U[nm, 0] + U[nb, 0]) / 6
        total += -ux * length
    return total


def vertex_at(mesh, x, y):
    d = np.hypot(mesh.vertices[:, 0] - x, mesh.vertices[:, 1] - y)
    k = int(np.argmin(d))
    assert d[k] < 1e-12, (x, y)
    return k
