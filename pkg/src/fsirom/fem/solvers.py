"""Dirichlet constraints, sparse direct solves, Newton iteration, Gram matrices."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import NoConvergenceError, SingularJacobianError, SingularMatrixError
from .assembly import FormKind, assemble_bilinear
from .spaces import FunctionSpace

__all__ = [
    "apply_dirichlet",
    "solve_sparse",
    "Factorization",
    "newton_solve",
    "NewtonResult",
    "NormKind",
    "InnerProduct",
    "gram_matrix",
    "is_symmetric",
]


def is_symmetric(A, rtol=1e-12):
    A = sp.csr_matrix(A)
    if A.nnz == 0:
        return True
    scale = abs(A).max()
    diff = A - A.T
    return diff.nnz == 0 or abs(diff).max() < rtol * scale


def apply_dirichlet(A, b, dofs, values):
    """Symmetric elimination of the constrained ``dofs``.

    Constrained rows and columns become identity; the column lift moves to the
    right-hand side, so a symmetric ``A`` stays symmetric.
    """
    A = sp.csr_matrix(A, dtype=float)
    b = np.array(b, dtype=float)
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
    if len(dofs) == 0:
        return A.copy(), b
    lift = np.zeros(A.shape[1])
    lift[dofs] = values
    b = b - A @ lift
    keep = np.ones(A.shape[0])
    keep[dofs] = 0.0
    K = sp.diags(keep)
    A = (K @ A @ K).tocsr()
    diag = np.zeros(A.shape[0])
    diag[dofs] = 1.0
    A = (A + sp.diags(diag)).tocsr()
    A.eliminate_zeros()
    b[dofs] = values
    return A, b


class Factorization:
    """Reusable sparse LU factorization with a residual check."""

    def __init__(self, A):
        self.A = sp.csc_matrix(A, dtype=float)
        if self.A.shape[0] != self.A.shape[1]:
            raise ValueError(f"matrix must be square, got {self.A.shape}")
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            try:
                self._lu = spla.splu(self.A)
            except (RuntimeError, spla.MatrixRankWarning) as exc:
                raise SingularMatrixError(str(exc)) from exc
        self._norm = spla.norm(self.A, np.inf) if self.A.nnz else 0.0

    def solve(self, b, check=True):
        b = np.asarray(b, dtype=float)
        x = self._lu.solve(b)
        if check:
            if not np.all(np.isfinite(x)):
                raise SingularMatrixError("non-finite solution")
            r = np.linalg.norm(self.A @ x - b)
            bound = 1e-10 * (self._norm * np.linalg.norm(x) + np.linalg.norm(b))
            if r > bound and r > 1e-300:
                raise SingularMatrixError(f"residual {r:.3e} exceeds bound {bound:.3e}")
        return x


def solve_sparse(A, b):
    """Direct sparse solve; raises :class:`SingularMatrixError` on zero pivots."""
    return Factorization(A).solve(b)


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual_norm: float


def newton_solve(residual, jacobian, x0, tol=1e-8, max_iter=25):
    """Newton iteration to ``|r(x)| <= tol * max(1, |r(x0)|)``."""
    x = np.array(x0, dtype=float)
    r = residual(x)
    target = tol * max(1.0, np.linalg.norm(r))
    rn = np.linalg.norm(r)
    it = 0
    while rn > target:
        if it >= max_iter:
            raise NoConvergenceError(f"Newton: |r|={rn:.3e} > {target:.3e} after {it} iterations", residual=rn)
        Jm = jacobian(x)
        try:
            if sp.issparse(Jm):
                dx = Factorization(Jm).solve(r, check=False)
            else:
                dx = np.linalg.solve(np.asarray(Jm), r)
        except (SingularMatrixError, np.linalg.LinAlgError) as exc:
            raise SingularJacobianError(str(exc)) from exc
        if not np.all(np.isfinite(dx)):
            raise SingularJacobianError("non-finite Newton update")
        x = x - dx
        r = residual(x)
        rn = np.linalg.norm(r)
        it += 1
    return NewtonResult(x, it, rn)


class NormKind(str, enum.Enum):
    L2 = "L2"
    H1 = "H1"
    H1_SEMI = "H1_SEMI"


@dataclass
class InnerProduct:
    space: FunctionSpace
    kind: NormKind
    X: sp.csr_matrix

    def inner(self, u, v):
        return float(np.asarray(u) @ (self.X @ np.asarray(v)))

    def norm(self, u):
        return float(np.sqrt(max(self.inner(u, u), 0.0)))

    def norms(self, U):
        """Column norms of a dofs-by-k matrix."""
        U = np.asarray(U)
        return np.sqrt(np.maximum(np.einsum("ik,ik->k", U, self.X @ U), 0.0))


def gram_matrix(space: FunctionSpace, kind) -> InnerProduct:
    kind = NormKind(kind)
    if kind is NormKind.L2:
        X = assemble_bilinear(FormKind.MASS, space)
    elif kind is NormKind.H1_SEMI:
        X = assemble_bilinear(FormKind.STIFFNESS_LAPLACE, space)
    else:
        X = assemble_bilinear(FormKind.MASS, space) + assemble_bilinear(FormKind.STIFFNESS_LAPLACE, space)
    return InnerProduct(space, kind, sp.csr_matrix(X))
