"""Proper orthogonal decomposition of snapshot sets and the reduced spaces.

Compression uses the method of snapshots in a problem-specific inner
product ``X``: the correlation matrix ``S^T X S`` is diagonalized and modes
are recovered as combinations of snapshots, then re-orthonormalized in
``X``. Eigenvalues are those of the unscaled correlation matrix, so the
projection error of the snapshot set equals the discarded eigenvalue sum.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DimensionMismatchError, FileFormatError, RankDeficientError, ZeroSnapshotsError
from .fem import InnerProduct
from .offline import _check_new, read_matrix, write_matrix

__all__ = [
    "PodBasis",
    "pod_compress",
    "nested_pod",
    "POD",
    "NestedPOD",
    "extend_solid_modes",
    "energy_report",
    "ReducedSpaces",
    "build_reduced_spaces",
    "write_basis",
    "read_basis",
    "write_energy_csv",
    "principal_angles",
]

RANK_TOL = 1e-12
STAGE1_TOL = 1e-9


def _gram(X, n):
    if X is None:
        return sp.identity(n, format="csr")
    if isinstance(X, InnerProduct):
        X = X.X
    if X.shape != (n, n):
        raise DimensionMismatchError(f"inner product is {X.shape}, snapshots have {n} rows")
    return X


@dataclass
class PodBasis:
    """``X``-orthonormal modes (columns) with the full descending eigenvalue list."""

    modes: np.ndarray
    eigenvalues: np.ndarray
    X: object = field(repr=False, default=None)
    rank: int = 0

    @property
    def n_modes(self):
        return self.modes.shape[1]

    def energy_fractions(self):
        lam = self.eigenvalues
        total = lam.sum()
        return np.cumsum(lam) / total if total > 0 else np.ones_like(lam)

    def truncate(self, n):
        if n > self.n_modes:
            raise RankDeficientError(f"requested {n} modes, basis has {self.n_modes}", requested=n, available=self.n_modes)
        return PodBasis(self.modes[:, :n].copy(), self.eigenvalues, self.X, self.rank)

    def coefficients(self, S):
        X = _gram(self.X, self.modes.shape[0])
        return self.modes.T @ (X @ np.asarray(S))

    def project(self, S):
        return self.modes @ self.coefficients(S)


def _orthonormalize(Phi, X):
    """Two passes of Cholesky QR in the ``X`` inner product."""
    for _ in range(2):
        Gm = Phi.T @ (X @ Phi)
        Gm = 0.5 * (Gm + Gm.T)
        L = np.linalg.cholesky(Gm)
        Phi = sla.solve_triangular(L, Phi.T, lower=True).T
    return Phi


def pod_compress(S, X=None, n_modes=None, energy=None, rank_tol=RANK_TOL) -> PodBasis:
    """POD of the columns of ``S``.

    Parameters
    ----------
    S : ndarray (n_dofs, n_snapshots)
    X : InnerProduct or sparse matrix, optional
        Gram matrix of the inner product; identity when omitted.
    n_modes : int, optional
        Number of modes; defaults to the numerical rank.
    energy : float, optional
        Smallest ``N`` whose retained energy fraction reaches ``energy``.
    rank_tol : float
        Eigenvalues below ``rank_tol * lambda_1`` count as zero.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[1] == 0:
        raise ZeroSnapshotsError("snapshot matrix has no columns")
    Xm = _gram(X, S.shape[0])
    XS = Xm @ S
    C = S.T @ XS
    C = 0.5 * (C + C.T)
    lam, V = np.linalg.eigh(C)
    order = np.argsort(lam)[::-1]
    lam = np.maximum(lam[order], 0.0)
    V = V[:, order]
    if lam[0] <= 0.0 or not np.isfinite(lam[0]):
        raise ZeroSnapshotsError("all snapshots are zero in the chosen inner product")
    rank = int(np.count_nonzero(lam > rank_tol * lam[0]))
    if n_modes is None and energy is not None:
        frac = np.cumsum(lam) / lam.sum()
        n_modes = int(np.searchsorted(frac, energy * (1 - 1e-14)) + 1)
        n_modes = min(n_modes, rank)
    n = rank if n_modes is None else int(n_modes)
    if n < 0:
        raise ValueError("n_modes must be nonnegative")
    if n > rank:
        raise RankDeficientError(f"requested {n} modes but numerical rank is {rank}", requested=n, rank=rank)
    Phi = S @ (V[:, :n] / np.sqrt(lam[:n]))
    if n:
        Phi = _orthonormalize(Phi, Xm)
    return PodBasis(Phi, lam, X, rank)


def nested_pod(sets, X=None, n_modes=None, energy=None, stage1_tol=STAGE1_TOL, rank_tol=RANK_TOL) -> PodBasis:
    """Two-stage POD over several parameter points.

    Each set is compressed on its own keeping eigenvalues above
    ``stage1_tol * lambda_1``; the modes weighted by ``sqrt(lambda)`` are then
    compressed together. Sets that vanish identically are skipped.
    """
    cols = []
    for S in sets:
        try:
            b = pod_compress(S, X, rank_tol=rank_tol)
        except ZeroSnapshotsError:
            continue
        keep = int(np.count_nonzero(b.eigenvalues[: b.rank] > stage1_tol * b.eigenvalues[0]))
        cols.append(b.modes[:, :keep] * np.sqrt(b.eigenvalues[:keep]))
    if not cols:
        raise ZeroSnapshotsError("every parameter set is zero")
    return pod_compress(np.hstack(cols), X, n_modes=n_modes, energy=energy, rank_tol=rank_tol)


def principal_angles(A, B, X=None):
    """Principal angles (radians, ascending) between the column spans of ``A`` and ``B`` in ``X``.

    Computed from the sines, which stay accurate for tiny angles.
    """
    Xm = _gram(X, A.shape[0])
    Qa = _orthonormalize(np.asarray(A, float), Xm)
    Qb = _orthonormalize(np.asarray(B, float), Xm)
    if Qb.shape[1] > Qa.shape[1]:
        Qa, Qb = Qb, Qa
    R = Qb - Qa @ (Qa.T @ (Xm @ Qb))
    sin2 = np.linalg.eigvalsh(0.5 * (R.T @ (Xm @ R) + (R.T @ (Xm @ R)).T))
    return np.sort(np.arcsin(np.sqrt(np.clip(sin2, 0.0, 1.0))))


class POD(BaseEstimator, TransformerMixin):
    """Transformer form of :func:`pod_compress`; samples are rows.

    ``transform`` returns ``X``-inner-product coefficients and
    ``inverse_transform`` reconstructs.
    """

    def __init__(self, n_components=None, energy=None, inner_product=None, rank_tol=RANK_TOL):
        self.n_components = n_components
        self.energy = energy
        self.inner_product = inner_product
        self.rank_tol = rank_tol

    def _make(self, S):
        return pod_compress(S, self.inner_product, self.n_components, self.energy, self.rank_tol)

    def fit(self, X, y=None):
        X = check_array(X)
        self.basis_ = self._make(X.T)
        self._set_attrs()
        return self

    def _set_attrs(self):
        b = self.basis_
        self.components_ = b.modes.T
        self.eigenvalues_ = b.eigenvalues
        self.n_components_ = b.n_modes
        self.rank_ = b.rank
        self.n_features_in_ = b.modes.shape[0]
        fr = b.energy_fractions()
        self.retained_energy_ = float(fr[b.n_modes - 1]) if b.n_modes else 0.0

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatchError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.basis_.coefficients(X.T).T

    def inverse_transform(self, coef):
        check_is_fitted(self, "basis_")
        return np.asarray(coef) @ self.components_


class NestedPOD(POD):
    """Two-stage POD; ``groups`` labels the parameter point of each sample row."""

    def __init__(self, n_components=None, energy=None, inner_product=None, rank_tol=RANK_TOL, stage1_tol=STAGE1_TOL):
        super().__init__(n_components, energy, inner_product, rank_tol)
        self.stage1_tol = stage1_tol

    def fit(self, X, y=None, groups=None):
        X = check_array(X)
        groups = np.zeros(len(X), dtype=int) if groups is None else np.asarray(groups)
        if len(groups) != len(X):
            raise DimensionMismatchError("groups must label every sample")
        sets = [X[groups == g].T for g in dict.fromkeys(groups.tolist())]
        self.basis_ = nested_pod(sets, self.inner_product, self.n_components, self.energy, self.stage1_tol, self.rank_tol)
        self._set_attrs()
        return self


def extend_solid_modes(Phi_d, disc):
    """Harmonic extension of each solid mode's interface trace into the fluid."""
    Phi_d = np.asarray(Phi_d)
    if Phi_d.shape[1] == 0:
        return np.zeros((disc.Ef.n_dofs, 0))
    return disc.extension.many(Phi_d[disc.es_interface_dofs])


def energy_report(basis: PodBasis):
    """Rows ``(k, lambda_k, cumulative fraction)`` for k = 1..len(eigenvalues)."""
    fr = basis.energy_fractions()
    return [(k + 1, float(l), float(f)) for k, (l, f) in enumerate(zip(basis.eigenvalues, fr))]


def write_energy_csv(path, basis: PodBasis, overwrite=False):
    path = _check_new(path, overwrite)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "eigenvalue", "cumulative_energy"])
        for k, lam, f in energy_report(basis):
            w.writerow([k, repr(lam), repr(f)])
    return path


BASIS_MAGIC = b"FSIBASE1"


def write_basis(path, basis: PodBasis, dt=np.nan, mu_g=np.nan, mu_s=np.nan, overwrite=False):
    """FSIBASE1 file: snapshot-file header and payload, then all eigenvalues."""
    return write_matrix(path, BASIS_MAGIC, basis.modes, dt, mu_g, mu_s, extra=basis.eigenvalues, overwrite=overwrite)


def read_basis(path, X=None) -> PodBasis:
    modes, _, _, _, lam = read_matrix(path, BASIS_MAGIC)
    if len(lam) < modes.shape[1]:
        raise FileFormatError(f"{path}: {len(lam)} eigenvalues for {modes.shape[1]} modes")
    rank = int(np.count_nonzero(lam > RANK_TOL * lam[0])) if len(lam) and lam[0] > 0 else 0
    return PodBasis(modes, lam, X, rank)


@dataclass
class ReducedSpaces:
    """Bases for ``z``, ``p0``, ``d_s`` and the extended fluid displacement."""

    z: PodBasis
    p: PodBasis
    d: PodBasis
    Phi_df: np.ndarray

    @property
    def sizes(self):
        return self.z.n_modes, self.p.n_modes, self.d.n_modes

    def truncate(self, n_z=None, n_p=None, n_d=None):
        n_z = self.z.n_modes if n_z is None else n_z
        n_p = self.p.n_modes if n_p is None else n_p
        n_d = self.d.n_modes if n_d is None else n_d
        d = self.d.truncate(n_d)
        return ReducedSpaces(self.z.truncate(n_z), self.p.truncate(n_p), d, self.Phi_df[:, :n_d].copy())


def build_reduced_spaces(snapshot_sets, disc, n_z=None, n_p=None, n_d=None) -> ReducedSpaces:
    """POD (nested when there are several sets) of each unknown plus the extended solid modes."""
    sets = list(snapshot_sets)
    if not sets:
        raise ZeroSnapshotsError("no snapshot sets")

    def compress(mats, X, n):
        if len(mats) == 1:
            return pod_compress(mats[0], X, n_modes=n)
        return nested_pod(mats, X, n_modes=n)

    z = compress([s.S_z for s in sets], disc.X_u, n_z)
    p = compress([s.S_p for s in sets], disc.X_p, n_p)
    d = compress([s.S_d for s in sets], disc.X_d, n_d)
    return ReducedSpaces(z, p, d, extend_solid_modes(d.modes, disc))
