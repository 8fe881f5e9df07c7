"""Full-order semi-implicit partitioned FSI solver and snapshot collection.

One time step does, in order:

1. extend the solid displacement of the previous step harmonically into the
   fluid (mesh extrapolation, explicit);
2. solve the nonlinear momentum equation by Newton with the previous
   pressure gradient and the mesh velocity imposed on the interface;
3. iterate a Robin-coupled pressure Poisson problem and the linear elastic
   solid until both increments drop below the tolerance.

The homogenized unknowns ``z = u - D_t d_f`` and ``p0 = p - lifting`` and the
solid displacement are stored as snapshots.
"""

from __future__ import annotations

import csv
import logging
import math
import struct
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .ale import GeometricMap, HarmonicExtension, deformation_state
from .errors import (
    FileFormatError,
    FsiError,
    MaxSubiterExceededError,
    OutputExistsError,
    TimeStepError,
)
from .fem import (
    CellMap,
    Factorization,
    Family,
    Field,
    FormKind,
    FunctionSpace,
    NormKind,
    assemble_bilinear,
    gram_matrix,
    interface_data,
    newton_solve,
)
from .mesh import BoundaryTag, Mesh, Region, interface_facets

__all__ = [
    "FsiConfig",
    "robin_coefficient",
    "inlet_pressure",
    "FsiDiscretization",
    "TimeState",
    "StepOperators",
    "FluidStepForm",
    "ImplicitResult",
    "SnapshotSet",
    "Trajectory",
    "StepStats",
    "OfflineResult",
    "lifting_field",
    "step_mesh",
    "step_fluid_explicit",
    "implicit_loop",
    "relative_increment",
    "time_derivative",
    "second_time_derivative",
    "run_offline",
    "write_snapshots",
    "read_snapshots",
    "write_stats",
    "read_stats",
]

logger = logging.getLogger(__name__)


@dataclass
class FsiConfig:
    """Physical constants (CGS units), time grid and solver settings."""

    rho_f: float = 1.0
    mu_f: float = 0.035
    rho_s: float = 1.1
    mu_s: float = 1.0e5
    lambda_s: float = 8.0e5
    dt: float = 1.0e-4
    n_steps: int = 500
    tol: float = 1.0e-6
    max_subiter: int = 50
    t_in: float = 0.1
    inlet_amplitude: float = 5.0
    inlet_switch: float = 0.025
    mu_g: float = 1.0
    newton_tol: float = 1.0e-8
    newton_max_iter: int = 25

    def check(self):
        for name in ("mu_f", "rho_s", "mu_s", "lambda_s", "dt", "t_in", "mu_g", "newton_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.rho_f < 0 or self.inlet_amplitude < 0 or self.inlet_switch < 0:
            raise ValueError("rho_f, inlet_amplitude and inlet_switch must be nonnegative")
        if not 0 < self.tol < 1:
            raise ValueError(f"tol must lie in (0, 1), got {self.tol}")
        if self.n_steps < 0 or self.max_subiter < 1 or self.newton_max_iter < 1:
            raise ValueError("n_steps >= 0, max_subiter >= 1 and newton_max_iter >= 1 required")
        return self

    def replace(self, **changes):
        return replace(self, **changes)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def robin_coefficient(cfg: FsiConfig) -> float:
    """``rho_f / (z_p dt)`` with the solid impedance ``z_p = rho_s c_p``."""
    c_p = math.sqrt((cfg.lambda_s + 2.0 * cfg.mu_s) / cfg.rho_s)
    return cfg.rho_f / (cfg.rho_s * c_p * cfg.dt)


def time_derivative(f_new, f_old, dt):
    """BDF1 difference ``D_t f = (f_new - f_old) / dt``."""
    return (np.asarray(f_new) - np.asarray(f_old)) / dt


def second_time_derivative(f_new, f_old, f_older, dt):
    """``D_tt f``, the composition of two BDF1 differences."""
    return time_derivative(time_derivative(f_new, f_old, dt), time_derivative(f_old, f_older, dt), dt)


def inlet_pressure(t, cfg: FsiConfig):
    """Smooth ramp ``A - A cos(2 pi t / T_in)`` up to the switch time, constant ``A`` after."""
    t = np.asarray(t, dtype=float)
    a = cfg.inlet_amplitude
    out = np.where(t <= cfg.inlet_switch, a - a * np.cos(2 * np.pi * t / cfg.t_in), a)
    return float(out) if out.ndim == 0 else out


class FsiDiscretization:
    """Spaces, constraint sets, and time-independent operators of one problem.

    Velocity is P2 and pressure P1 on the fluid; both displacements are P1.
    ``shape_map`` is the geometric parametrization (``None`` or identity
    gives the reference channel).
    """

    def __init__(self, mesh: Mesh, cfg: FsiConfig, shape_map: GeometricMap | None = None):
        self.mesh = mesh
        self.cfg = cfg.check()
        self.shape_map = shape_map
        self.V = FunctionSpace(mesh, Family.P2_VECTOR, Region.FLUID)
        self.Q = FunctionSpace(mesh, Family.P1_SCALAR, Region.FLUID)
        self.Ef = FunctionSpace(mesh, Family.P1_VECTOR, Region.FLUID)
        self.Es = FunctionSpace(mesh, Family.P1_VECTOR, Region.SOLID)
        V, Q, Ef, Es = self.V, self.Q, self.Ef, self.Es

        if shape_map is None:
            self.G_f = CellMap.identity(V.n_cells)
            self.G_s = CellMap.identity(Es.n_cells)
        else:
            self.G_f = shape_map.cell_map(V)
            self.G_s = shape_map.cell_map(Es)

        self.interface = interface_data(V, interface_facets(mesh))
        self.alpha = robin_coefficient(cfg)

        # velocity: Dirichlet on walls and interface, natural on inlet/outlet
        self.v_wall_dofs = V.boundary_dofs(BoundaryTag.TOP, BoundaryTag.BOTTOM)
        self.v_interface_dofs = V.boundary_dofs(BoundaryTag.FSI_INTERFACE)
        self.v_dirichlet = np.union1d(self.v_wall_dofs, self.v_interface_dofs)
        free = np.ones(V.n_dofs, dtype=bool)
        free[self.v_dirichlet] = False
        self.v_free = np.flatnonzero(free)

        # pressure: Dirichlet on inlet and outlet
        self.q_inlet = Q.node_set(tags=[BoundaryTag.INLET])
        self.q_outlet = Q.node_set(tags=[BoundaryTag.OUTLET])
        self.q_dirichlet = np.union1d(self.q_inlet, self.q_outlet)
        free = np.ones(Q.n_dofs, dtype=bool)
        free[self.q_dirichlet] = False
        self.q_free = np.flatnonzero(free)

        # displacements: interface node pairs in matching order
        es_if = Es.node_set(tags=[BoundaryTag.FSI_INTERFACE])
        self.es_interface_nodes = es_if
        self.ef_interface_nodes = Ef.vertex_to_node[Es.vertices[es_if]]
        self.es_interface_dofs = Es.node_dofs(es_if)
        self.ef_interface_dofs = Ef.node_dofs(self.ef_interface_nodes)
        self.ef_zero_nodes = Ef.node_set(
            tags=[BoundaryTag.INLET, BoundaryTag.OUTLET, BoundaryTag.TOP, BoundaryTag.BOTTOM]
        )
        self.es_clamp_dofs = Es.boundary_dofs(BoundaryTag.SOLID_CLAMP)
        free = np.ones(Es.n_dofs, dtype=bool)
        free[self.es_clamp_dofs] = False
        self.es_free = np.flatnonzero(free)

        self.P = self._p1_to_p2()
        self.extension = HarmonicExtension(Ef, self.ef_interface_nodes, self.ef_zero_nodes, self.G_f)

        self.X_u = gram_matrix(V, NormKind.H1)
        self.X_p = gram_matrix(Q, NormKind.L2)
        self.X_d = gram_matrix(Es, NormKind.H1)
        self.X_d_semi = gram_matrix(Es, NormKind.H1_SEMI)

        self.M_gamma = assemble_bilinear(FormKind.INTERFACE_MASS, Q, interface=self.interface)
        self.M_s = assemble_bilinear(FormKind.MASS, Es, cmap=self.G_s)
        self.K_s = assemble_bilinear(
            FormKind.SOLID_ELASTICITY, Es, cmap=self.G_s, lam=cfg.lambda_s, mu=cfg.mu_s
        )
        S = sp.csr_matrix(cfg.rho_s / cfg.dt**2 * self.M_s + self.K_s)
        self.solid_matrix = S
        self._solid_lu = Factorization(S[self.es_free][:, self.es_free])

        self.phi = lifting_field(self)

    def _p1_to_p2(self):
        """Interpolation of P1 vector fields into the P2 velocity space (exact embedding)."""
        V, Ef = self.V, self.Ef
        nv = len(V.vertices)
        rows, cols, vals = [np.arange(nv)], [Ef.vertex_to_node[V.vertices]], [np.ones(nv)]
        if V.edges is not None:
            ne = len(V.edges)
            en = nv + np.arange(ne)
            for k in range(2):
                rows.append(en)
                cols.append(Ef.vertex_to_node[V.edges[:, k]])
                vals.append(np.full(ne, 0.5))
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
        R = np.concatenate([2 * r, 2 * r + 1])
        C = np.concatenate([2 * c, 2 * c + 1])
        return sp.csr_matrix((np.concatenate([v, v]), (R, C)), shape=(V.n_dofs, Ef.n_dofs))

    def interface_trace(self, d_s):
        """Solid displacement values on the interface nodes, flattened."""
        return np.asarray(d_s)[self.es_interface_dofs]

    def solve_solid(self, rhs):
        d = np.zeros(self.Es.n_dofs)
        d[self.es_free] = self._solid_lu.solve(rhs[self.es_free])
        return d

    def lifting(self, t):
        return inlet_pressure(t, self.cfg) * self.phi

    def step_operators(self, d_f) -> "StepOperators":
        return StepOperators(self, d_f)


def lifting_field(disc: FsiDiscretization) -> np.ndarray:
    """Unit lifting: pulled-back Laplace with 1 on the inlet, 0 on the outlet, natural elsewhere."""
    Q = disc.Q
    A = sp.csr_matrix(assemble_bilinear(FormKind.PRESSURE_LAPLACE, Q, cmap=disc.G_f))
    phi = np.zeros(Q.n_dofs)
    phi[disc.q_inlet] = 1.0
    free = disc.q_free
    rhs = -(A[free][:, disc.q_dirichlet] @ phi[disc.q_dirichlet])
    phi[free] = Factorization(A[free][:, free]).solve(rhs)
    return phi


class StepOperators:
    """Geometry-dependent operators for one time step, on the mesh moved by ``d_f``."""

    def __init__(self, disc: FsiDiscretization, d_f):
        self.disc = disc
        V, Q, Es = disc.V, disc.Q, disc.Es
        self.ale = deformation_state(Field(disc.Ef, d_f), disc.G_f)
        cmap = self.ale.total
        self.cmap = cmap
        self.g = V.gradients(cmap.Finv)
        self.h = Q.gradients(cmap.Finv)[:, 0]
        self.W = (V.area * cmap.J)[:, None] * V.qweights[None, :]
        cfg = disc.cfg
        self.A = sp.csr_matrix(assemble_bilinear(FormKind.PRESSURE_LAPLACE, Q, cmap=cmap))
        self.Dv = sp.csr_matrix(assemble_bilinear(FormKind.DIVERGENCE, Q, V, cmap=cmap))
        self.Bn = sp.csr_matrix(
            assemble_bilinear(FormKind.INTERFACE_NORMAL_FLUX, Q, Es, cmap=cmap, interface=disc.interface)
        )
        self.Tv = cfg.mu_f * sp.csr_matrix(
            assemble_bilinear(FormKind.INTERFACE_TRACTION, Es, V, cmap=cmap, interface=disc.interface)
        )
        self.robin = (self.A + disc.alpha * disc.M_gamma).tocsr()
        self._robin_lu = None

    @property
    def robin_lu(self):
        if self._robin_lu is None:
            f = self.disc.q_free
            self._robin_lu = Factorization(self.robin[f][:, f])
        return self._robin_lu


class FluidStepForm:
    """Residual and Jacobian of the ALE momentum step.

    ``rho/dt (u - u_old) + rho grad(u) F^-1 (u - w) + mu-viscous + J F^-T grad p_old``
    tested against P2 functions, all pulled back to the reference mesh.
    Contractions over quadrature points are written as batched products.
    """

    def __init__(self, ops: StepOperators, u_old, w, p_old):
        disc = ops.disc
        self.ops = ops
        self.disc = disc
        V = disc.V
        cfg = disc.cfg
        self.rho, self.mu, self.dt = cfg.rho_f, cfg.mu_f, cfg.dt
        N, W, g = V.basis, ops.W, ops.g
        n, nq, na, _ = g.shape
        self.N = N
        self.NT = np.ascontiguousarray(N.T)
        self.NN = (N[:, :, None] * N[:, None, :]).reshape(nq, na * na)
        self.uoldq = V.evaluate(u_old)
        self.wq = V.evaluate(w)
        grad_p = np.einsum("ea,eak->ek", _cell_values(disc.Q, p_old), ops.h)
        self.f_p = (N.T @ W.T).T[:, :, None] * grad_p[:, None, :]
        self.mass = np.einsum("eq,qa,qb->eab", W, N, N, optimize=True)
        gf = g.reshape(n, nq, 2 * na)
        outer = np.matmul((W[:, :, None] * gf).transpose(0, 2, 1), gf).reshape(n, na, 2, na, 2)
        self.gg = np.einsum("eakbk->eab", outer)
        self.cross = outer.transpose(0, 1, 4, 3, 2)
        self._rows = np.broadcast_to(V.dof_map[:, :, None], (V.n_cells, 2 * na, 2 * na)).ravel()
        self._cols = np.broadcast_to(V.dof_map[:, None, :], (V.n_cells, 2 * na, 2 * na)).ravel()

    def _fields(self, u):
        V = self.disc.V
        U = V.local(u)
        uq = np.matmul(self.N[None], U)
        Gu = np.matmul(U.transpose(0, 2, 1)[:, None], self.ops.g)
        return uq, Gu

    def residual(self, u):
        V, W, g = self.disc.V, self.ops.W, self.ops.g
        uq, Gu = self._fields(u)
        acc = self.rho / self.dt * (uq - self.uoldq)
        acc += self.rho * np.matmul(Gu, (uq - self.wq)[..., None])[..., 0]
        r = np.matmul(self.NT[None], W[:, :, None] * acc)
        S = W[:, :, None, None] * (Gu + Gu.transpose(0, 1, 3, 2))
        r += self.mu * np.matmul(g, S.transpose(0, 1, 3, 2)).sum(axis=1)
        r += self.f_p
        return np.bincount(V.dof_map.ravel(), r.reshape(V.n_cells, -1).ravel(), minlength=V.n_dofs)

    def local_jacobian(self, u):
        """Element Jacobians ``(n_cells, 12, 12)`` in the velocity dof order of each cell."""
        W, g = self.ops.W, self.ops.g
        uq, Gu = self._fields(u)
        n, nq, na, _ = g.shape
        gadv = np.matmul(g, (uq - self.wq)[..., None])[..., 0]
        diag = self.rho / self.dt * self.mass + self.mu * self.gg
        diag = diag + self.rho * np.matmul(self.NT[None] * W[:, None, :], gadv)
        T = (W[:, :, None] * self.NN[None]).transpose(0, 2, 1)
        conv = np.matmul(T, Gu.reshape(n, nq, 4)).reshape(n, na, na, 2, 2).transpose(0, 1, 3, 2, 4)
        loc = self.mu * self.cross + self.rho * conv
        loc[:, :, 0, :, 0] += diag
        loc[:, :, 1, :, 1] += diag
        return loc.reshape(n, 2 * na, 2 * na)

    def jacobian(self, u):
        V = self.disc.V
        loc = self.local_jacobian(u)
        A = sp.coo_matrix((loc.ravel(), (self._rows, self._cols)), shape=(V.n_dofs, V.n_dofs))
        return A.tocsr()

    def projected_jacobian(self, u, Phi):
        """``Phi^T J(u) Phi`` accumulated cell by cell, without forming ``J``."""
        Pe = Phi[self.disc.V.dof_map]
        loc = self.local_jacobian(u)
        return np.einsum("eai,eaj->ij", Pe, np.matmul(loc, Pe), optimize=True)


def _cell_values(Q, p):
    return np.asarray(p)[Q.cell_nodes]


@dataclass
class TimeState:
    """Unknowns at time index ``i``; all zero at rest."""

    u: np.ndarray
    p0: np.ndarray
    ell: float
    d_s: np.ndarray
    d_s_prev: np.ndarray
    d_f: np.ndarray
    i: int = 0
    p: np.ndarray = None

    def __post_init__(self):
        if self.p is None:
            self.p = self.p0.copy()

    @classmethod
    def rest(cls, disc: FsiDiscretization):
        return cls(
            u=np.zeros(disc.V.n_dofs),
            p0=np.zeros(disc.Q.n_dofs),
            ell=0.0,
            d_s=np.zeros(disc.Es.n_dofs),
            d_s_prev=np.zeros(disc.Es.n_dofs),
            d_f=np.zeros(disc.Ef.n_dofs),
            i=0,
        )


def step_mesh(disc: FsiDiscretization, d_s):
    """Harmonic extension of the interface trace of ``d_s``."""
    return disc.extension(disc.interface_trace(d_s))


def step_fluid_explicit(disc: FsiDiscretization, state: TimeState, d_f_new, ops: StepOperators | None = None):
    """Nonlinear momentum step.

    Returns ``(u, z, w_p2, newton_iterations, ops)`` with ``w_p2`` the mesh
    velocity in the velocity space.
    """
    cfg = disc.cfg
    ops = disc.step_operators(d_f_new) if ops is None else ops
    w = disc.P @ time_derivative(d_f_new, state.d_f, cfg.dt)
    form = FluidStepForm(ops, state.u, w, state.p)
    free = disc.v_free
    u = state.u.copy()
    u[disc.v_dirichlet] = w[disc.v_dirichlet]

    def full(x):
        v = u.copy()
        v[free] = x
        return v

    res = newton_solve(
        lambda x: form.residual(full(x))[free],
        lambda x: form.jacobian(full(x))[free][:, free],
        u[free],
        tol=cfg.newton_tol,
        max_iter=cfg.newton_max_iter,
    )
    u = full(res.x)
    z = u - w
    z[disc.v_dirichlet] = 0.0
    return u, z, w, res.iterations, ops


def relative_increment(delta, new, norm):
    """``|delta| / |new|``; falls back to ``|delta|`` for a vanishing denominator."""
    dn = norm(delta)
    nn = norm(new)
    if dn == 0.0:
        return 0.0
    return dn / nn if nn > 0.0 else dn


@dataclass
class ImplicitResult:
    p0: np.ndarray
    p: np.ndarray
    d_s: np.ndarray
    subiterations: int
    increments: tuple


def implicit_loop(disc: FsiDiscretization, state: TimeState, u_new, ops: StepOperators, ell_new, tol=None):
    """Robin-coupled pressure / solid subiterations for one time step."""
    cfg = disc.cfg
    tol = cfg.tol if tol is None else tol
    dt = cfg.dt
    alpha = disc.alpha
    free = disc.q_free
    ell = ell_new
    const = -cfg.rho_f / dt * (ops.Dv @ u_new) - ops.robin @ ell
    d_old, d_older = state.d_s, state.d_s_prev
    inertia = cfg.rho_s / dt**2 * (disc.M_s @ (2 * d_old - d_older))
    traction_u = ops.Tv @ u_new
    p = state.p.copy()
    d = d_old.copy()
    lu = ops.robin_lu
    inc = (np.inf, np.inf)
    for j in range(cfg.max_subiter):
        acc = second_time_derivative(d, d_old, d_older, dt)
        rhs = const - cfg.rho_f * (ops.Bn @ acc) + alpha * (disc.M_gamma @ p)
        p0 = np.zeros(disc.Q.n_dofs)
        p0[free] = lu.solve(rhs[free])
        p_new = p0 + ell
        d_new = disc.solve_solid(inertia + traction_u + ops.Bn.T @ p_new)
        inc = (
            relative_increment(p_new - p, p_new, disc.X_p.norm),
            relative_increment(d_new - d, d_new, disc.X_d_semi.norm),
        )
        p, d = p_new, d_new
        if max(inc) < tol:
            return ImplicitResult(p0, p, d, j + 1, inc)
    raise MaxSubiterExceededError(
        f"no convergence in {cfg.max_subiter} subiterations (increments p={inc[0]:.3e}, d={inc[1]:.3e})",
        increments=inc,
    )


@dataclass
class SnapshotSet:
    """Columns ``z``, ``p0`` and ``d_s`` for each stored step, plus metadata."""

    S_z: np.ndarray
    S_p: np.ndarray
    S_d: np.ndarray
    times: np.ndarray
    dt: float
    mu_g: float
    mu_s: float

    def __post_init__(self):
        n = {self.S_z.shape[1], self.S_p.shape[1], self.S_d.shape[1], len(self.times)}
        if len(n) != 1:
            raise ValueError(f"snapshot column counts differ: {n}")

    @property
    def n_snapshots(self):
        return self.S_z.shape[1]


@dataclass
class Trajectory:
    """Full fields per step for error computation (columns are steps 1..N_T)."""

    u: np.ndarray
    p: np.ndarray
    d_s: np.ndarray
    d_f: np.ndarray
    times: np.ndarray


@dataclass
class StepStats:
    time_index: list = field(default_factory=list)
    subiterations: list = field(default_factory=list)
    newton_iterations: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    increments: list = field(default_factory=list)
    interface_residual: list = field(default_factory=list)

    def add(self, i, subiter, newton, wall_ms, inc, kin):
        self.time_index.append(i)
        self.subiterations.append(subiter)
        self.newton_iterations.append(newton)
        self.wall_ms.append(wall_ms)
        self.increments.append(inc)
        self.interface_residual.append(kin)


@dataclass
class OfflineResult:
    snapshots: SnapshotSet
    trajectory: Trajectory
    stats: StepStats
    disc: FsiDiscretization


def fom_step(disc: FsiDiscretization, state: TimeState, tol=None):
    """Advance one step; returns the new state and per-step diagnostics."""
    cfg = disc.cfg
    t_new = (state.i + 1) * cfg.dt
    d_f = step_mesh(disc, state.d_s)
    u, z, w, nit, ops = step_fluid_explicit(disc, state, d_f)
    kin = float(np.max(np.abs(u[disc.v_interface_dofs] - w[disc.v_interface_dofs]), initial=0.0))
    ell_t = inlet_pressure(t_new, cfg)
    res = implicit_loop(disc, state, u, ops, ell_t * disc.phi, tol=tol)
    new = TimeState(u, res.p0, ell_t, res.d_s, state.d_s, d_f, state.i + 1, res.p)
    return new, z, dict(newton=nit, subiter=res.subiterations, increments=res.increments, kinematic=kin)


def run_offline(cfg: FsiConfig, mesh: Mesh, shape_map: GeometricMap | None = None, disc=None, n_steps=None):
    """Run the full-order model from rest and collect snapshots for every step."""
    disc = FsiDiscretization(mesh, cfg, shape_map) if disc is None else disc
    n = cfg.n_steps if n_steps is None else n_steps
    V, Q, Es, Ef = disc.V, disc.Q, disc.Es, disc.Ef
    S_z, S_p, S_d = np.zeros((V.n_dofs, n)), np.zeros((Q.n_dofs, n)), np.zeros((Es.n_dofs, n))
    U, Pf, Df = np.zeros((V.n_dofs, n)), np.zeros((Q.n_dofs, n)), np.zeros((Ef.n_dofs, n))
    times = cfg.dt * np.arange(1, n + 1)
    stats = StepStats()
    state = TimeState.rest(disc)
    for k in range(n):
        t0 = time.perf_counter()
        try:
            state, z, info = fom_step(disc, state)
        except FsiError as exc:
            raise TimeStepError(k, exc) from exc
        S_z[:, k], S_p[:, k], S_d[:, k] = z, state.p0, state.d_s
        U[:, k], Pf[:, k], Df[:, k] = state.u, state.p, state.d_f
        ms = 1e3 * (time.perf_counter() - t0)
        stats.add(k, info["subiter"], info["newton"], ms, info["increments"], info["kinematic"])
        logger.debug("step %d: %d subiterations, %d Newton, %.0f ms", k, info["subiter"], info["newton"], ms)
    mu_g = cfg.mu_g if shape_map is None else shape_map.mu_g
    snaps = SnapshotSet(S_z, S_p, S_d, times, cfg.dt, mu_g, cfg.mu_s)
    return OfflineResult(snaps, Trajectory(U, Pf, S_d.copy(), Df, times), stats, disc)


def reconstruct_trajectory(snaps: SnapshotSet, disc: FsiDiscretization) -> Trajectory:
    """Full fields from stored snapshots: ``d_f`` from the previous ``d_s``, ``u = z + D_t d_f``, ``p = p0 + lifting``."""
    n = snaps.n_snapshots
    prev = np.hstack([np.zeros((disc.Es.n_dofs, 1)), snaps.S_d[:, :-1]]) if n else snaps.S_d
    Df = disc.extension.many(prev[disc.es_interface_dofs]) if n else np.zeros((disc.Ef.n_dofs, 0))
    Df_old = np.hstack([np.zeros((disc.Ef.n_dofs, 1)), Df[:, :-1]]) if n else Df
    U = snaps.S_z + disc.P @ ((Df - Df_old) / snaps.dt)
    ell = np.outer(disc.phi, inlet_pressure(snaps.times, disc.cfg)) if n else np.zeros((disc.Q.n_dofs, 0))
    return Trajectory(U, snaps.S_p + ell, snaps.S_d.copy(), Df, np.asarray(snaps.times))


SNAPSHOT_MAGIC = b"FSISNAP1"
_HEADER = struct.Struct("<8sIIddd")


def _check_new(path, overwrite):
    path = Path(path)
    if path.exists() and not overwrite:
        raise OutputExistsError(f"{path} exists", path=str(path))
    return path


def write_matrix(path, magic, S, dt, mu_g, mu_s, extra=None, overwrite=False):
    path = _check_new(path, overwrite)
    S = np.ascontiguousarray(S, dtype="<f8")
    if S.ndim != 2:
        raise ValueError("matrix payload must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, S.shape[0], S.shape[1], dt, mu_g, mu_s))
        fh.write(S.tobytes(order="C"))
        if extra is not None:
            fh.write(np.ascontiguousarray(extra, dtype="<f8").tobytes())
    return path


def read_matrix(path, magic):
    """Return ``(matrix, dt, mu_g, mu_s, trailing f64 array)``."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FileFormatError(f"{path}: truncated header")
    tag, nr, nc, dt, mu_g, mu_s = _HEADER.unpack_from(data)
    if tag != magic:
        raise FileFormatError(f"{path}: bad magic {tag!r}, expected {magic!r}")
    body = data[_HEADER.size :]
    need = 8 * nr * nc
    if len(body) < need or (len(body) - need) % 8:
        raise FileFormatError(f"{path}: payload size {len(body)} does not match {nr}x{nc}")
    S = np.frombuffer(body[:need], dtype="<f8").reshape(nr, nc).copy()
    extra = np.frombuffer(body[need:], dtype="<f8").copy()
    return S, dt, mu_g, mu_s, extra


SNAPSHOT_FILES = {"z": "snapshots_z.bin", "p0": "snapshots_p0.bin", "d_s": "snapshots_ds.bin"}


def write_snapshots(directory, snaps: SnapshotSet, overwrite=False):
    """Write one FSISNAP1 file per unknown into ``directory``; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = {}
    for key, S in (("z", snaps.S_z), ("p0", snaps.S_p), ("d_s", snaps.S_d)):
        out[key] = write_matrix(
            directory / SNAPSHOT_FILES[key], SNAPSHOT_MAGIC, S, snaps.dt, snaps.mu_g, snaps.mu_s, overwrite=overwrite
        )
    return out


def read_snapshots(directory) -> SnapshotSet:
    directory = Path(directory)
    mats = {}
    for key, name in SNAPSHOT_FILES.items():
        S, dt, mu_g, mu_s, _ = read_matrix(directory / name, SNAPSHOT_MAGIC)
        mats[key] = S
    n = mats["z"].shape[1]
    return SnapshotSet(mats["z"], mats["p0"], mats["d_s"], dt * np.arange(1, n + 1), dt, mu_g, mu_s)


STATS_COLUMNS = ("time_index", "subiterations", "newton_iterations", "wall_ms")


def write_stats(path, stats: StepStats, overwrite=False):
    path = _check_new(path, overwrite)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STATS_COLUMNS)
        for row in zip(stats.time_index, stats.subiterations, stats.newton_iterations, stats.wall_ms):
            w.writerow([row[0], row[1], row[2], f"{row[3]:.3f}"])
    return path


def read_stats(path) -> StepStats:
    stats = StepStats()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != STATS_COLUMNS:
            raise FileFormatError(f"{path}: unexpected columns {reader.fieldnames}")
        for r in reader:
            stats.time_index.append(int(r["time_index"]))
            stats.subiterations.append(int(r["subiterations"]))
            stats.newton_iterations.append(int(r["newton_iterations"]))
            stats.wall_ms.append(float(r["wall_ms"]))
    return stats
