"""Galerkin reduced-order model of the partitioned FSI scheme.

The reduced loop mirrors the full-order one. The fluid displacement reuses
the solid coefficients of the previous step on the extended modes, the
momentum step is solved for the ``z`` coefficients, and the Robin
subiterations are Galerkin projections onto the pressure and solid bases.
Operators are assembled at the finite-element level on the reduced geometry
and then projected; stopping norms are evaluated on reconstructed fields.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import DimensionMismatchError, FsiError, GridMismatchError, MaxSubiterExceededError, TimeStepError
from .fem import newton_solve
from .offline import (
    FluidStepForm,
    FsiDiscretization,
    SnapshotSet,
    Trajectory,
    _check_new,
    inlet_pressure,
    relative_increment,
    second_time_derivative,
    time_derivative,
)
from .pod import ReducedSpaces, build_reduced_spaces, extend_solid_modes

__all__ = [
    "ReducedState",
    "RomRunReport",
    "RomResult",
    "ReducedOrderModel",
    "reduced_mesh_displacement",
    "online_fluid_step",
    "online_implicit_loop",
    "run_online",
    "error_metrics",
    "relative_errors",
    "write_report_csv",
    "write_summary_json",
]


@dataclass
class ReducedState:
    """Reduced coefficients at step ``i`` with the reconstructed velocity and pressure."""

    a_z: np.ndarray
    b_p: np.ndarray
    c_d: np.ndarray
    c_d_prev: np.ndarray
    u: np.ndarray
    p: np.ndarray
    i: int = 0

    @classmethod
    def rest(cls, disc: FsiDiscretization, spaces: ReducedSpaces):
        n_z, n_p, n_d = spaces.sizes
        return cls(
            np.zeros(n_z), np.zeros(n_p), np.zeros(n_d), np.zeros(n_d),
            np.zeros(disc.V.n_dofs), np.zeros(disc.Q.n_dofs), 0,
        )


def reduced_mesh_displacement(c_d, spaces: ReducedSpaces):
    """Fluid displacement ``Phi_df c_d``; no solve is needed."""
    c_d = np.asarray(c_d, dtype=float)
    if c_d.shape != (spaces.Phi_df.shape[1],):
        raise DimensionMismatchError(f"{c_d.shape[0]} coefficients for {spaces.Phi_df.shape[1]} modes")
    return spaces.Phi_df @ c_d


def online_fluid_step(disc: FsiDiscretization, spaces: ReducedSpaces, state: ReducedState, d_f_old, d_f_new):
    """Reduced momentum step; returns ``(a_z, u, w, newton_iterations, ops)``."""
    cfg = disc.cfg
    Phi = spaces.z.modes
    ops = disc.step_operators(d_f_new)
    w = disc.P @ time_derivative(d_f_new, d_f_old, cfg.dt)
    form = FluidStepForm(ops, state.u, w, state.p)

    def residual(a):
        return Phi.T @ form.residual(Phi @ a + w)

    def jacobian(a):
        Jn = form.projected_jacobian(Phi @ a + w, Phi)
        assert Jn.shape == (Phi.shape[1],) * 2
        return Jn

    if Phi.shape[1] == 0:
        return np.zeros(0), w.copy(), w, 0, ops
    res = newton_solve(residual, jacobian, state.a_z, tol=cfg.newton_tol, max_iter=cfg.newton_max_iter)
    return res.x, Phi @ res.x + w, w, res.iterations, ops


@dataclass
class OnlineImplicitResult:
    b_p: np.ndarray
    c_d: np.ndarray
    p: np.ndarray
    d_s: np.ndarray
    subiterations: int
    increments: tuple


def online_implicit_loop(disc, spaces: ReducedSpaces, state: ReducedState, u_new, ops, ell_new, tol=None):
    """Reduced Robin pressure / solid subiterations."""
    cfg = disc.cfg
    tol = cfg.tol if tol is None else tol
    dt, alpha = cfg.dt, disc.alpha
    Pp, Pd = spaces.p.modes, spaces.d.modes
    A_p = Pp.T @ (ops.robin @ Pp)
    A_d = Pd.T @ (disc.solid_matrix @ Pd)
    assert A_p.shape == (Pp.shape[1],) * 2 and A_d.shape == (Pd.shape[1],) * 2
    const = -cfg.rho_f / dt * (ops.Dv @ u_new) - ops.robin @ ell_new
    d_old = Pd @ state.c_d
    d_older = Pd @ state.c_d_prev
    inertia = cfg.rho_s / dt**2 * (disc.M_s @ (2 * d_old - d_older))
    solid_const = Pd.T @ (inertia + ops.Tv @ u_new)
    p, d = state.p.copy(), d_old.copy()
    inc = (np.inf, np.inf)
    for j in range(cfg.max_subiter):
        acc = second_time_derivative(d, d_old, d_older, dt)
        rhs = const - cfg.rho_f * (ops.Bn @ acc) + alpha * (disc.M_gamma @ p)
        b = np.linalg.solve(A_p, Pp.T @ rhs) if Pp.shape[1] else np.zeros(0)
        p_new = Pp @ b + ell_new
        c = np.linalg.solve(A_d, solid_const + Pd.T @ (ops.Bn.T @ p_new)) if Pd.shape[1] else np.zeros(0)
        d_new = Pd @ c
        inc = (
            relative_increment(p_new - p, p_new, disc.X_p.norm),
            relative_increment(d_new - d, d_new, disc.X_d_semi.norm),
        )
        p, d = p_new, d_new
        if max(inc) < tol:
            return OnlineImplicitResult(b, c, p, d, j + 1, inc)
    raise MaxSubiterExceededError(
        f"reduced loop: no convergence in {cfg.max_subiter} subiterations (p={inc[0]:.3e}, d={inc[1]:.3e})",
        increments=inc,
    )


@dataclass
class RomResult:
    """Reduced coefficients and reconstructed fields per step (columns are steps 1..N_T)."""

    a_z: np.ndarray
    b_p: np.ndarray
    c_d: np.ndarray
    trajectory: Trajectory
    subiterations: list
    newton_iterations: list
    increments: list
    interface_residual: list
    cpu_seconds: float
    step_cpu: list = field(default_factory=list)


def run_online(disc: FsiDiscretization, spaces: ReducedSpaces, n_steps=None, tol=None) -> RomResult:
    cfg = disc.cfg
    n = cfg.n_steps if n_steps is None else n_steps
    n_z, n_p, n_d = spaces.sizes
    if spaces.Phi_df.shape[1] != n_d:
        raise DimensionMismatchError("extended fluid modes and solid modes differ in number")
    A, B, C = np.zeros((n_z, n)), np.zeros((n_p, n)), np.zeros((n_d, n))
    U, P = np.zeros((disc.V.n_dofs, n)), np.zeros((disc.Q.n_dofs, n))
    D, Df = np.zeros((disc.Es.n_dofs, n)), np.zeros((disc.Ef.n_dofs, n))
    subit, newton, incs, kins = [], [], [], []
    state = ReducedState.rest(disc, spaces)
    t_start = time.process_time()
    step_cpu = []
    for k in range(n):
        t_step = time.process_time()
        try:
            d_f_old = reduced_mesh_displacement(state.c_d_prev, spaces)
            d_f_new = reduced_mesh_displacement(state.c_d, spaces)
            a, u, w, nit, ops = online_fluid_step(disc, spaces, state, d_f_old, d_f_new)
            ell = inlet_pressure((state.i + 1) * cfg.dt, cfg) * disc.phi
            res = online_implicit_loop(disc, spaces, state, u, ops, ell, tol=tol)
        except FsiError as exc:
            raise TimeStepError(k, exc) from exc
        kins.append(float(np.max(np.abs(u[disc.v_interface_dofs] - w[disc.v_interface_dofs]), initial=0.0)))
        state = ReducedState(a, res.b_p, res.c_d, state.c_d, u, res.p, state.i + 1)
        A[:, k], B[:, k], C[:, k] = a, res.b_p, res.c_d
        U[:, k], P[:, k], D[:, k], Df[:, k] = u, res.p, res.d_s, d_f_new
        subit.append(res.subiterations)
        newton.append(nit)
        incs.append(res.increments)
        step_cpu.append(time.process_time() - t_step)
    cpu = time.process_time() - t_start
    times = cfg.dt * np.arange(1, n + 1)
    return RomResult(A, B, C, Trajectory(U, P, D, Df, times), subit, newton, incs, kins, cpu, step_cpu)


def relative_errors(ref, approx, X):
    """Per-column ``|ref - approx|_X / |ref|_X`` (absolute where ``|ref|_X = 0``)."""
    num = X.norms(np.asarray(ref) - np.asarray(approx))
    den = X.norms(ref)
    out = num.copy()
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out


@dataclass
class RomRunReport:
    times: np.ndarray
    subiterations: list
    err_u: np.ndarray = None
    err_p: np.ndarray = None
    err_d: np.ndarray = None
    n_choices: tuple = ()
    mu: dict = field(default_factory=dict)
    cpu_seconds: float = 0.0

    @property
    def has_errors(self):
        return self.err_u is not None

    def averages(self):
        out = {"subiterations": float(np.mean(self.subiterations)) if self.subiterations else 0.0}
        if self.has_errors:
            out.update(err_u=float(np.mean(self.err_u)), err_p=float(np.mean(self.err_p)), err_d=float(np.mean(self.err_d)))
        return out


def error_metrics(fom: Trajectory, rom: Trajectory, disc: FsiDiscretization, subiterations=None) -> RomRunReport:
    """Relative H1 velocity, L2 pressure and H1 solid-displacement errors per step."""
    if len(fom.times) != len(rom.times) or not np.allclose(fom.times, rom.times, rtol=1e-12, atol=0):
        raise GridMismatchError(f"time grids differ ({len(fom.times)} vs {len(rom.times)} steps)")
    return RomRunReport(
        times=np.asarray(fom.times),
        subiterations=list(subiterations or []),
        err_u=relative_errors(fom.u, rom.u, disc.X_u),
        err_p=relative_errors(fom.p, rom.p, disc.X_p),
        err_d=relative_errors(fom.d_s, rom.d_s, disc.X_d),
    )


class ReducedOrderModel(BaseEstimator):
    """Estimator wrapper: ``fit`` builds the reduced spaces, ``predict`` runs the online loop.

    Parameters
    ----------
    disc : FsiDiscretization
        Discretization at the parameter point to simulate.
    n_z, n_p, n_d : int, optional
        Basis sizes; ``None`` keeps the full numerical rank.
    tol : float, optional
        Subiteration tolerance; defaults to the configuration's.
    """

    def __init__(self, disc=None, n_z=None, n_p=None, n_d=None, tol=None):
        self.disc = disc
        self.n_z = n_z
        self.n_p = n_p
        self.n_d = n_d
        self.tol = tol

    def fit(self, X, y=None, spaces: ReducedSpaces | None = None):
        """Compress snapshot sets ``X`` (a :class:`SnapshotSet` or a list of them).

        Passing ``spaces`` reuses precomputed bases; solid modes are extended
        with this model's discretization either way.
        """
        if self.disc is None:
            raise ValueError("ReducedOrderModel needs a discretization")
        if spaces is None:
            sets = [X] if isinstance(X, SnapshotSet) else list(X)
            spaces = build_reduced_spaces(sets, self.disc)
        spaces = spaces.truncate(self.n_z, self.n_p, self.n_d)
        spaces.Phi_df = extend_solid_modes(spaces.d.modes, self.disc)
        self.spaces_ = spaces
        self.n_modes_ = spaces.sizes
        return self

    def predict(self, n_steps=None) -> RomResult:
        check_is_fitted(self, "spaces_")
        return run_online(self.disc, self.spaces_, n_steps=n_steps, tol=self.tol)

    def score(self, fom: Trajectory, result: RomResult | None = None) -> RomRunReport:
        """Error report against a full-order trajectory (runs ``predict`` if needed)."""
        result = self.predict(len(fom.times)) if result is None else result
        rep = error_metrics(fom, result.trajectory, self.disc, result.subiterations)
        rep.n_choices = self.n_modes_
        cfg = self.disc.cfg
        rep.mu = {"mu_g": self.disc.shape_map.mu_g if self.disc.shape_map else cfg.mu_g, "mu_s": cfg.mu_s}
        rep.cpu_seconds = result.cpu_seconds
        return rep


REPORT_COLUMNS = ("step", "t", "subiters", "err_u", "err_p", "err_d")


def write_report_csv(path, report: RomRunReport, overwrite=False):
    path = _check_new(path, overwrite)
    n = len(report.times)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for k in range(n):
            row = [k + 1, repr(float(report.times[k])), report.subiterations[k] if report.subiterations else ""]
            if report.has_errors:
                row += [repr(float(report.err_u[k])), repr(float(report.err_p[k])), repr(float(report.err_d[k]))]
            else:
                row += ["", "", ""]
            w.writerow(row)
    return path


def write_summary_json(path, report: RomRunReport, overwrite=False):
    path = _check_new(path, overwrite)
    n_z, n_p, n_d = report.n_choices if report.n_choices else (None, None, None)
    data = {
        "averages": report.averages(),
        "n_z": n_z,
        "n_p": n_p,
        "n_d": n_d,
        "mu": report.mu,
        "cpu_seconds": report.cpu_seconds,
        "n_steps": len(report.times),
    }
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path
