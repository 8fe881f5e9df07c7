"""Command-line front end: ``fsirom mesh|offline|pod|online|export --config FILE``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import FsiError, OutputExistsError
from .mesh import generate_channel_mesh, read_mesh, validate_mesh, write_mesh
from .offline import (
    FsiDiscretization,
    read_snapshots,
    reconstruct_trajectory,
    run_offline,
    write_snapshots,
    write_stats,
)
from .online import ReducedOrderModel, RomRunReport, write_report_csv, write_summary_json
from .pod import PodBasis, ReducedSpaces, build_reduced_spaces, read_basis, write_basis, write_energy_csv
from .vtk import point_values, write_vtk

logger = logging.getLogger("fsirom")

BASIS_FILES = {"z": "basis_z.bin", "p": "basis_p0.bin", "d": "basis_ds.bin", "df": "basis_df.bin"}


def param_dir(cfg: RunConfig, k):
    return cfg.root / "offline" / f"param_{k:03d}"


def _load_or_make_mesh(cfg: RunConfig):
    if cfg.mesh_path.exists():
        return read_mesh(cfg.mesh_path)
    return generate_channel_mesh(cfg.geometry())


def _discretization(cfg: RunConfig, mesh, mu_g, mu_s, **overrides):
    fsi = cfg.fsi_config(mu_g=mu_g, mu_s=mu_s, **overrides)
    return FsiDiscretization(mesh, fsi, cfg.shape_map(mu_g))


def cmd_mesh(cfg: RunConfig, args):
    mesh = generate_channel_mesh(cfg.geometry())
    report = validate_mesh(mesh)
    if report:
        raise FsiError(f"generated mesh failed validation: {report.kinds()}")
    cfg.mesh_path.parent.mkdir(parents=True, exist_ok=True)
    if cfg.mesh_path.exists():
        raise OutputExistsError(f"{cfg.mesh_path} exists", path=str(cfg.mesh_path))
    write_mesh(mesh, cfg.mesh_path)
    return {"mesh": str(cfg.mesh_path), "vertices": mesh.n_vertices, "triangles": mesh.n_triangles}


def _selected(cfg, args):
    pts = cfg.training_points()
    return [args.param_index] if args.param_index is not None else list(range(len(pts)))


def cmd_offline(cfg: RunConfig, args):
    pts = cfg.training_points()
    ks = _selected(cfg, args)
    for k in ks:
        if not 0 <= k < len(pts):
            raise ValueError(f"param index {k} outside 0..{len(pts) - 1}")
        d = param_dir(cfg, k)
        if d.exists() and any(d.iterdir()):
            raise OutputExistsError(f"{d} already holds outputs; resuming is not supported", path=str(d))
    mesh = _load_or_make_mesh(cfg)
    done = []
    for k in ks:
        mu_g, mu_s = pts[k]
        disc = _discretization(cfg, mesh, mu_g, mu_s)
        logger.info("offline run %d: mu_g=%g mu_s=%g", k, mu_g, mu_s)
        res = run_offline(disc.cfg, mesh, disc.shape_map, disc=disc)
        d = param_dir(cfg, k)
        write_snapshots(d, res.snapshots)
        write_stats(d / "stats.csv", res.stats)
        done.append({"param_index": k, "mu_g": mu_g, "mu_s": mu_s, "dir": str(d), "columns": res.snapshots.n_snapshots})
    return {"runs": done}


def _training_sets(cfg):
    sets = []
    for k in range(len(cfg.training_points())):
        d = param_dir(cfg, k)
        if not d.exists():
            raise FileNotFoundError(f"missing offline outputs for parameter {k} in {d}")
        sets.append(read_snapshots(d))
    return sets


def cmd_pod(cfg: RunConfig, args):
    out = cfg.root / "pod"
    if out.exists() and any(out.iterdir()):
        raise OutputExistsError(f"{out} already holds outputs", path=str(out))
    sets = _training_sets(cfg)
    mesh = _load_or_make_mesh(cfg)
    # Gram matrices do not depend on the parameters; extended modes use the reference shape
    disc = FsiDiscretization(mesh, cfg.fsi_config())
    spaces = build_reduced_spaces(sets, disc)
    out.mkdir(parents=True, exist_ok=True)
    meta = dict(dt=cfg.dt, mu_g=np.nan, mu_s=np.nan) if len(sets) > 1 else dict(dt=cfg.dt, mu_g=sets[0].mu_g, mu_s=sets[0].mu_s)
    for key, basis, energy in (("z", spaces.z, "energy_z.csv"), ("p", spaces.p, "energy_p0.csv"), ("d", spaces.d, "energy_ds.csv")):
        write_basis(out / BASIS_FILES[key], basis, **meta)
        write_energy_csv(out / energy, basis)
    write_basis(out / BASIS_FILES["df"], PodBasis(spaces.Phi_df, spaces.d.eigenvalues), **meta)
    return {"method": "nested" if len(sets) > 1 else "plain", "n_sets": len(sets), "ranks": list(spaces.sizes)}


def _load_spaces(cfg, disc):
    d = cfg.root / "pod"
    z = read_basis(d / BASIS_FILES["z"], disc.X_u)
    p = read_basis(d / BASIS_FILES["p"], disc.X_p)
    s = read_basis(d / BASIS_FILES["d"], disc.X_d)
    return ReducedSpaces(z, p, s, np.zeros((disc.Ef.n_dofs, s.n_modes)))


def _n_choices(cfg, args):
    pick = lambda a, c: a if a is not None else c  # noqa: E731
    return pick(args.n_z, cfg.n_z), pick(args.n_p, cfg.n_p), pick(args.n_d, cfg.n_d)


def _reference(cfg, mesh, disc, mu_g, mu_s):
    if cfg.online_reference == "none":
        return None
    if cfg.online_reference == "auto":
        for k, (g, s) in enumerate(cfg.training_points()):
            d = param_dir(cfg, k)
            if np.isclose(g, mu_g, rtol=0, atol=1e-12) and np.isclose(s, mu_s, rtol=1e-12) and d.exists():
                return reconstruct_trajectory(read_snapshots(d), disc)
        return None
    return run_offline(disc.cfg, mesh, disc.shape_map, disc=disc).trajectory


def _online_run(cfg, args):
    mu_g, mu_s = cfg.online_point(args.param_index)
    mesh = _load_or_make_mesh(cfg)
    disc = _discretization(cfg, mesh, mu_g, mu_s)
    n_z, n_p, n_d = _n_choices(cfg, args)
    rom = ReducedOrderModel(disc, n_z, n_p, n_d, tol=cfg.online_tol).fit(None, spaces=_load_spaces(cfg, disc))
    result = rom.predict()
    return mesh, disc, rom, result, (mu_g, mu_s)


def cmd_online(cfg: RunConfig, args):
    mesh, disc, rom, result, (mu_g, mu_s) = _online_run(cfg, args)
    n_z, n_p, n_d = rom.n_modes_
    tag = f"mu_g{mu_g:.6g}_mu_s{mu_s:.6g}_N{n_z}-{n_p}-{n_d}"
    if cfg.online_tol is not None:
        tag += f"_tol{cfg.online_tol:.0e}"
    out = cfg.root / "online" / tag
    if out.exists() and any(out.iterdir()):
        raise OutputExistsError(f"{out} already holds outputs", path=str(out))
    ref = _reference(cfg, mesh, disc, mu_g, mu_s)
    if ref is not None:
        report = rom.score(ref, result)
    else:
        report = RomRunReport(result.trajectory.times, result.subiterations, n_choices=rom.n_modes_,
                              mu={"mu_g": mu_g, "mu_s": mu_s}, cpu_seconds=result.cpu_seconds)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(out / "report.csv", report)
    write_summary_json(out / "summary.json", report)
    with open(out / "coefficients.csv", "w") as fh:
        cols = [f"z{k}" for k in range(n_z)] + [f"p{k}" for k in range(n_p)] + [f"d{k}" for k in range(n_d)]
        fh.write(",".join(["step"] + cols) + "\n")
        coef = np.vstack([result.a_z, result.b_p, result.c_d])
        for k in range(coef.shape[1]):
            fh.write(",".join([str(k + 1)] + [repr(float(v)) for v in coef[:, k]]) + "\n")
    return {"dir": str(out), "averages": report.averages(), "n": list(rom.n_modes_)}


def _steps(text, n):
    text = text.strip().lower()
    if text == "last":
        return [n]
    if text == "all":
        return list(range(1, n + 1))
    steps = [int(s) for s in text.split(",") if s.strip()]
    bad = [s for s in steps if not 1 <= s <= n]
    if bad:
        raise ValueError(f"export steps {bad} outside 1..{n}")
    return steps


def export_fields(path, disc, traj, k, deformed=False, overwrite=False):
    """VTK file of step column ``k`` of ``traj`` on the (mapped) mesh."""
    mesh = disc.mesh
    u = point_values(disc.V, traj.u[:, k])
    p = point_values(disc.Q, traj.p[:, k])[:, 0]
    disp = point_values(disc.Ef, traj.d_f[:, k])
    ds = point_values(disc.Es, traj.d_s[:, k])
    solid_only = np.setdiff1d(disc.Es.vertices, disc.Ef.vertices)
    disp[solid_only] = ds[solid_only]
    coords = mesh.vertices if disc.shape_map is None else disc.shape_map(mesh.vertices)
    return write_vtk(
        path, mesh, point_data={"velocity": u, "pressure": p, "displacement": disp},
        coords=coords, displacement=disp if deformed else None, overwrite=overwrite,
    )


def cmd_export(cfg: RunConfig, args):
    k = 0 if args.param_index is None else args.param_index
    if cfg.export_source == "offline":
        mesh = _load_or_make_mesh(cfg)
        mu_g, mu_s = cfg.training_points()[k]
        disc = _discretization(cfg, mesh, mu_g, mu_s)
        traj = reconstruct_trajectory(read_snapshots(param_dir(cfg, k)), disc)
    else:
        mesh, disc, rom, result, _ = _online_run(cfg, args)
        traj = result.trajectory
    out = cfg.root / "export"
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for step in _steps(cfg.export_steps, len(traj.times)):
        name = f"{cfg.export_source}_param{k:03d}_step{step:05d}{'_deformed' if cfg.export_deformed else ''}.vtk"
        files.append(str(export_fields(out / name, disc, traj, step - 1, cfg.export_deformed)))
    return {"files": files}


COMMANDS = {"mesh": cmd_mesh, "offline": cmd_offline, "pod": cmd_pod, "online": cmd_online, "export": cmd_export}


def build_parser():
    ap = argparse.ArgumentParser(prog="fsirom", description="Partitioned FSI solver and POD-Galerkin ROM pipeline.")
    ap.add_argument("--version", action="version", version=f"fsirom {__version__}")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="flat key = value configuration file")
    ap.add_argument("--param-index", type=int, default=None, help="training parameter point to use")
    ap.add_argument("--n-z", type=int, default=None)
    ap.add_argument("--n-p", type=int, default=None)
    ap.add_argument("--n-d", type=int, default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _fail(code, message):
    print(json.dumps({"error": code, "message": message}), file=sys.stderr)
    return 2


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        result = COMMANDS[args.command](cfg, args)
    except FsiError as exc:
        return _fail(exc.code, exc.args[0] if exc.args else "")
    except FileNotFoundError as exc:
        return _fail("FILE_NOT_FOUND", str(exc))
    except ValueError as exc:
        return _fail("INVALID_CONFIG", str(exc))
    print(json.dumps(result, default=float))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
