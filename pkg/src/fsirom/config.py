"""Flat ``key = value`` run configuration driving the whole pipeline."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .ale import build_geometric_map
from .errors import FileFormatError
from .mesh import ChannelGeometry
from .offline import FsiConfig

__all__ = ["RunConfig", "load_config", "parse_config", "dump_config"]

_MESH_KEYS = ("length", "height", "leaflet_length", "leaflet_thickness", "leaflet_x_position", "target_edge_size", "map_transition")
_FSI_KEYS = tuple(f.name for f in fields(FsiConfig))


@dataclass
class RunConfig:
    """Every setting of a pipeline run.

    Training grids: ``n_g`` values of ``mu_g`` and ``n_s`` values of ``mu_s``,
    equispaced over their ranges; a grid of size one uses ``mu_g`` (or
    ``mu_s``) itself. Parameter point ``k`` is ``(mu_g[k // n_s], mu_s[k % n_s])``.
    """

    # geometry and mesh (cm)
    length: float = 10.0
    height: float = 2.5
    leaflet_length: float = 1.0
    leaflet_thickness: float = 0.2
    leaflet_x_position: float = 1.0
    target_edge_size: float = 0.1
    map_transition: float = 0.5
    # physics, time grid, solver
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
    # training grid
    n_g: int = 1
    n_s: int = 1
    mu_g_min: float = 0.8
    mu_g_max: float = 1.0
    mu_s_min: float = 1.0e5
    mu_s_max: float = 8.0e5
    # online
    n_z: typing.Optional[int] = None
    n_p: typing.Optional[int] = None
    n_d: typing.Optional[int] = None
    online_mu_g: typing.Optional[float] = None
    online_mu_s: typing.Optional[float] = None
    online_tol: typing.Optional[float] = None
    online_reference: str = "auto"
    # export
    export_source: str = "offline"
    export_steps: str = "last"
    export_deformed: bool = False
    # paths
    workdir: str = "fsirom_run"
    mesh_file: str = ""

    def __post_init__(self):
        self.check()

    def check(self):
        if self.n_g < 1 or self.n_s < 1:
            raise ValueError("training grids must be nonempty (n_g, n_s >= 1)")
        if self.online_reference not in ("auto", "compute", "none"):
            raise ValueError(f"online_reference must be auto, compute or none, got {self.online_reference!r}")
        if self.export_source not in ("offline", "online"):
            raise ValueError(f"export_source must be offline or online, got {self.export_source!r}")
        return self

    # derived objects

    def geometry(self) -> ChannelGeometry:
        return ChannelGeometry(**{k: getattr(self, k) for k in _MESH_KEYS})

    def fsi_config(self, **overrides) -> FsiConfig:
        cfg = FsiConfig(**{k: getattr(self, k) for k in _FSI_KEYS})
        return cfg.replace(**overrides) if overrides else cfg

    def mu_g_grid(self):
        return np.array([self.mu_g]) if self.n_g == 1 else np.linspace(self.mu_g_min, self.mu_g_max, self.n_g)

    def mu_s_grid(self):
        return np.array([self.mu_s]) if self.n_s == 1 else np.linspace(self.mu_s_min, self.mu_s_max, self.n_s)

    def training_points(self):
        return [(float(g), float(s)) for g in self.mu_g_grid() for s in self.mu_s_grid()]

    def shape_map(self, mu_g):
        return build_geometric_map(self.geometry(), mu_g)

    def online_point(self, param_index=None):
        pts = self.training_points()
        if param_index is not None:
            if not 0 <= param_index < len(pts):
                raise ValueError(f"param index {param_index} outside 0..{len(pts) - 1}")
            return pts[param_index]
        g = self.mu_g if self.online_mu_g is None else self.online_mu_g
        s = self.mu_s if self.online_mu_s is None else self.online_mu_s
        return float(g), float(s)

    @property
    def root(self):
        return Path(self.workdir)

    @property
    def mesh_path(self):
        return Path(self.mesh_file) if self.mesh_file else self.root / "mesh.fsimesh"


def _type_of(f):
    t = typing.get_type_hints(RunConfig)[f.name]
    args = typing.get_args(t)
    if args:
        return next(a for a in args if a is not type(None)), True
    return t, False


def _parse_value(f, text):
    base, optional = _type_of(f)
    text = text.strip()
    if optional and text.lower() in ("", "none"):
        return None
    try:
        if base is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if base is int:
            return int(text)
        if base is float:
            return float(text)
        return text
    except ValueError as exc:
        raise FileFormatError(f"bad value {text!r} for {f.name}") from exc


def parse_config(text) -> RunConfig:
    known = {f.name: f for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FileFormatError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise FileFormatError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(known[key], val)
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, FileFormatError):
            raise
        raise FileFormatError(str(exc)) from exc


def _format(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def replace_config(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, **changes)
