import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import inlet_flux, vertex_at
from fsirom.ale import build_geometric_map
from fsirom.errors import FileFormatError, OutputExistsError, TimeStepError
from fsirom.mesh import ChannelGeometry
from fsirom.offline import (
    SNAPSHOT_FILES,
    SNAPSHOT_MAGIC,
    FsiConfig,
    FsiDiscretization,
    SnapshotSet,
    TimeState,
    fom_step,
    implicit_loop,
    inlet_pressure,
    read_matrix,
    read_snapshots,
    read_stats,
    reconstruct_trajectory,
    relative_increment,
    robin_coefficient,
    run_offline,
    second_time_derivative,
    step_fluid_explicit,
    step_mesh,
    time_derivative,
    write_matrix,
    write_snapshots,
    write_stats,
)

RNG = np.random.default_rng(11)

# independent evaluation of rho_f / (rho_s sqrt((lambda + 2 mu) / rho_s) dt) with the default constants
ALPHA = 9.534625892455924
C_P = 953.4625892455922
Z_P = 1048.808848170152


def test_robin_coefficient_value():
    cfg = FsiConfig()
    assert robin_coefficient(cfg) == pytest.approx(ALPHA, rel=1e-14)
    assert cfg.rho_s * C_P == pytest.approx(Z_P, rel=1e-14)
    assert cfg.rho_f / (Z_P * cfg.dt) == pytest.approx(ALPHA, rel=1e-14)


def test_robin_coefficient_scaling():
    cfg = FsiConfig()
    assert robin_coefficient(cfg.replace(dt=5e-5)) == pytest.approx(2 * ALPHA, rel=1e-14)
    assert robin_coefficient(cfg.replace(rho_f=0.0)) == 0.0


def test_inlet_pressure_examples():
    cfg = FsiConfig()
    assert inlet_pressure(0.0, cfg) == 0.0
    assert inlet_pressure(0.025, cfg) == pytest.approx(5.0, abs=1e-14)
    assert inlet_pressure(0.0125, cfg) == pytest.approx(1.4644660940672622, abs=1e-14)
    np.testing.assert_array_equal(inlet_pressure(np.array([0.03, 0.05, 1.0]), cfg), 5.0)


@given(t=st.floats(0.0, 1.0))
def test_inlet_pressure_bounds(t):
    assert 0.0 <= inlet_pressure(t, FsiConfig()) <= 5.0 + 1e-15


@given(f=st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3), dt=st.floats(1e-5, 1.0))
def test_bdf_stencils(f, dt):
    a, b, c = f
    assert time_derivative(a, b, dt) == pytest.approx((a - b) / dt, rel=1e-12, abs=1e-9)
    expected = (a - 2 * b + c) / dt**2
    assert second_time_derivative(a, b, c, dt) == pytest.approx(expected, rel=1e-9, abs=1e-9 / dt**2)


def test_relative_increment_zero_denominator():
    norm = np.linalg.norm
    assert relative_increment(np.zeros(3), np.zeros(3), norm) == 0.0
    assert relative_increment(np.array([3.0, 4.0]), np.zeros(2), norm) == 5.0
    assert relative_increment(np.array([1.0, 0.0]), np.array([0.0, 2.0]), norm) == 0.5


def test_lifting_field(tiny_disc):
    phi = tiny_disc.phi
    np.testing.assert_array_equal(phi[tiny_disc.q_inlet], 1.0)
    np.testing.assert_array_equal(phi[tiny_disc.q_outlet], 0.0)
    assert phi.min() >= -1e-14 and phi.max() <= 1 + 1e-14
    assert not tiny_disc.lifting(0.0).any()


def test_rest_state(tiny_disc):
    s = TimeState.rest(tiny_disc)
    for arr in (s.u, s.p0, s.p, s.d_s, s.d_s_prev, s.d_f):
        assert not arr.any()
    assert s.i == 0 and s.ell == 0.0


def test_step_mesh_zero_and_uniform_shift(tiny_disc):
    assert not step_mesh(tiny_disc, np.zeros(tiny_disc.Es.n_dofs)).any()
    delta = np.array([0.01, -0.02])
    d_s = np.tile(delta, tiny_disc.Es.n_nodes)
    d_f = step_mesh(tiny_disc, d_s)
    np.testing.assert_array_equal(
        d_f[tiny_disc.ef_interface_dofs].reshape(-1, 2), np.broadcast_to(delta, (len(tiny_disc.ef_interface_nodes), 2))
    )


def test_step_mesh_uses_previous_displacement(tiny_disc):
    state = TimeState.rest(tiny_disc)
    state.d_s = 1e-3 * RNG.standard_normal(tiny_disc.Es.n_dofs)
    state.d_s[tiny_disc.es_clamp_dofs] = 0
    before = step_mesh(tiny_disc, state.d_s)
    new, _, _ = fom_step(tiny_disc, state)
    np.testing.assert_array_equal(new.d_f, before)
    np.testing.assert_array_equal(step_mesh(tiny_disc, state.d_s), before)


def test_rest_fluid_step_is_zero(tiny_disc):
    state = TimeState.rest(tiny_disc)
    u, z, w, its, _ = step_fluid_explicit(tiny_disc, state, np.zeros(tiny_disc.Ef.n_dofs))
    assert not u.any() and not z.any() and not w.any()
    assert its == 0


def test_first_step_draws_inflow(tiny_disc):
    cfg = FsiConfig(dt=1e-5)
    disc = FsiDiscretization(tiny_disc.mesh, cfg)
    state = TimeState.rest(disc)
    state.p = 5.0 * disc.phi
    u, z, _, _, _ = step_fluid_explicit(disc, state, np.zeros(disc.Ef.n_dofs))
    assert inlet_flux(disc, u) < 0
    assert np.abs(z[disc.v_interface_dofs]).max() == 0.0


def test_rest_implicit_loop(tiny_disc):
    state = TimeState.rest(tiny_disc)
    ops = tiny_disc.step_operators(state.d_f)
    res = implicit_loop(tiny_disc, state, state.u, ops, np.zeros(tiny_disc.Q.n_dofs))
    assert res.subiterations == 1
    assert not res.p.any() and not res.d_s.any()


def test_tolerance_monotonicity(tiny_run, tiny_disc):
    # re-run step 20 from the stored trajectory with both tolerances
    tr = tiny_run.trajectory
    k = 20
    state = TimeState(tr.u[:, k - 1], tiny_run.snapshots.S_p[:, k - 1], inlet_pressure(tr.times[k - 1], tiny_disc.cfg),
                      tr.d_s[:, k - 1], tr.d_s[:, k - 2], tr.d_f[:, k - 1], k, tr.p[:, k - 1])
    counts = [fom_step(tiny_disc, state, tol=tol)[2]["subiter"] for tol in (1e-3, 1e-6, 1e-8)]
    assert counts == sorted(counts)
    assert counts[0] < counts[2]


def test_robin_consistency(tiny_disc, tiny_run):
    ops = tiny_disc.step_operators(tiny_run.trajectory.d_f[:, -1])
    assert abs(ops.robin - ops.A - tiny_disc.alpha * tiny_disc.M_gamma).max() <= 1e-14 * abs(ops.robin).max()
    neumann = FsiDiscretization(tiny_disc.mesh, tiny_disc.cfg.replace(rho_f=0.0))
    ops0 = neumann.step_operators(tiny_run.trajectory.d_f[:, -1])
    assert neumann.alpha == 0.0
    assert abs(ops0.robin - ops0.A).max() == 0.0
    assert abs(ops0.A - ops.A).max() == 0.0


def test_identity_map_path_equals_plain(tiny_mesh, tiny_run):
    geom = ChannelGeometry(target_edge_size=0.5)
    cfg = FsiConfig(n_steps=10)
    mapped = run_offline(cfg, tiny_mesh, build_geometric_map(geom, 1.0))
    plain = tiny_run.trajectory
    for name in ("u", "p", "d_s", "d_f"):
        a, b = getattr(mapped.trajectory, name), getattr(plain, name)[:, :10]
        assert np.abs(a - b).max() <= 1e-12 * max(np.abs(b).max(), 1.0)


def test_single_step_run(tiny_mesh, tiny_disc):
    res = run_offline(FsiConfig(n_steps=1), tiny_mesh, disc=tiny_disc)
    s = res.snapshots
    assert s.S_z.shape[1] == s.S_p.shape[1] == s.S_d.shape[1] == 1
    assert np.abs(s.S_d).max() > 0


def test_zero_inflow_gives_zero_snapshots(tiny_mesh):
    res = run_offline(FsiConfig(n_steps=5, inlet_amplitude=0.0), tiny_mesh)
    s = res.snapshots
    assert not s.S_z.any() and not s.S_p.any() and not s.S_d.any()
    assert res.stats.subiterations == [1] * 5


def test_mirror_symmetric_tip_displacement(tiny_long_run, tiny_mesh):
    disc = tiny_long_run.disc
    d = tiny_long_run.trajectory.d_s[:, -1].reshape(-1, 2)
    for x in (1.0, 1.2):
        lo = disc.Es.vertex_to_node[vertex_at(tiny_mesh, x, 1.0)]
        hi = disc.Es.vertex_to_node[vertex_at(tiny_mesh, x, 1.5)]
        assert abs(d[lo, 1]) > 1e-6
        assert abs(d[hi, 1] + d[lo, 1]) <= 1e-8
        assert abs(d[hi, 0] - d[lo, 0]) <= 1e-8


def test_per_step_coupling_invariants(tiny_run, tiny_disc):
    stats = tiny_run.stats
    assert max(stats.subiterations) <= tiny_disc.cfg.max_subiter
    assert all(max(inc) < tiny_disc.cfg.tol for inc in stats.increments)
    assert max(stats.interface_residual) <= 1e-12
    assert np.abs(tiny_run.snapshots.S_z[tiny_disc.v_interface_dofs]).max() <= 1e-12


def test_subiteration_cap_reports_step(tiny_mesh):
    with pytest.raises(TimeStepError) as info:
        run_offline(FsiConfig(n_steps=3, max_subiter=1), tiny_mesh)
    assert info.value.code == "MAX_SUBITER_EXCEEDED"
    assert info.value.step == 0


def test_reconstruct_trajectory(tiny_run, tiny_disc):
    tr = reconstruct_trajectory(tiny_run.snapshots, tiny_disc)
    ref = tiny_run.trajectory
    for name in ("u", "p", "d_s", "d_f"):
        a, b = getattr(tr, name), getattr(ref, name)
        assert np.abs(a - b).max() <= 1e-10 * np.abs(b).max()


def test_snapshot_round_trip(tmp_path, tiny_run):
    paths = write_snapshots(tmp_path, tiny_run.snapshots)
    assert {p.name for p in paths.values()} == set(SNAPSHOT_FILES.values())
    back = read_snapshots(tmp_path)
    s = tiny_run.snapshots
    for name in ("S_z", "S_p", "S_d", "times"):
        np.testing.assert_array_equal(getattr(back, name), getattr(s, name))
    assert (back.dt, back.mu_g, back.mu_s) == (s.dt, s.mu_g, s.mu_s)
    with pytest.raises(OutputExistsError):
        write_snapshots(tmp_path, s)
    write_snapshots(tmp_path, s, overwrite=True)


def test_matrix_header_layout(tmp_path):
    S = np.arange(6.0).reshape(2, 3)
    path = write_matrix(tmp_path / "m.bin", SNAPSHOT_MAGIC, S, 1e-4, 0.9, 2e5)
    raw = path.read_bytes()
    assert struct.unpack_from("<8sIIddd", raw) == (b"FSISNAP1", 2, 3, 1e-4, 0.9, 2e5)
    assert len(raw) == 40 + 48
    got, dt, *_ = read_matrix(path, SNAPSHOT_MAGIC)
    np.testing.assert_array_equal(got, S)
    with pytest.raises(FileFormatError):
        read_matrix(path, b"FSIBASE1")
    (tmp_path / "short.bin").write_bytes(raw[:50])
    with pytest.raises(FileFormatError):
        read_matrix(tmp_path / "short.bin", SNAPSHOT_MAGIC)


def test_stats_round_trip(tmp_path, tiny_run):
    path = write_stats(tmp_path / "stats.csv", tiny_run.stats)
    assert path.read_text().splitlines()[0] == "time_index,subiterations,newton_iterations,wall_ms"
    back = read_stats(path)
    assert back.subiterations == tiny_run.stats.subiterations
    assert back.newton_iterations == tiny_run.stats.newton_iterations
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(FileFormatError):
        read_stats(tmp_path / "bad.csv")


def test_snapshot_set_column_check():
    with pytest.raises(ValueError):
        SnapshotSet(np.zeros((4, 2)), np.zeros((3, 3)), np.zeros((2, 2)), np.zeros(2), 1e-4, 1.0, 1e5)


@pytest.mark.parametrize(
    "change", [dict(dt=0.0), dict(mu_f=-1.0), dict(tol=1.5), dict(max_subiter=0), dict(rho_f=-1.0), dict(n_steps=-1)]
)
def test_config_check(change):
    with pytest.raises(ValueError):
        FsiConfig(**change).check()
