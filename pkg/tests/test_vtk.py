import numpy as np
import pytest

from fsirom.cli import export_fields
from fsirom.errors import FileFormatError, OutputExistsError
from fsirom.offline import Trajectory
from fsirom.vtk import point_values, read_vtk, write_vtk


def _zero_trajectory(disc):
    z = lambda s: np.zeros((s.n_dofs, 1))  # noqa: E731
    return Trajectory(z(disc.V), z(disc.Q), z(disc.Es), z(disc.Ef), np.array([1e-4]))


def test_zero_field_export(tmp_path, tiny_disc):
    path = export_fields(tmp_path / "zero.vtk", tiny_disc, _zero_trajectory(tiny_disc), 0)
    pts, tris, pdata, cdata = read_vtk(path)
    mesh = tiny_disc.mesh
    np.testing.assert_array_equal(pts[:, :2], mesh.vertices)
    np.testing.assert_array_equal(tris, mesh.triangles)
    assert set(pdata) == {"velocity", "pressure", "displacement"}
    assert all(not v.any() for v in pdata.values())
    np.testing.assert_array_equal(cdata["region"], mesh.region)


def test_p2_velocity_is_subsampled_at_vertices(tiny_disc):
    V = tiny_disc.V
    f = lambda xy: np.column_stack([xy[:, 0] ** 2, xy[:, 1]])  # noqa: E731
    vals = point_values(V, V.interpolate(f))
    fluid = V.vertices
    np.testing.assert_allclose(vals[fluid], f(tiny_disc.mesh.vertices[fluid]), atol=1e-14)
    solid_only = np.setdiff1d(np.arange(tiny_disc.mesh.n_vertices), fluid)
    assert not vals[solid_only].any()


def test_deformed_with_zero_displacement_is_identical(tmp_path, tiny_disc):
    tr = _zero_trajectory(tiny_disc)
    a = export_fields(tmp_path / "a.vtk", tiny_disc, tr, 0, deformed=False)
    b = export_fields(tmp_path / "b.vtk", tiny_disc, tr, 0, deformed=True)
    assert a.read_bytes() == b.read_bytes()


def test_deformed_points_move(tmp_path, tiny_run, tiny_disc):
    path = export_fields(tmp_path / "d.vtk", tiny_disc, tiny_run.trajectory, -1, deformed=True)
    pts, _, pdata, _ = read_vtk(path)
    np.testing.assert_allclose(pts[:, :2], tiny_disc.mesh.vertices + pdata["displacement"][:, :2], atol=1e-14)
    # d_f on fluid vertices (interface included), d_s on the rest of the solid
    Es, Ef = tiny_disc.Es, tiny_disc.Ef
    df = point_values(Ef, tiny_run.trajectory.d_f[:, -1])
    ds = point_values(Es, tiny_run.trajectory.d_s[:, -1])
    solid_only = np.setdiff1d(Es.vertices, Ef.vertices)
    np.testing.assert_array_equal(pdata["displacement"][Ef.vertices, :2], df[Ef.vertices])
    np.testing.assert_array_equal(pdata["displacement"][solid_only, :2], ds[solid_only])


def test_write_errors(tmp_path, tiny_mesh):
    path = write_vtk(tmp_path / "m.vtk", tiny_mesh)
    with pytest.raises(OutputExistsError):
        write_vtk(path, tiny_mesh)
    write_vtk(path, tiny_mesh, overwrite=True)
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "n.vtk", tiny_mesh, point_data={"bad": np.zeros(3)})
    (tmp_path / "x.vtk").write_text("not vtk\n")
    with pytest.raises(FileFormatError):
        read_vtk(tmp_path / "x.vtk")
