import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import WALLS, observed_rates
from fsirom.errors import (
    NoConvergenceError,
    NonpositiveJacobianError,
    SingularMatrixError,
    SpaceMismatchError,
)
from fsirom.fem import (
    CellMap,
    Family,
    Field,
    FormKind,
    FunctionSpace,
    NormKind,
    apply_dirichlet,
    assemble_bilinear,
    gram_matrix,
    is_symmetric,
    newton_solve,
    solve_sparse,
)
from fsirom.mesh import BoundaryTag, Mesh, Region, rectangle_mesh
from fsirom.offline import FluidStepForm, TimeState, step_fluid_explicit

RNG = np.random.default_rng(1234)


@pytest.fixture(scope="module")
def square():
    return rectangle_mesh(6, 5, 1.0, 1.0)


def unit_triangle():
    return Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]), np.array([Region.FLUID]))


def test_p1_mass_element_matrix():
    space = FunctionSpace(unit_triangle(), Family.P1_SCALAR)
    M = assemble_bilinear(FormKind.MASS, space).toarray()
    np.testing.assert_allclose(M, 0.5 / 12 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]), rtol=1e-14)


def test_dof_counts(square):
    edges, _, _ = square.edge_table()
    assert FunctionSpace(square, Family.P1_SCALAR).n_dofs == square.n_vertices
    assert FunctionSpace(square, Family.P1_VECTOR).n_dofs == 2 * square.n_vertices
    assert FunctionSpace(square, Family.P2_VECTOR).n_dofs == 2 * (square.n_vertices + len(edges))


def test_spaces_are_restricted_to_their_region(tiny_mesh):
    Es = FunctionSpace(tiny_mesh, Family.P1_VECTOR, Region.SOLID)
    assert set(Es.vertices) == set(np.unique(tiny_mesh.triangles[tiny_mesh.region == Region.SOLID]))


def test_laplace_rows_sum_to_zero(square):
    A = assemble_bilinear(FormKind.STIFFNESS_LAPLACE, FunctionSpace(square, Family.P1_SCALAR))
    assert np.abs(A @ np.ones(A.shape[0])).max() <= 1e-12


def test_pressure_laplace_matches_stiffness_on_undeformed_mesh(tiny_disc):
    Q = tiny_disc.Q
    A = assemble_bilinear(FormKind.STIFFNESS_LAPLACE, Q)
    B = assemble_bilinear(FormKind.PRESSURE_LAPLACE, Q, cmap=CellMap.identity(Q.n_cells))
    assert abs(A - B).max() <= 1e-12


@pytest.mark.parametrize("family", [Family.P1_SCALAR, Family.P2_VECTOR])
def test_mass_pd_and_laplace_psd(square, family):
    space = FunctionSpace(square, family)
    M = assemble_bilinear(FormKind.MASS, space)
    K = assemble_bilinear(FormKind.STIFFNESS_LAPLACE, space)
    assert is_symmetric(M) and is_symmetric(K)
    assert np.linalg.eigvalsh(M.toarray()).min() > 0
    assert np.linalg.eigvalsh(K.toarray()).min() > -1e-12 * abs(K).max()


def test_full_constraint_returns_values(square):
    A = assemble_bilinear(FormKind.STIFFNESS_LAPLACE, FunctionSpace(square, Family.P1_SCALAR))
    vals = RNG.standard_normal(A.shape[0])
    A2, b2 = apply_dirichlet(A, np.zeros(A.shape[0]), np.arange(A.shape[0]), vals)
    np.testing.assert_allclose(solve_sparse(A2, b2), vals, rtol=0, atol=1e-14)


def test_laplace_linear_profile(square):
    space = FunctionSpace(square, Family.P1_SCALAR)
    A = assemble_bilinear(FormKind.STIFFNESS_LAPLACE, space)
    left = space.boundary_dofs(BoundaryTag.INLET)
    right = space.boundary_dofs(BoundaryTag.OUTLET)
    dofs = np.concatenate([left, right])
    vals = np.concatenate([np.zeros(len(left)), np.ones(len(right))])
    u = solve_sparse(*apply_dirichlet(A, np.zeros(space.n_dofs), dofs, vals))
    np.testing.assert_allclose(u, space.node_coords[:, 0], atol=1e-12)
    assert u.max() <= 1 + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_dirichlet_values_are_met_and_symmetry_kept(data):
    mesh = rectangle_mesh(4, 3)
    space = FunctionSpace(mesh, Family.P1_SCALAR)
    A = assemble_bilinear(FormKind.MASS, space) + assemble_bilinear(FormKind.STIFFNESS_LAPLACE, space)
    n = space.n_dofs
    dofs = np.array(sorted(data.draw(st.sets(st.integers(0, n - 1), min_size=1, max_size=n))))
    vals = np.array(data.draw(st.lists(st.floats(-10, 10), min_size=len(dofs), max_size=len(dofs))))
    b = np.array(data.draw(st.lists(st.floats(-10, 10), min_size=n, max_size=n)))
    A2, b2 = apply_dirichlet(A, b, dofs, vals)
    assert is_symmetric(A2)
    x = solve_sparse(A2, b2)
    np.testing.assert_allclose(x[dofs], vals, rtol=0, atol=1e-12)
    free = np.setdiff1d(np.arange(n), dofs)
    np.testing.assert_allclose((A @ x - b)[free], 0, atol=1e-9 * (1 + np.abs(b).max()))


def test_zero_constraint_keeps_symmetry(square):
    A = assemble_bilinear(FormKind.STIFFNESS_LAPLACE, FunctionSpace(square, Family.P1_SCALAR))
    A2, _ = apply_dirichlet(A, np.ones(A.shape[0]), [0, 3, 5], 0.0)
    assert is_symmetric(A2)


def test_solve_identity_and_two_by_two():
    b = RNG.standard_normal(5)
    np.testing.assert_array_equal(solve_sparse(sp.identity(5), b), b)
    np.testing.assert_allclose(solve_sparse(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), [1.0, 1.0]), [1 / 3, 1 / 3], rtol=1e-15)


def test_random_spd_residual_bound():
    M = RNG.standard_normal((200, 200))
    A = sp.csr_matrix(M @ M.T + 200 * np.eye(200))
    b = RNG.standard_normal(200)
    x = solve_sparse(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * (sp.linalg.norm(A, np.inf) * np.linalg.norm(x) + np.linalg.norm(b))


def test_singular_matrix_is_reported():
    with pytest.raises(SingularMatrixError):
        solve_sparse(sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]])), [1.0, 2.0])


def test_newton_linear_one_iteration():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -1.0])
    res = newton_solve(lambda x: A @ x - b, lambda x: A, np.zeros(2))
    assert res.iterations == 1
    np.testing.assert_allclose(A @ res.x, b)


def test_newton_scalar_quadratic():
    res = newton_solve(lambda x: x**2 - 4, lambda x: np.diag(2 * x), np.array([3.0]), tol=1e-12)
    assert res.iterations <= 6
    assert abs(res.x[0] - 2) <= 1e-12


def test_newton_reports_non_convergence():
    with pytest.raises(NoConvergenceError):
        newton_solve(lambda x: x**2 + 1, lambda x: np.diag(2 * x), np.array([3.0]), max_iter=5)


def test_fluid_rest_state_is_an_exact_root(tiny_disc):
    state = TimeState.rest(tiny_disc)
    u, z, _, its, _ = step_fluid_explicit(tiny_disc, state, np.zeros(tiny_disc.Ef.n_dofs))
    assert its <= 1
    assert not u.any() and not z.any()


def test_fluid_jacobian_matches_finite_differences(tiny_disc):
    d = tiny_disc
    df = 1e-2 * RNG.standard_normal(d.Ef.n_dofs)
    df[d.Ef.node_dofs(d.ef_zero_nodes)] = 0.0
    ops = d.step_operators(df)
    form = FluidStepForm(ops, RNG.standard_normal(d.V.n_dofs), RNG.standard_normal(d.V.n_dofs), RNG.standard_normal(d.Q.n_dofs))
    u = 10 * RNG.standard_normal(d.V.n_dofs)
    J = form.jacobian(u)
    for _ in range(3):
        v = RNG.standard_normal(d.V.n_dofs)
        eps = 1e-6
        fd = (form.residual(u + eps * v) - form.residual(u)) / eps
        jv = J @ v
        assert np.linalg.norm(fd - jv) <= 1e-5 * np.linalg.norm(jv)


def test_fluid_area_gram(tiny_disc):
    one = np.ones(tiny_disc.Q.n_dofs)
    assert abs(tiny_disc.X_p.inner(one, one) - 24.6) <= 1e-12


def test_h1_semi_of_constant_vanishes(tiny_disc):
    X = gram_matrix(tiny_disc.Q, NormKind.H1_SEMI)
    assert abs(X.inner(np.full(tiny_disc.Q.n_dofs, 3.0), np.full(tiny_disc.Q.n_dofs, 3.0))) <= 1e-12


def test_h1_is_l2_plus_semi(tiny_disc):
    V = tiny_disc.V
    L2, H1, semi = (gram_matrix(V, k) for k in (NormKind.L2, NormKind.H1, NormKind.H1_SEMI))
    for _ in range(5):
        u = RNG.standard_normal(V.n_dofs)
        lhs = H1.inner(u, u)
        assert abs(lhs - L2.inner(u, u) - semi.inner(u, u)) <= 1e-12 * lhs


def test_h1_semi_is_definite_on_clamped_space(tiny_disc):
    d = tiny_disc
    K = d.X_d_semi.X.toarray()[np.ix_(d.es_free, d.es_free)]
    assert np.linalg.eigvalsh(K).min() > 0


def test_patch_test_linear_and_quadratic(square):
    lin = lambda xy: 1.5 - 2.0 * xy[..., 0] + 0.7 * xy[..., 1]  # noqa: E731
    quad = lambda xy: np.stack([xy[..., 0] ** 2 - xy[..., 1], xy[..., 0] * xy[..., 1]], axis=-1)  # noqa: E731
    P1 = FunctionSpace(square, Family.P1_SCALAR)
    assert np.abs(P1.evaluate(P1.interpolate(lin)) - lin(P1.quadrature_points())).max() <= 1e-13
    P2 = FunctionSpace(square, Family.P2_VECTOR)
    assert np.abs(P2.evaluate(P2.interpolate(quad)) - quad(P2.quadrature_points())).max() <= 1e-13


def test_poisson_rates():
    ns = [8, 16, 32, 64]
    _, r1 = observed_rates(ns, Family.P1_SCALAR)
    _, r2 = observed_rates(ns, Family.P2_SCALAR)
    assert np.all((r1 >= 1.8) & (r1 <= 2.2)), r1
    assert np.all((r2 >= 2.8) & (r2 <= 3.3)), r2


def test_field_validation(square):
    space = FunctionSpace(square, Family.P1_SCALAR)
    with pytest.raises(SpaceMismatchError):
        Field(space, np.zeros(space.n_dofs + 1))
    with pytest.raises(ValueError):
        Field(space, np.full(space.n_dofs, np.nan))


def test_space_mismatch_between_regions(tiny_mesh):
    fluid = FunctionSpace(tiny_mesh, Family.P1_SCALAR, Region.FLUID)
    solid = FunctionSpace(tiny_mesh, Family.P1_SCALAR, Region.SOLID)
    with pytest.raises(SpaceMismatchError):
        assemble_bilinear(FormKind.MASS, fluid, solid)


def test_nonpositive_jacobian_is_reported():
    F = np.broadcast_to(np.diag([-1.0, 1.0]), (3, 2, 2))
    with pytest.raises(NonpositiveJacobianError):
        CellMap(F)


def test_symmetric_flag_threshold():
    A = sp.csr_matrix(np.array([[1.0, 1e-3], [0.0, 1.0]]))
    assert not is_symmetric(A)
    assert is_symmetric(sp.csr_matrix(np.array([[1.0, 2.0], [2.0 + 1e-14, 1.0]])))


def test_wall_tags_cover_square_boundary(square):
    space = FunctionSpace(square, Family.P1_SCALAR)
    b = space.boundary_dofs(*WALLS)
    xy = space.node_coords[b]
    on = np.isclose(xy[:, 0], 0) | np.isclose(xy[:, 0], 1) | np.isclose(xy[:, 1], 0) | np.isclose(xy[:, 1], 1)
    assert on.all() and len(b) == 2 * (6 + 5)
