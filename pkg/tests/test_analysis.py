import numpy as np
import pytest

from eddy2d.analysis import (Ball, BranchConstants, NormKind, NormSpec,
                             analytic_limit_solution, branch_constants,
                             current_density, field_error, norm,
                             recover_magnetic_field, region_average,
                             select_triangles, total_current,
                             triangle_gradients, truncated_limit_solution,
                             weight_rho)
from eddy2d.fem import (EPSILON_PROBLEM, Field, GaugeMode, MaterialParams,
                        apply_gauge, assemble, assemble_thin_source, solve)
from eddy2d.harness import _tiny_tagged_mesh
from eddy2d.mesh import Mesh, Region


def unit_square(n=4):
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    tris = []
    for i in range(n):
        for j in range(n):
            a = i * (n + 1) + j
            b = (i + 1) * (n + 1) + j
            tris.append([a, b, a + 1])
            tris.append([b, b + 1, a + 1])
    tris = np.asarray(tris)
    region = np.full(len(tris), int(Region.EXTERIOR))
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    uniq, cnt = np.unique(np.sort(e, axis=1), axis=0, return_counts=True)
    return Mesh(nodes, tris, region, uniq[cnt == 1])


def test_weight_rho_values():
    assert weight_rho(np.array([0.0, 0.0])) == pytest.approx(1.0 / np.log(2.0))
    assert weight_rho(np.array([1.0, 0.0])) == pytest.approx(1.0 / (2.0 * np.log(3.0)))
    assert weight_rho(np.array([0.0, -1.0])) == weight_rho(np.array([1.0, 0.0]))
    grid = weight_rho(np.zeros((5, 3, 2)))
    assert grid.shape == (5, 3)
    # radially decreasing
    r = np.column_stack([np.linspace(0, 50, 200), np.zeros(200)])
    assert (np.diff(weight_rho(r)) < 0).all()


def test_norm_spec_validation():
    NormSpec(NormKind.LP_GRADIENT, p=1.0)
    NormSpec(NormKind.LP_GRADIENT, p=2.0)
    for bad in (0.5, 2.5):
        with pytest.raises(ValueError, match="LP_GRADIENT"):
            NormSpec(NormKind.LP_GRADIENT, p=bad)


def test_select_triangles():
    m = unit_square()
    assert select_triangles(m, "all").all()
    ball = select_triangles(m, Ball((0.0, 0.0), 0.3))
    assert 0 < ball.sum() < m.n_triangles
    cut = select_triangles(m, "all", exclude=(Ball((0.0, 0.0), 0.3),))
    assert not (ball & cut).any()
    assert select_triangles(m, Region.EXTERIOR).all()
    with pytest.raises(ValueError, match="unknown subdomain"):
        select_triangles(m, "everywhere")
    with pytest.raises(ValueError, match="selects no triangles"):
        select_triangles(m, Region.OMEGA1)
    with pytest.raises(ValueError, match="selects no triangles"):
        select_triangles(m, "all", exclude=(Ball((0.5, 0.5), 10.0),))


def test_value_norms_exact_for_linears():
    m = unit_square()
    x = m.nodes[:, 0]
    # midpoint rule is degree-2 exact: int x^2 = 1/3, int x = 1/2
    spec = NormSpec(NormKind.L2_REGION)
    assert norm(m, x, spec) == pytest.approx(np.sqrt(1.0 / 3.0), rel=1e-14)
    assert norm(m, np.full(m.n_nodes, 2.5), spec) == pytest.approx(2.5, rel=1e-14)
    assert norm(m, x, NormSpec(NormKind.L1_REGION)) == pytest.approx(0.5, rel=1e-14)
    # complex values measure by modulus
    assert norm(m, 3j * x, spec) == pytest.approx(3 * np.sqrt(1.0 / 3.0), rel=1e-14)


def test_weighted_norm_matches_hand_quadrature():
    m = unit_square(1)
    f = np.ones(m.n_nodes)
    want = 0.0
    for t in range(m.n_triangles):
        for mid in m.edge_midpoints[t]:
            want += (m.areas[t] / 3.0) * weight_rho(mid) ** 2
    spec = NormSpec(NormKind.WEIGHTED_L2_RHO)
    assert norm(m, f, spec) == pytest.approx(np.sqrt(want), rel=1e-14)


def test_gradient_norms_exact_for_linears():
    m = unit_square()
    f = 3.0 * m.nodes[:, 0] - 4.0 * m.nodes[:, 1]
    assert norm(m, f, NormSpec(NormKind.LP_GRADIENT, p=2.0)) == pytest.approx(5.0, rel=1e-14)
    assert norm(m, f, NormSpec(NormKind.LP_GRADIENT, p=1.0)) == pytest.approx(5.0, rel=1e-14)
    p = 1.5
    assert norm(m, f, NormSpec(NormKind.LP_GRADIENT, p=p)) == pytest.approx(
        5.0, rel=1e-14)  # area 1: (int 5^p)^(1/p) = 5
    g = triangle_gradients(m, f.astype(complex))
    np.testing.assert_allclose(g[:, 0].real, 3.0, rtol=1e-14)
    np.testing.assert_allclose(g[:, 1].real, -4.0, rtol=1e-14)


def test_gauge_mod_removes_constants():
    m = unit_square()
    f = np.sin(3.0 * m.nodes[:, 0]) + 0.5 * m.nodes[:, 1]
    spec = NormSpec(NormKind.L2_REGION, gauge_mod=True)
    a = norm(m, f, spec)
    b = norm(m, f + 7.25, spec)
    assert a == pytest.approx(b, rel=1e-12)
    assert norm(m, np.full(m.n_nodes, 4.0), spec) < 1e-14


def test_region_average():
    m = unit_square()
    x = m.nodes[:, 0]
    assert region_average(m, x, Region.EXTERIOR) == pytest.approx(0.5, rel=1e-14)
    with pytest.raises(ValueError, match="OMEGA0 is empty"):
        region_average(m, x, Region.OMEGA0)


def test_branch_constants_algebra():
    p = MaterialParams(sigma=2.0, mu=1.5, omega=0.7, current=3.0)
    c = branch_constants(p, (0.25j, 1.0 + 1.0j, -1.0j), (2.0, 4.0))
    assert c.C0 == pytest.approx(0.7j * 0.25j)
    assert c.C1 == pytest.approx(0.7j * (1.0 + 1.0j) + 3.0 / (2.0 * 2.0))
    assert c.C2 == pytest.approx(0.7j * (-1.0j) - 3.0 / (2.0 * 4.0))
    with pytest.raises(ValueError, match="measures must be positive"):
        branch_constants(p, (0j, 0j, 0j), (0.0, 1.0))


@pytest.fixture(scope="module")
def solved_tiny():
    mesh = _tiny_tagged_mesh()
    params = MaterialParams(sigma=2.0, mu=1.5, omega=0.7, current=3.0)
    system = apply_gauge(assemble(mesh, params, EPSILON_PROBLEM),
                         GaugeMode.OMEGA0_MEAN)
    f, _ = solve(system, assemble_thin_source(mesh, params))
    return mesh, params, f


def test_current_density_and_totals(solved_tiny):
    mesh, params, f = solved_tiny
    avgs = tuple(region_average(mesh, f, r)
                 for r in (Region.OMEGA0, Region.OMEGA1, Region.OMEGA2))
    meas = tuple(float(sum(mesh.areas[mesh.region == int(r)]))
                 for r in (Region.OMEGA1, Region.OMEGA2))
    c = branch_constants(params, avgs, meas)
    J = current_density(mesh, f, params, c)
    assert total_current(mesh, J, Region.OMEGA1) == pytest.approx(
        params.current, rel=1e-10)
    assert total_current(mesh, J, Region.OMEGA2) == pytest.approx(
        -params.current, rel=1e-10)
    assert abs(total_current(mesh, J, Region.OMEGA0)) < 1e-10 * params.current
    assert not J[mesh.region == int(Region.EXTERIOR)].any()


def test_current_density_rejects_stale_constants(solved_tiny):
    mesh, params, f = solved_tiny
    stale = BranchConstants(C0=0j, C1=1.0 + 0j, C2=-1.0 + 0j)
    with pytest.raises(ValueError, match="does not match the field's"):
        current_density(mesh, f, params, stale)


def test_total_current_exact_and_empty():
    m = _tiny_tagged_mesh()
    J = np.ones((m.n_triangles, 3), dtype=complex)
    a1 = float(sum(m.areas[m.region == int(Region.OMEGA1)]))
    assert total_current(m, J, Region.OMEGA1) == pytest.approx(a1, rel=1e-14)
    sq = unit_square()
    with pytest.raises(ValueError, match="OMEGA1 is empty"):
        total_current(sq, np.ones((sq.n_triangles, 3), dtype=complex),
                      Region.OMEGA1)


def test_recover_magnetic_field():
    m = unit_square()
    u = 2.0 * m.nodes[:, 0] + 5.0 * m.nodes[:, 1]
    H = recover_magnetic_field(m, u.astype(complex), mu=2.0)
    np.testing.assert_allclose(H[:, 0].real, 2.5, rtol=1e-14)
    np.testing.assert_allclose(H[:, 1].real, -1.0, rtol=1e-14)


def test_analytic_limit_solution():
    z1, z2, mu_I = (1.0, 0.0), (-1.0, 0.0), 2.0
    # odd under x -> -x when the sources are antipodal
    pts = np.array([[0.3, 1.1], [2.0, -0.7], [0.0, 4.0]])
    u = analytic_limit_solution(z1, z2, mu_I, pts)
    u_neg = analytic_limit_solution(z1, z2, mu_I, -pts)
    np.testing.assert_allclose(u_neg, -u, rtol=1e-14, atol=1e-16)
    assert analytic_limit_solution(z1, z2, mu_I, np.array([0.0, 2.0])) == 0.0
    assert isinstance(u[2], float) or u.dtype == float
    with pytest.raises(ValueError, match="source point"):
        analytic_limit_solution(z1, z2, mu_I, np.array([1.0, 0.0]))


def test_truncated_solution_has_zero_neumann_data():
    z1, z2, mu_I, R = (1.0, 0.0), (-1.0, 0.0), 2.0, 5.0
    dr = 1e-6
    for th in np.linspace(0.1, 2 * np.pi, 7):
        n_hat = np.array([np.cos(th), np.sin(th)])
        up = truncated_limit_solution(z1, z2, mu_I, R, (R + dr) * n_hat)
        dn = truncated_limit_solution(z1, z2, mu_I, R, (R - dr) * n_hat)
        assert abs(up - dn) / (2 * dr) < 1e-8
        # the free-space potential alone does not satisfy it
        fp = analytic_limit_solution(z1, z2, mu_I, (R + dr) * n_hat)
        fn = analytic_limit_solution(z1, z2, mu_I, (R - dr) * n_hat)
        assert abs(fp - fn) / (2 * dr) > 1e-3


def test_truncated_solution_stays_odd():
    z1, z2, mu_I, R = (0.0, 1.5), (0.0, -1.5), 3.0, 10.0
    pts = np.array([[0.3, 1.1], [2.0, -0.7], [5.0, 5.0]])
    u = truncated_limit_solution(z1, z2, mu_I, R, pts)
    u_neg = truncated_limit_solution(z1, z2, mu_I, R, -pts)
    np.testing.assert_allclose(u_neg, -u, rtol=1e-13, atol=1e-15)


def test_field_error_callable_matches_nodal():
    m = unit_square()
    f = Field(m, (m.nodes[:, 0] ** 2 + 1j * m.nodes[:, 1]).astype(complex))
    lin = lambda p: 2.0 * p[..., 0] - p[..., 1]
    g_nodal = Field(m, lin(m.nodes).astype(complex))
    spec = NormSpec(NormKind.L2_REGION)
    a = field_error(m, f, g_nodal, spec)
    b = field_error(m, f, lin, spec)
    assert a == pytest.approx(b, rel=1e-13)
    # identical fields differ by zero
    assert field_error(m, f, f, spec) == 0.0


def test_field_error_gauge_mod():
    m = unit_square()
    f = Field(m, np.sin(m.nodes[:, 0]).astype(complex))
    shifted = Field(m, f.values + (3.0 - 4.0j))
    spec = NormSpec(NormKind.L2_REGION, gauge_mod=True)
    assert field_error(m, f, shifted, spec) < 1e-13


def test_field_error_rejections():
    m = unit_square()
    f = Field(m, np.zeros(m.n_nodes, dtype=complex))
    spec = NormSpec(NormKind.L2_REGION)
    with pytest.raises(ValueError, match="shape"):
        field_error(m, f, np.zeros(3), spec)
    with np.errstate(divide="ignore", invalid="ignore"):
        with pytest.raises(ValueError, match="not finite at quadrature point"):
            field_error(m, f, lambda p: np.log(p[..., 0] - 0.5), spec)
    with pytest.raises(ValueError, match="nodal Field"):
        field_error(m, f, lambda p: p[..., 0],
                    NormSpec(NormKind.LP_GRADIENT, p=2.0))


def test_field_error_gradient_norm():
    m = unit_square()
    f = Field(m, (m.nodes[:, 0] + 3.0 * m.nodes[:, 1]).astype(complex))
    g = Field(m, (2.0 * m.nodes[:, 0] + 3.0 * m.nodes[:, 1]).astype(complex))
    err = field_error(m, f, g, NormSpec(NormKind.LP_GRADIENT, p=2.0))
    assert err == pytest.approx(1.0, rel=1e-13)
