import numpy as np
import pytest

from eddy2d import fem
from eddy2d.fem import (EPSILON_PROBLEM, LIMIT_PROBLEM, Field, GaugeError,
                        GaugeMode, MaterialParams, SolverError,
                        adjoint_epsilon, adjoint_limit, apply_gauge, assemble,
                        assemble_dirac_load, assemble_thin_source,
                        assemble_weighted_source, default_gauges, read_field,
                        region_load_vector, region_mass_matrix, solve,
                        sesquilinear_apply, stiffness_matrix, write_field)
from eddy2d.harness import _tiny_tagged_mesh
from eddy2d.mesh import Mesh, Region

PARAMS = MaterialParams(sigma=2.0, mu=1.5, omega=0.7, current=3.0)


@pytest.fixture(scope="module")
def tiny():
    return _tiny_tagged_mesh()


def one_triangle():
    nodes = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
    return Mesh(nodes, [[0, 1, 2]], [int(Region.OMEGA1)],
                [[0, 1], [1, 2], [2, 0]])


def test_material_params():
    assert PARAMS.beta == pytest.approx(0.7 * 1.5 * 2.0)
    assert PARAMS.mu_I == pytest.approx(4.5)
    with pytest.raises(ValueError):
        MaterialParams(sigma=-1.0, mu=1.0, omega=1.0, current=1.0)
    with pytest.raises(ValueError):
        MaterialParams(sigma=1.0, mu=1.0, omega=-2.0, current=1.0)


def test_stiffness_on_reference_triangle():
    m = one_triangle()
    K = stiffness_matrix(m).toarray()
    want = 0.5 * np.array([[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0],
                           [-1.0, 0.0, 1.0]])
    np.testing.assert_allclose(K, want, atol=1e-15)


def test_mass_and_load_on_reference_triangle():
    m = one_triangle()
    M = region_mass_matrix(m, Region.OMEGA1).toarray()
    want = (0.5 / 12.0) * np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0],
                                    [1.0, 1.0, 2.0]])
    np.testing.assert_allclose(M, want, rtol=1e-14)
    v = region_load_vector(m, Region.OMEGA1)
    np.testing.assert_allclose(v, [0.5 / 3] * 3, rtol=1e-14)
    assert region_load_vector(m, Region.OMEGA0).sum() == 0.0


def test_thin_source_sums_to_zero(tiny):
    b = assemble_thin_source(tiny, PARAMS)
    assert abs(b.sum()) < 1e-15 * abs(PARAMS.mu_I)
    # +mu I on region 1, -mu I on region 2
    m1 = region_load_vector(tiny, Region.OMEGA1)
    assert b @ np.ones(tiny.n_nodes) == pytest.approx(0.0, abs=1e-15)
    assert (b[m1 > 0] > 0).all()


def test_dirac_load_barycentric(tiny):
    z1, z2 = (0.51, 0.52), (-0.5, -0.5)
    b = assemble_dirac_load(tiny, z1, z2, 2.0)
    assert b.sum() == pytest.approx(0.0, abs=1e-14)
    # linear reproduction: sum_i b_i f(x_i) = mu_I (f(z1) - f(z2)) for P1 f
    f = 0.3 * tiny.nodes[:, 0] - 1.1 * tiny.nodes[:, 1] + 0.7
    want = 2.0 * ((0.3 * z1[0] - 1.1 * z1[1]) - (0.3 * z2[0] - 1.1 * z2[1]))
    assert b @ f == pytest.approx(want, rel=1e-13)
    assert np.count_nonzero(b) <= 6
    # degenerate cases collapse to the zero load
    assert not assemble_dirac_load(tiny, z1, z1, 2.0).any()
    assert not assemble_dirac_load(tiny, z1, z2, 0.0).any()


def test_weighted_source_is_weighted_quadrature(tiny):
    psi = Field(tiny, (tiny.nodes[:, 0] + 2j * tiny.nodes[:, 1]).astype(complex))
    b = assemble_weighted_source(tiny, psi)
    # against a brute-force midpoint quadrature of rho^2 psi lambda_i
    from eddy2d.analysis import p1_midpoint_values, weight_rho
    rho2 = weight_rho(tiny.edge_midpoints) ** 2
    psim = p1_midpoint_values(tiny, psi.values)
    want = np.zeros(tiny.n_nodes, dtype=complex)
    w = tiny.areas / 3.0
    lam = 0.5  # each hat function is 1/2 at the two adjacent edge midpoints
    for t, tri in enumerate(tiny.triangles):
        for loc, i in enumerate(tri):
            for e in range(3):
                if e != loc:
                    want[i] += w[t] * rho2[t, e] * psim[t, e] * lam
    np.testing.assert_allclose(b, want, rtol=1e-12, atol=1e-16)


def test_default_gauge_policy():
    beta_pos = PARAMS
    beta_zero = MaterialParams(sigma=2.0, mu=1.5, omega=0.0, current=3.0)
    assert default_gauges(EPSILON_PROBLEM, beta_pos, True) == (GaugeMode.OMEGA0_MEAN,)
    assert default_gauges(EPSILON_PROBLEM, beta_pos, False) == (GaugeMode.FAR_RING_MEAN,)
    assert default_gauges(EPSILON_PROBLEM, beta_zero, True) == (
        GaugeMode.OMEGA0_MEAN, GaugeMode.FAR_RING_MEAN)
    with pytest.raises(GaugeError):
        default_gauges(EPSILON_PROBLEM, beta_zero, False)
    assert default_gauges(LIMIT_PROBLEM, beta_pos, True) == ()
    assert default_gauges(LIMIT_PROBLEM, beta_pos, False) == (GaugeMode.FAR_RING_MEAN,)


def test_apply_gauge_errors(tiny):
    s = assemble(tiny, PARAMS, EPSILON_PROBLEM)
    g = apply_gauge(s, GaugeMode.OMEGA0_MEAN)
    with pytest.raises(GaugeError, match="already"):
        apply_gauge(g, GaugeMode.OMEGA0_MEAN)
    assert apply_gauge(s, GaugeMode.NONE) is s


def test_beta_zero_requires_double_gauge(tiny):
    p0 = MaterialParams(sigma=1.0, mu=1.0, omega=0.0, current=1.0)
    s = assemble(tiny, p0, EPSILON_PROBLEM)
    s1 = apply_gauge(s, GaugeMode.OMEGA0_MEAN)
    with pytest.raises(GaugeError, match="gauge"):
        solve(s1, assemble_thin_source(tiny, p0))
    s2 = apply_gauge(s1, GaugeMode.FAR_RING_MEAN)
    f, rep = solve(s2, assemble_thin_source(tiny, p0))
    assert rep.relative_residual < 1e-10


def test_solve_matches_dense_oracle(tiny):
    from eddy2d.harness import _dense_oracle_solution
    psi = Field(tiny, np.ones(tiny.n_nodes, dtype=complex))
    thin = assemble_thin_source(tiny, PARAMS)
    dirac = assemble_dirac_load(tiny, (0.5, 0.5), (-0.5, -0.5), PARAMS.mu_I)
    wsrc = assemble_weighted_source(tiny, psi)
    for kind, load in ((EPSILON_PROBLEM, thin), (LIMIT_PROBLEM, dirac),
                       (adjoint_epsilon(psi), wsrc), (adjoint_limit(psi), wsrc)):
        system = assemble(tiny, PARAMS, kind)
        gauges = default_gauges(kind, PARAMS, has_omega0=True)
        for g in gauges:
            system = apply_gauge(system, g)
        f, rep = solve(system, load)
        dense = _dense_oracle_solution(assemble(tiny, PARAMS, kind), load, gauges)
        assert np.abs(f.values - dense).max() < 1e-10, kind
        assert rep.relative_residual < 1e-10


def test_aux_unknowns_are_region_averages(tiny):
    system = assemble(tiny, PARAMS, EPSILON_PROBLEM)
    system = apply_gauge(system, GaugeMode.OMEGA0_MEAN)
    f, _ = solve(system, assemble_thin_source(tiny, PARAMS))
    aux = dict(f.aux)
    for k, reg in enumerate((Region.OMEGA1, Region.OMEGA2), start=1):
        m = region_load_vector(tiny, reg)
        avg = (m @ f.values) / m.sum()
        assert abs(aux[k] - avg) < 1e-12


def test_zero_load_fast_path(tiny):
    system = assemble(tiny, PARAMS, EPSILON_PROBLEM)
    system = apply_gauge(system, GaugeMode.OMEGA0_MEAN)
    f, rep = solve(system, np.zeros(tiny.n_nodes, dtype=complex))
    assert not f.values.any()
    assert rep.factorization == "trivial"


def test_unreachable_tolerance_is_a_solver_error(tiny):
    system = assemble(tiny, PARAMS, EPSILON_PROBLEM)
    system = apply_gauge(system, GaugeMode.OMEGA0_MEAN)
    with pytest.raises(SolverError):
        solve(system, assemble_thin_source(tiny, PARAMS), tol=1e-30)


def test_sesquilinear_matches_matrix(tiny):
    rng = np.random.default_rng(7)
    system = assemble(tiny, PARAMS, EPSILON_PROBLEM)
    n = tiny.n_nodes
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    w = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    a_vw = sesquilinear_apply(system, Field(tiny, v), Field(tiny, w))
    D = system.stiffness.toarray().astype(complex) + 1j * PARAMS.beta * (
        system.mass0.toarray()
        + sum(system.mass_k[k].toarray()
              - np.outer(system.m_k[k], system.m_k[k]) / system.measures[k]
              for k in range(2)))
    assert a_vw == pytest.approx(np.vdot(w, D @ v), rel=1e-12)


def test_energy_identity(tiny):
    # total input power matches the dissipated gradient energy
    system = assemble(tiny, PARAMS, EPSILON_PROBLEM)
    system = apply_gauge(system, GaugeMode.OMEGA0_MEAN)
    f, _ = solve(system, assemble_thin_source(tiny, PARAMS))
    grad_sq = np.vdot(f.values, system.stiffness @ f.values).real
    want = PARAMS.mu_I * (f.aux[0][1] - f.aux[1][1]).real
    assert grad_sq == pytest.approx(want, rel=1e-12)


def test_field_io_roundtrip(tiny, tmp_path):
    rng = np.random.default_rng(3)
    f = Field(tiny, rng.standard_normal(tiny.n_nodes)
              + 1j * rng.standard_normal(tiny.n_nodes),
              aux=((1, 1.5 - 2j), (2, 3.25 + 0.125j)))
    p = tmp_path / "f.txt"
    write_field(f, p)
    g = read_field(tiny, p)
    np.testing.assert_array_equal(g.values, f.values)
    assert g.aux == f.aux


def test_problem_kind_repr():
    psi = Field(_tiny_tagged_mesh(), np.zeros(81, dtype=complex))
    assert "EPSILON" in repr(EPSILON_PROBLEM)
    assert "ADJOINT" in repr(adjoint_limit(psi))
    with pytest.raises(ValueError):
        fem.ProblemKind("epsilon", adjoint=True)  # adjoint needs psi
