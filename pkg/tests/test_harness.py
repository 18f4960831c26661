import numpy as np
import pytest

from eddy2d.fem import MaterialParams
from eddy2d.geometry import Disk, DomainSpec
from eddy2d.harness import (ADJOINT_COLUMNS, MESH_CONV_COLUMNS, SWEEP_COLUMNS,
                            TRUNCATION_COLUMNS, AdjointConfig,
                            InvariantConfig, MeshConvergenceConfig,
                            SweepConfig, TruncationConfig, fit_rate,
                            fit_rate_with_discard, psi_recipe,
                            run_adjoint_check, run_epsilon_sweep,
                            run_invariant_suite, run_mesh_convergence,
                            run_truncation_study)

PARAMS = MaterialParams(sigma=1.0, mu=1.0, omega=1.0, current=1.0)


def two_coil_domain(**kw):
    kw.setdefault("inductors", (Disk((2.0, 0.0), 1.0), Disk((-2.0, 0.0), 1.0)))
    kw.setdefault("epsilon", 0.4)
    kw.setdefault("omega0", Disk((0.0, 0.0), 1.0))
    kw.setdefault("radius", 10.0)
    kw.setdefault("segments", 32)
    kw.setdefault("symmetric", False)
    return DomainSpec(**kw)


def test_fit_rate_recovers_power_law():
    xs = np.array([0.4, 0.2, 0.1, 0.05])
    fit = fit_rate(xs, 3.0 * xs ** 1.7)
    assert fit.slope == pytest.approx(1.7, rel=1e-12)
    assert fit.intercept == pytest.approx(np.log(3.0), rel=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.n_points == 4
    assert fit.discarded is None
    d = fit.to_dict()
    assert set(d) == {"slope", "intercept", "r_squared", "n_points", "discarded"}


def test_fit_rate_rejects_bad_input():
    with pytest.raises(ValueError, match="at least 2 points"):
        fit_rate([0.4], [1.0])
    with pytest.raises(ValueError, match="positive"):
        fit_rate([0.4, 0.2], [1.0, -1.0])
    with pytest.raises(ValueError, match="positive"):
        fit_rate([0.4, -0.2], [1.0, 1.0])


def test_fit_rate_discard_rule():
    xs = np.array([0.4, 0.2, 0.1, 0.05, 0.025])
    vals = 2.0 * xs ** 1.0
    vals[0] *= 5.0  # pre-asymptotic outlier at the coarsest epsilon
    primary, refit = fit_rate_with_discard(xs, vals)
    assert primary.r_squared < 0.98
    assert refit is not None
    assert refit.discarded == pytest.approx(0.4)
    assert refit.slope == pytest.approx(1.0, rel=1e-12)
    assert refit.n_points == 4
    # a clean series needs no refit
    p2, r2 = fit_rate_with_discard(xs, 2.0 * xs ** 1.0)
    assert r2 is None and p2.r_squared == pytest.approx(1.0, abs=1e-12)


def test_psi_recipes():
    fn, meta = psi_recipe("uniform")
    np.testing.assert_array_equal(fn(np.zeros((5, 2))), np.ones(5))
    assert meta == {"psi": "uniform"}
    f1, m1 = psi_recipe("bump", seed=42)
    f2, m2 = psi_recipe("bump", seed=42)
    assert m1 == m2
    pts = np.array([[0.0, 0.0], [1.0, 1.0]])
    np.testing.assert_array_equal(f1(pts), f2(pts))
    _, m3 = psi_recipe("bump", seed=43)
    assert m3 != m1
    assert (f1(pts) > 0).all() and (f1(pts) <= 1).all()
    with pytest.raises(ValueError, match="unknown psi recipe"):
        psi_recipe("ripple")


def test_sweep_config_validation():
    dom = two_coil_domain()
    with pytest.raises(ValueError, match="at least 4"):
        SweepConfig(dom, PARAMS, eps_list=(0.4, 0.2, 0.1))
    with pytest.raises(ValueError, match="strictly decreasing"):
        SweepConfig(dom, PARAMS, eps_list=(0.4, 0.4, 0.2, 0.1))
    with pytest.raises(ValueError, match="positive"):
        SweepConfig(dom, PARAMS, eps_list=(0.4, 0.2, 0.1, -0.05))


def test_zero_current_sweep_reports_undefined_rate():
    dom = two_coil_domain(omega0=None)
    params = MaterialParams(sigma=1.0, mu=1.0, omega=1.0, current=0.0)
    rep = run_epsilon_sweep(SweepConfig(
        dom, params, eps_list=(0.8, 0.6, 0.45, 0.3), h=0.8))
    assert rep.name == "epsilon_sweep"
    assert rep.columns == SWEEP_COLUMNS
    assert len(rep.rows) == 4
    assert all(len(r) == len(SWEEP_COLUMNS) for r in rep.rows)
    col = SWEEP_COLUMNS.index("weighted_error")
    assert all(r[col] == 0.0 for r in rep.rows)
    assert rep.summary["weighted_error_rate"] is None
    assert "slope undefined" in rep.summary["weighted_error_rate_note"]
    assert rep.summary["variation"]["scaled_l2_k1"] is None
    assert rep.summary["flags"]["currents_within_1e8"]


def test_truncation_identical_radii():
    dom = two_coil_domain(omega0=None, radius=6.0, segments=24)
    rep = run_truncation_study(TruncationConfig(dom, PARAMS, r_list=(6.0, 6.0),
                                                h=0.8))
    assert rep.name == "truncation_study"
    assert rep.columns == TRUNCATION_COLUMNS
    assert len(rep.rows) == 1
    assert rep.rows[0][2] == 0.0
    assert rep.summary["decay_rate_in_inverse_r"] is None
    assert rep.summary["decay_rate_in_inverse_r_note"] == "needs >= 3 radii"
    assert rep.summary["flags"]["monotone_in_r"]
    assert not rep.summary["flags"]["decay_rate_ge_1"]


def test_truncation_config_validation():
    dom = two_coil_domain()
    with pytest.raises(ValueError, match="at least 2 radii"):
        TruncationConfig(dom, PARAMS, r_list=(10.0,))
    with pytest.raises(ValueError, match="nondecreasing"):
        TruncationConfig(dom, PARAMS, r_list=(20.0, 10.0))


def test_mesh_convergence_partial_on_node_budget():
    dom = two_coil_domain(inductors=(Disk((1.0, 0.0), 0.5),
                                     Disk((-1.0, 0.0), 0.5)),
                          epsilon=0.6, omega0=None, radius=6.0, segments=24,
                          symmetric=True)
    params = MaterialParams(sigma=1.0, mu=2.0 * np.pi, omega=1.0, current=1.0)
    cfg = MeshConvergenceConfig(dom, params, levels=5, h=0.8,
                                node_budget=30_000)
    rep = run_mesh_convergence(cfg)
    assert rep.name == "mesh_convergence"
    assert rep.columns == MESH_CONV_COLUMNS
    assert rep.summary["branch"] == "analytic"
    assert rep.summary["partial"] is True
    assert "exceeds 30000 nodes" in rep.summary["partial_reason"]
    assert rep.summary["levels_completed"] == len(rep.rows)
    assert rep.summary["levels_completed"] < rep.summary["levels_requested"]
    assert len(rep.rows) >= 2


def test_mesh_convergence_config_validation():
    with pytest.raises(ValueError, match="at least 2 levels"):
        MeshConvergenceConfig(two_coil_domain(), PARAMS, levels=1)


def test_adjoint_check_report_shape():
    dom = two_coil_domain(omega0=None)
    cfg = AdjointConfig(dom, PARAMS, eps_list=(0.8, 0.5), h=0.8, psi="bump",
                        seed=7)
    rep = run_adjoint_check(cfg)
    assert rep.name == "adjoint_check"
    assert rep.columns == ADJOINT_COLUMNS
    assert len(rep.rows) == 2
    assert rep.summary["psi"] == "bump"
    assert "bump_center" in rep.summary and "bump_width" in rep.summary
    col = ADJOINT_COLUMNS.index("grad_error_over_eps")
    assert all(r[col] > 0 for r in rep.rows)
    assert rep.summary["ratio_variation"] > 0


def test_adjoint_config_validation():
    dom = two_coil_domain()
    with pytest.raises(ValueError, match="strictly decreasing"):
        AdjointConfig(dom, PARAMS, eps_list=(0.2, 0.4))
    with pytest.raises(ValueError, match="unknown psi recipe"):
        AdjointConfig(dom, PARAMS, psi="ripple")


def test_invariant_suite_passes():
    rep = run_invariant_suite(InvariantConfig(two_coil_domain(), PARAMS,
                                              h=0.8, n_random_fields=10,
                                              seed=5))
    assert rep.name == "invariant_suite"
    assert rep.summary["all_passed"] is True
    assert rep.summary["n_checks"] == len(rep.rows)
    assert all(r[3] == 1.0 for r in rep.rows)
    names = [r[0] for r in rep.rows]
    assert "broken_c0_detected" in names
    assert "beta_zero_single_gauge_detected" in names
    assert "dense_oracle_max_gap" in names
