import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbharm.atlas import Domain, cone_atlas, rotation2d
from orbharm.errors import Diverged, NonEquivariantBoundary
from orbharm.geometry import MetricField
from orbharm.harmonic import (FlowParams, dirichlet_problem, energy, grid_energy, heat_flow, is_harmonic,
                              tension)
from orbharm.lifts import AffineLift, ComplexPowerLift, ExpressionLift, GridLift, grid_from_lift
from orbharm.orbmap import identity_map, single_chart_map

FLAT, FLAT1 = MetricField.flat(), MetricField.flat(1)
PTS = Domain.disk(1.0).sample(9, shrink=0.8)


def zsq_problem(m=33, kind="cartesian"):
    f = single_chart_map(cone_atlas(4), cone_atlas(2, 2.0), ComplexPowerLift(2), [rotation2d(np.pi)])
    return dirichlet_problem(f, ComplexPowerLift(2), kind, m), ComplexPowerLift(2)


def test_identity_is_harmonic():
    assert tension(AffineLift(np.eye(2)), FLAT, FLAT, PTS).sup_norm == 0.0
    hyp = MetricField.hyperbolic()
    f = identity_map(cone_atlas(3))
    ok, sup = is_harmonic(f, hyp, hyp, tol=1e-5)
    assert ok and sup < 1e-5


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9)), min_size=1, max_size=5))
def test_radius_squared_has_tension_four(pts):
    f = ExpressionLift(["x**2 + y**2"])
    tau = tension(f, FLAT, FLAT1, pts)
    assert np.allclose(tau.values, 4.0, atol=1e-6)
    ok, sup = is_harmonic(f, FLAT, FLAT1, points=pts)
    assert not ok and abs(sup - 4.0) < 1e-6


def test_harmonic_polynomials():
    assert tension(ComplexPowerLift(3), FLAT, FLAT, PTS).sup_norm < 1e-12
    # same map with finite-difference derivatives
    from orbharm.lifts import CallableLift
    assert tension(CallableLift(ComplexPowerLift(3), 2, 2), FLAT, FLAT, PTS).sup_norm < 1e-6
    const = ExpressionLift(["0.3", "-0.1"])
    assert is_harmonic(const, FLAT, FLAT, points=PTS)[0]


def test_z_squared_between_cones_is_harmonic():
    f = single_chart_map(cone_atlas(4), cone_atlas(2), ComplexPowerLift(2), [rotation2d(np.pi)])
    ok, sup = is_harmonic(f, FLAT, FLAT, tol=1e-6)
    assert ok and sup < 1e-12


def test_tension_is_equivariant_section():
    hyp = MetricField.hyperbolic()
    f = single_chart_map(cone_atlas(4), cone_atlas(2), ExpressionLift(["x**2 - y**2", "2*x*y + 0.3*x*y*(x**2 + y**2)"]),
                         [rotation2d(np.pi)])
    pts = Domain.disk(1.0).sample(9, shrink=0.8)
    pts = np.concatenate([pts @ g.T for g in f.source["U"].action.elements])
    tau = tension(f, hyp, hyp, pts)
    assert tau.sup_norm > 0.1
    assert tau.equivariance_residual(f.source["U"].action, f.theta_matrices("U")) < 1e-9


def test_flat_tension_equals_discrete_laplacian():
    rng = np.random.default_rng(3)
    vals = rng.normal(size=(9, 9, 2))
    g = GridLift("cartesian", Domain.box([-1, -1], [1, 1]), 9, vals)
    tau = tension(g, FLAT, FLAT)
    h = g.spacing[0]
    lap = (vals[2:, 1:-1] + vals[:-2, 1:-1] + vals[1:-1, 2:] + vals[1:-1, :-2] - 4 * vals[1:-1, 1:-1]) / h**2
    assert np.allclose(tau.values, lap.reshape(-1, 2), atol=1e-10)


def test_energy_examples():
    sq = Domain.box([0, 0], [1, 1])
    assert abs(energy(AffineLift(np.eye(2)), FLAT, FLAT, domain=sq) - 1.0) < 1e-3
    assert energy(ExpressionLift(["1", "2"]), FLAT, FLAT, domain=sq) == 0.0
    f = ComplexPowerLift(2)
    e1 = energy(f, FLAT, FLAT, domain=Domain.disk(1.0))
    e2 = energy(ExpressionLift(["(x**2 - y**2)/sqrt(2)", "2*x*y/sqrt(2)"]), FLAT, FLAT, domain=Domain.disk(1.0))
    assert abs(e1 - 2 * np.pi) < 1e-9 and abs(e2 - e1 / 2) < 1e-9


def test_energy_per_fundamental_domain():
    f = single_chart_map(cone_atlas(4), cone_atlas(2), ComplexPowerLift(2), [rotation2d(np.pi)])
    assert abs(energy(f, FLAT, FLAT) - 2 * np.pi / 4) < 1e-9
    assert abs(energy(f, FLAT, FLAT, fundamental=False) - 2 * np.pi) < 1e-9


def test_flow_recovers_z_squared():
    start, bnd = zsq_problem(33)
    out, diag = heat_flow(start, FLAT, FLAT, FlowParams(tol=1e-6), boundary=bnd)
    assert diag.reason == "tolerance"
    grid = out.chart_lift("U").lift
    act = grid.active.reshape(-1)
    err = np.abs(grid.flat_values()[act] - bnd(grid.nodes()[act])).max()
    assert err < 1e-3
    assert max(diag.equivariance[1:]) < 1e-12
    assert np.diff(diag.energy[5:]).max() <= 1e-12
    # independent tension path on the final grid
    fresh = tension(grid, FLAT, FLAT)
    assert abs(fresh.sup_norm - diag.sup_tau[-1]) < 1e-9
    assert abs(grid_energy(grid, FLAT, FLAT) - diag.energy[-1]) < 1e-12


def test_flow_with_curved_metrics_stays_equivariant():
    hyp = MetricField.hyperbolic()
    f = single_chart_map(cone_atlas(4, 0.6), cone_atlas(2, 0.9), ComplexPowerLift(2), [rotation2d(np.pi)])
    start = dirichlet_problem(f, ComplexPowerLift(2), "cartesian", 17)
    out, diag = heat_flow(start, hyp, hyp, FlowParams(tol=1e-4, max_iter=3000), boundary=ComplexPowerLift(2))
    assert diag.reason == "tolerance"
    assert max(diag.equivariance) < 1e-12
    fresh = tension(out.chart_lift("U").lift, hyp, hyp)
    assert abs(fresh.sup_norm - diag.sup_tau[-1]) < 1e-9


def test_harmonic_start_stops_immediately():
    A = AffineLift([[0.5, -0.2], [0.1, 0.4]], [0.1, 0.0])
    g = grid_from_lift("cartesian", Domain.box([-1, -1], [1, 1]), 17, A)
    _, diag = heat_flow(g, FLAT, FLAT, FlowParams(tol=1e-6))
    assert diag.iterations <= 1 and diag.sup_tau[-1] < 1e-6


def test_large_step_diverges():
    start, bnd = zsq_problem(17)
    h = start.chart_lift("U").lift.min_spacing
    with pytest.raises(Diverged) as exc:
        heat_flow(start, FLAT, FLAT, FlowParams(dt=0.3 * h**2, max_iter=2000), target_domain=Domain.disk(1e9),
                  boundary=bnd)
    assert exc.value.diagnostics.reason == "diverged"


def test_non_equivariant_boundary():
    f = single_chart_map(cone_atlas(4), cone_atlas(2, 2.0), ComplexPowerLift(2), [rotation2d(np.pi)])
    bad = ExpressionLift(["x**2 - y**2 + 0.1*x", "2*x*y"])
    start = dirichlet_problem(f, bad, "cartesian", 17)
    with pytest.raises(NonEquivariantBoundary):
        heat_flow(start, FLAT, FLAT, boundary=bad)


def test_flow_params_validation():
    with pytest.raises(ValueError):
        FlowParams(dt=0.0)
    with pytest.raises(ValueError):
        FlowParams(tol=-1.0)
    assert FlowParams().step(zsq_problem(65)[0].chart_lift("U").lift) == pytest.approx(0.2 * (2 / 64) ** 2)


def test_node_steps():
    g = zsq_problem(33)[0].chart_lift("U").lift
    steps = FlowParams().node_steps(g, FLAT)
    assert np.allclose(steps, 0.2 * g.min_spacing**2)
    assert not FlowParams().uses_local_step(g)
    p = zsq_problem(17, "polar")[0].chart_lift("U").lift
    ps = FlowParams().node_steps(p, FLAT)
    assert FlowParams().uses_local_step(p)
    assert ps.min() >= 0.2 * p.min_spacing**2 * 0.99 and ps.max() < 0.4 * p.dr**2
    assert np.all(FlowParams(dt=1e-6).node_steps(p, FLAT) <= 1e-6)
    # the sphere factor exceeds 1 on the unit disk, so g^{-1} < I and steps grow
    assert FlowParams().node_steps(p, MetricField.sphere()).max() > ps.max()


def test_polar_flow_small_grid():
    start, bnd = zsq_problem(17, "polar")
    out, diag = heat_flow(start, FLAT, FLAT, FlowParams(tol=1e-6), boundary=bnd)
    assert diag.reason == "tolerance"
    assert max(diag.equivariance) < 1e-12
    assert np.diff(diag.energy[5:]).max() <= 1e-12
    grid = out.chart_lift("U").lift
    assert abs(tension(grid, FLAT, FLAT).sup_norm - diag.sup_tau[-1]) < 1e-9
