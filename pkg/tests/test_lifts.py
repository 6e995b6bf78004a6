import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from orbharm._numerics import central_hessian, central_jacobian
from orbharm.atlas import Domain
from orbharm.lifts import (AffineLift, CallableLift, ComplexPowerLift, ComposedLift, ExpressionLift, GridLift,
                           PolynomialLift, grid_from_lift, identity_lift, radial_initial_grid)

x, y = sp.symbols("x y", real=True)
pts_strategy = st.lists(st.tuples(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9)), min_size=1, max_size=6)


def sympy_derivatives(exprs, p):
    """Oracle: exact jacobian and hessian by sympy differentiation."""
    J = [[float(sp.diff(e, v).subs({x: p[0], y: p[1]})) for v in (x, y)] for e in exprs]
    H = [[[float(sp.diff(e, a, b).subs({x: p[0], y: p[1]})) for b in (x, y)] for a in (x, y)] for e in exprs]
    return np.array(J), np.array(H)


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_complex_power_matches_sympy(k):
    w = sp.expand((x + sp.I * y) ** k)
    exprs = [sp.re(w), sp.im(w)]
    lift = ComplexPowerLift(k)
    for p in [(0.3, -0.2), (-0.7, 0.1), (0.0, 0.0)]:
        J, H = sympy_derivatives(exprs, p)
        assert np.allclose(lift.jacobian(np.array([p]))[0], J, atol=1e-12)
        assert np.allclose(lift.hessian(np.array([p]))[0], H, atol=1e-12)


def test_polynomial_matches_sympy():
    comps = [[(1.0, (2, 0)), (-1.0, (0, 2))], [(2.0, (1, 1)), (0.5, (0, 3)), (1.5, (0, 0))]]
    exprs = [x**2 - y**2, 2 * x * y + 0.5 * y**3 + 1.5]
    lift = PolynomialLift(comps)
    p = (0.4, -0.6)
    J, H = sympy_derivatives(exprs, p)
    assert np.allclose(lift(np.array([p]))[0], [float(e.subs({x: p[0], y: p[1]})) for e in exprs])
    assert np.allclose(lift.jacobian(np.array([p]))[0], J, atol=1e-12)
    assert np.allclose(lift.hessian(np.array([p]))[0], H, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(pts_strategy)
def test_three_routes_to_z_squared_agree(pts):
    p = np.array(pts)
    routes = [ComplexPowerLift(2), ExpressionLift(["x**2 - y**2", "2*x*y"]),
              PolynomialLift([[(1.0, (2, 0)), (-1.0, (0, 2))], [(2.0, (1, 1))]])]
    vals = [r(p) for r in routes]
    jacs = [r.jacobian(p) for r in routes]
    hess = [r.hessian(p) for r in routes]
    for v, J, H in zip(vals[1:], jacs[1:], hess[1:]):
        assert np.allclose(v, vals[0], atol=1e-13)
        assert np.allclose(J, jacs[0], atol=1e-13)
        assert np.allclose(H, hess[0], atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(pts_strategy)
def test_exact_derivatives_match_finite_differences(pts):
    p = np.array(pts)
    lift = ExpressionLift(["sin(x)*exp(y)", "x*y**2 + cos(x + y)"])
    assert lift.exact
    assert np.allclose(central_jacobian(lift, p, 1e-5), lift.jacobian(p), atol=1e-8)
    assert np.allclose(central_hessian(lift, p, 1e-4), lift.hessian(p), atol=1e-6)


def test_callable_lift_uses_finite_differences():
    f = CallableLift(lambda p: np.column_stack([p[:, 0] ** 2, p[:, 0] * p[:, 1]]), 2, 2)
    assert not f.exact
    J = f.jacobian(np.array([[0.5, 2.0]]))[0]
    assert np.allclose(J, [[1.0, 0.0], [2.0, 0.5]], atol=1e-8)


def test_affine_and_identity():
    A = AffineLift([[0.0, -1.0], [1.0, 0.0]], [1.0, 2.0])
    assert np.allclose(A(np.array([[1.0, 0.0]])), [[1.0, 3.0]])
    assert np.allclose(A.hessian(np.zeros((1, 2))), 0.0)
    I = identity_lift(3)
    p = np.random.default_rng(0).normal(size=(4, 3))
    assert np.allclose(I(p), p)


@settings(max_examples=20, deadline=None)
@given(pts_strategy)
def test_composition_chain_rule(pts):
    p = np.array(pts) * 0.5
    inner = ComplexPowerLift(2)
    outer = ExpressionLift(["x + y**2", "x*y"])
    comp = ComposedLift(outer, inner)
    direct = ExpressionLift(["(x**2 - y**2) + (2*x*y)**2", "(x**2 - y**2)*(2*x*y)"])
    assert np.allclose(comp(p), direct(p), atol=1e-13)
    assert np.allclose(comp.jacobian(p), direct.jacobian(p), atol=1e-12)
    assert np.allclose(comp.hessian(p), direct.hessian(p), atol=1e-11)


def test_cartesian_interpolation_exact_for_bilinear():
    dom = Domain.box([-1.0, -1.0], [1.0, 1.0])
    f = ExpressionLift(["1 + 2*x - y + 3*x*y"])
    g = grid_from_lift("cartesian", dom, 9, f)
    p = np.random.default_rng(1).uniform(-0.99, 0.99, (20, 2))
    assert np.allclose(g(p), f(p), atol=1e-13)


def test_cartesian_node_derivatives_exact_for_quadratics():
    dom = Domain.disk(1.0)
    f = ExpressionLift(["x**2 - 3*x*y + y**2", "2*x + y**2"])
    g = grid_from_lift("cartesian", dom, 17, f)
    J, H, valid = g.node_derivatives()
    mask = valid.reshape(-1)
    nodes = g.nodes()[mask]
    assert np.allclose(J.reshape(-1, 2, 2)[mask], f.jacobian(nodes), atol=1e-12)
    assert np.allclose(H.reshape(-1, 2, 2, 2)[mask], f.hessian(nodes), atol=1e-10)


def test_polar_grid_layout_and_origin():
    g = grid_from_lift("polar", Domain.disk(1.0), 17, ComplexPowerLift(2))
    assert g.shape == (17, 16)
    assert g.frozen[-1].all() and not g.frozen[:-1].any()
    J, H, valid = g.node_derivatives()
    # the origin row is rebuilt from ring Fourier modes: z^2 has zero derivative there
    assert np.allclose(J[0], 0.0, atol=1e-10)
    assert np.allclose(H[0], ComplexPowerLift(2).hessian(np.zeros((1, 2)))[0], atol=1e-8)


def test_polar_interpolation_wraps_angle():
    g = grid_from_lift("polar", Domain.disk(1.0), 33, ExpressionLift(["x", "y"]))
    th = np.array([2 * np.pi - 1e-3, 1e-3, np.pi])
    p = 0.5 * np.column_stack([np.cos(th), np.sin(th)])
    assert np.allclose(g(p), p, atol=2e-3)


def test_polar_requires_centred_disk():
    with pytest.raises(ValueError):
        GridLift("polar", Domain.box([-1, -1], [1, 1]), 9, np.zeros((9, 8, 2)))
    with pytest.raises(ValueError):
        GridLift("cartesian", Domain.disk(1.0), 9, np.full((9, 9, 2), np.nan))


@pytest.mark.parametrize("kind", ["cartesian", "polar"])
def test_csv_round_trip(tmp_path, kind):
    g = grid_from_lift(kind, Domain.disk(1.0), 9, ComplexPowerLift(3))
    g.to_csv(tmp_path / "g.csv")
    back = GridLift.from_csv(tmp_path / "g.csv")
    assert back.kind == kind and back.shape == g.shape
    assert np.array_equal(back.values, g.values)
    assert np.array_equal(back.frozen, g.frozen)


@pytest.mark.parametrize("kind", ["cartesian", "polar"])
def test_radial_initial_grid_keeps_boundary(kind):
    bnd = ComplexPowerLift(2)
    g = radial_initial_grid(kind, Domain.disk(1.0), 17, bnd)
    fr = g.frozen.reshape(-1)
    assert np.allclose(g.flat_values()[fr], bnd(g.nodes()[fr]), atol=1e-14)
    # interpolation between centre value and boundary value along rays
    act = g.active.reshape(-1)
    r = np.linalg.norm(g.nodes()[act], axis=-1)
    assert np.all(np.linalg.norm(g.flat_values()[act], axis=-1) <= r + 1e-12)
