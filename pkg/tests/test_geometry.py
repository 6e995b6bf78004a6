import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from orbharm.atlas import Domain, cyclic_rotations, rotation2d, validate_group
from orbharm.errors import PointTooCloseToBoundary, UnsupportedValence
from orbharm.geometry import (MetricField, ModelTensor, OrbiTensorField, adapted_frame, christoffel,
                              christoffel_equivariance_residual, covariant_derivative, is_spd,
                              is_zero_deformable, metric_compatibility_residual, metric_invariance_residual,
                              pullback_tensor, stabilizer_algebra_dim, stabilizer_membership,
                              tensor_covariant_derivative)

from oracles import sympy_christoffel, sympy_stabilizer_dim

x, y = sp.symbols("x y", real=True)
r2 = x**2 + y**2
SYMBOLIC = {"flat": sp.eye(2), "sphere": 4 / (1 + r2) ** 2 * sp.eye(2),
            "hyperbolic": 4 / (1 - r2) ** 2 * sp.eye(2)}
POLY = sp.Matrix([[1 + x**2, x * y / 2], [x * y / 2, 2 + y**2]])
POLY_ENTRIES = [[[(1.0, (0, 0)), (1.0, (2, 0))], [(0.5, (1, 1))]],
                [[(0.5, (1, 1))], [(2.0, (0, 0)), (1.0, (0, 2))]]]
SAMPLES = np.array([[0.1, 0.2], [-0.3, 0.25], [0.4, -0.1], [0.0, 0.0], [-0.2, -0.45]])


@pytest.mark.parametrize("kind", ["flat", "sphere", "hyperbolic"])
def test_preset_christoffel_matches_sympy(kind):
    m = MetricField.preset(kind)
    ana = christoffel(m, SAMPLES, mode="analytic")
    fd = christoffel(m, SAMPLES, mode="fd")
    for n, p in enumerate(SAMPLES):
        exact = sympy_christoffel(SYMBOLIC[kind], p)
        assert np.allclose(ana[n], exact, atol=1e-12)
        assert np.allclose(fd[n], exact, atol=1e-5)


def test_polynomial_metric_matches_sympy():
    m = MetricField.polynomial(POLY_ENTRIES)
    g = m(SAMPLES)
    for n, p in enumerate(SAMPLES):
        assert np.allclose(g[n], np.array(POLY.subs({x: p[0], y: p[1]}), float))
        assert np.allclose(christoffel(m, SAMPLES)[n], sympy_christoffel(POLY, p), atol=1e-6)


def test_fd_christoffel_is_second_order():
    m = MetricField.hyperbolic()
    p = np.array([[0.3, 0.2]])
    exact = christoffel(m, p, mode="analytic")
    errs = [np.abs(christoffel(m, p, h, mode="fd") - exact).max() for h in (4e-3, 2e-3)]
    assert 3.0 < errs[0] / errs[1] < 5.0


@pytest.mark.parametrize("metric", [MetricField.flat(), MetricField.sphere(), MetricField.hyperbolic(),
                                    MetricField.polynomial(POLY_ENTRIES)], ids=lambda m: m.kind)
def test_levi_civita_is_metric_compatible(metric):
    assert metric_compatibility_residual(metric, SAMPLES) < 1e-6
    ok, sym, lo = is_spd(metric, SAMPLES)
    assert ok and sym == 0.0 and lo > 0


def test_fd_near_boundary_is_refused():
    with pytest.raises(PointTooCloseToBoundary):
        christoffel(MetricField.hyperbolic(), [[0.9995, 0.0]], mode="fd")


def test_invariance_under_rotations():
    rot = cyclic_rotations(6)
    for m in (MetricField.flat(), MetricField.sphere(), MetricField.hyperbolic()):
        assert metric_invariance_residual(m, rot, domain=Domain.disk(0.9)) < 1e-12
        assert christoffel_equivariance_residual(m, rot, SAMPLES) < 1e-12
    poly = MetricField.polynomial(POLY_ENTRIES)
    assert metric_invariance_residual(poly, cyclic_rotations(2), SAMPLES) < 1e-12
    assert metric_invariance_residual(poly, cyclic_rotations(4), SAMPLES) > 0.1


def test_covariant_derivative_against_sympy():
    g = SYMBOLIC["sphere"]
    X = [x + y, 1 - x * y]
    Y = [y**2, x]
    v = (x, y)
    p = (0.2, -0.3)
    gam = sympy_christoffel(g, p)
    sub = {x: p[0], y: p[1]}
    Xv = np.array([float(e.subs(sub)) for e in X])
    Yv = np.array([float(e.subs(sub)) for e in Y])
    dY = np.array([[float(sp.diff(Y[k], v[i]).subs(sub)) for i in range(2)] for k in range(2)])
    exact = dY @ Xv + np.einsum("kij,i,j->k", gam, Xv, Yv)
    fX = lambda q: np.column_stack([q[:, 0] + q[:, 1], 1 - q[:, 0] * q[:, 1]])  # noqa: E731
    fY = lambda q: np.column_stack([q[:, 1] ** 2, q[:, 0]])  # noqa: E731
    got = covariant_derivative(MetricField.sphere(), fX, fY, [p])[0]
    assert np.allclose(got, exact, atol=1e-6)


def test_metric_is_parallel():
    m = MetricField.hyperbolic()
    d = tensor_covariant_derivative(m, m, 0, 2, SAMPLES[:3])
    assert np.abs(d).max() < 1e-6
    # a vector field as a (1, 0) tensor agrees with covariant_derivative along e_i
    Y = lambda q: np.column_stack([q[:, 1] ** 2, q[:, 0]])  # noqa: E731
    full = tensor_covariant_derivative(m, Y, 1, 0, SAMPLES[:3])
    e0 = lambda q: np.tile([1.0, 0.0], (len(q), 1))  # noqa: E731
    assert np.allclose(full[..., 0], covariant_derivative(m, e0, Y, SAMPLES[:3]), atol=1e-8)


mats = st.lists(st.floats(-2, 2), min_size=4, max_size=4).map(lambda v: np.array(v).reshape(2, 2)).filter(
    lambda a: abs(np.linalg.det(a)) > 0.2)


@settings(max_examples=40, deadline=None)
@given(mats, mats, st.sampled_from([(0, 2), (1, 1), (2, 0), (0, 3), (1, 2)]))
def test_pullback_is_contravariant_functor(A, B, valence):
    p, q = valence
    T = np.random.default_rng(7).normal(size=(2,) * (p + q))
    lhs = pullback_tensor(A @ B, T, p, q)
    rhs = pullback_tensor(B, pullback_tensor(A, T, p, q), p, q)
    assert np.allclose(lhs, rhs, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(mats)
def test_pullback_explicit_forms(A):
    T = np.array([[1.0, 2.0], [0.5, -1.0]])
    assert np.allclose(pullback_tensor(A, T, 0, 2), A.T @ T @ A)
    assert np.allclose(pullback_tensor(A, T, 1, 1), np.linalg.inv(A) @ T @ A)


@pytest.mark.parametrize("T0,expected", [(ModelTensor.euclidean(2), 1), (ModelTensor.area_form(), 3),
                                         (ModelTensor.volume_form(3), 8), (ModelTensor.minkowski(2), 1),
                                         (ModelTensor.euclidean(3), 3), (ModelTensor(np.eye(2), 1, 1), 4)],
                         ids=["euclidean2", "area", "volume3", "minkowski", "euclidean3", "identity11"])
def test_stabilizer_dimension(T0, expected):
    assert stabilizer_algebra_dim(T0) == expected
    assert sympy_stabilizer_dim(T0.components, T0.p, T0.q) == expected


def test_stabilizer_membership():
    ok, res = stabilizer_membership(rotation2d(0.7), ModelTensor.euclidean())
    assert ok and res < 1e-12
    ok, res = stabilizer_membership(2 * np.eye(2), ModelTensor.euclidean())
    assert not ok and abs(res - 3.0) < 1e-12
    shear = np.array([[1.0, 3.0], [0.0, 1.0]])
    assert stabilizer_membership(shear, ModelTensor.area_form())[0]
    boost = np.array([[np.cosh(0.4), np.sinh(0.4)], [np.sinh(0.4), np.cosh(0.4)]])
    assert stabilizer_membership(boost, ModelTensor.minkowski())[0]


def test_zero_deformable_signature():
    assert is_zero_deformable(MetricField.sphere(), ModelTensor.euclidean(), SAMPLES)
    lorentz = MetricField.from_callable(lambda q: np.stack(
        [np.diag([1.0, -1.0 - p[0] ** 2]) for p in q]), 2)
    assert not is_zero_deformable(lorentz, ModelTensor.euclidean(), SAMPLES)
    assert is_zero_deformable(lorentz, ModelTensor.minkowski(), SAMPLES)
    with pytest.raises(UnsupportedValence):
        is_zero_deformable(MetricField.flat(), ModelTensor.area_form(), SAMPLES)
    with pytest.raises(UnsupportedValence):
        adapted_frame(np.eye(2), ModelTensor.volume_form(2))


@settings(max_examples=30, deadline=None)
@given(mats)
def test_adapted_frame_carries_form_to_model(A):
    Tx = A.T @ A
    P = adapted_frame(Tx, ModelTensor.euclidean())
    assert np.allclose(P.T @ Tx @ P, np.eye(2), atol=1e-9)
    L = A.T @ np.diag([-1.0, 1.0]) @ A
    P = adapted_frame(L, ModelTensor.minkowski())
    assert np.allclose(P.T @ L @ P, np.diag([-1.0, 1.0]), atol=1e-9)


def test_orbitensor_field_invariance():
    grp = validate_group([rotation2d(np.pi / 2)])
    f = OrbiTensorField.from_metric(MetricField.sphere(), action=grp)
    assert f.invariance_residual(SAMPLES) < 1e-12
    vec = OrbiTensorField("U", 1, 0, lambda q: np.column_stack([q[:, 0], 0 * q[:, 1]]), grp)
    assert vec.invariance_residual(SAMPLES) > 0.1
    radial = OrbiTensorField("U", 1, 0, lambda q: q.copy(), grp)
    assert radial.invariance_residual(SAMPLES) < 1e-12


def test_operation_examples():
    aniso = MetricField.from_callable(lambda q: np.tile(np.diag([1.0, 2.0]), (len(q), 1, 1)), 2)
    assert abs(metric_invariance_residual(aniso, cyclic_rotations(4), SAMPLES) - 1.0) < 1e-12
    assert np.abs(christoffel(MetricField.hyperbolic(), [[0.0, 0.0]])).max() == 0.0
    sph = MetricField.sphere()
    assert np.abs(christoffel(sph, [[1.0, 0.0]], mode="fd") - christoffel(sph, [[1.0, 0.0]])).max() < 1e-5
    assert stabilizer_membership(np.diag([2.0, 0.5]), ModelTensor.area_form())[0]


def test_rotational_field_on_hyperbolic_disk():
    g = SYMBOLIC["hyperbolic"]
    v = (x, y)
    rot = [-y, x]
    p = (0.35, -0.2)
    sub = {x: p[0], y: p[1]}
    gam = sympy_christoffel(g, p)
    R = np.array([float(e.subs(sub)) for e in rot])
    dR = np.array([[float(sp.diff(rot[k], v[i]).subs(sub)) for i in range(2)] for k in range(2)])
    exact = dR @ R + np.einsum("kij,i,j->k", gam, R, R)
    fR = lambda q: np.column_stack([-q[:, 1], q[:, 0]])  # noqa: E731
    assert np.allclose(covariant_derivative(MetricField.hyperbolic(), fR, fR, [p])[0], exact, atol=1e-6)
