import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from orbharm.atlas import (AffineEmbedding, Chart, Domain, GluingEmbedding, OrbifoldAtlas, PowerEmbedding,
                           SuborbifoldWitness, cone_atlas, cyclic_rotations, football_atlas, isotropy_order,
                           mirror_atlas, reflection2d, rotation2d, validate_atlas, validate_group,
                           validate_suborbifold)
from orbharm.errors import AtlasError, ClosureExceedsCap, NotOrthogonal, PointNotCovered


def exact_closure(gens):
    """Oracle: closure of exact sympy matrices, compared by exact equality."""
    elems = [sp.eye(gens[0].shape[0])]
    frontier = list(elems)
    while frontier:
        nxt = []
        for a in frontier:
            for g in gens:
                p = sp.simplify(g * a)
                if not any(sp.simplify(p - e) == sp.zeros(*p.shape) for e in elems):
                    elems.append(p)
                    nxt.append(p)
        frontier = nxt
    return elems


def sym_rotation(k):
    t = 2 * sp.pi / k
    return sp.Matrix([[sp.cos(t), -sp.sin(t)], [sp.sin(t), sp.cos(t)]])


@pytest.mark.parametrize("k", [2, 3, 4, 6])
def test_cyclic_order_matches_exact_closure(k):
    assert cyclic_rotations(k).order == len(exact_closure([sym_rotation(k)])) == k


def test_dihedral_order_matches_exact_closure():
    r, s = sym_rotation(4), sp.Matrix([[1, 0], [0, -1]])
    grp = validate_group([rotation2d(np.pi / 2), reflection2d(0.0)])
    assert grp.order == len(exact_closure([r, s])) == 8


def test_closure_cap_and_orthogonality():
    with pytest.raises(ClosureExceedsCap):
        validate_group([rotation2d(1.0)])
    with pytest.raises(ClosureExceedsCap):
        validate_group([rotation2d(2 * np.pi / 12)], cap=10)
    with pytest.raises(NotOrthogonal):
        validate_group([2 * np.eye(2)])


def test_noise_does_not_duplicate_elements():
    g = rotation2d(np.pi / 3) + 1e-14
    g, _ = np.linalg.qr(g)
    g *= np.sign(np.diag(g))[None]
    assert validate_group([g]).order == 6


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([2, 3, 4, 5, 6, 8]), st.data())
def test_cayley_table_is_a_group(k, data):
    grp = validate_group([rotation2d(2 * np.pi / k), reflection2d(0.3)])
    i = data.draw(st.integers(0, grp.order - 1))
    j = data.draw(st.integers(0, grp.order - 1))
    prod = grp.elements[i] @ grp.elements[j]
    assert np.allclose(grp.elements[grp.mult[i, j]], prod, atol=1e-12)
    assert grp.mult[i, grp.inverse[i]] == 0
    assert grp.is_homomorphism(np.arange(grp.order), grp)


@pytest.mark.parametrize("atlas", [cone_atlas(2), cone_atlas(3), cone_atlas(4), cone_atlas(6),
                                   football_atlas(3, 5), mirror_atlas()], ids=lambda a: a.name)
def test_standard_atlases_validate(atlas):
    rep = validate_atlas(atlas)
    assert rep.passed, rep.failures()
    assert rep.max_residual() < 1e-9


def corrupted_football():
    a = football_atlas(3, 5)
    bad = GluingEmbedding("N0", "N", AffineEmbedding(np.eye(2)), [1, 2, 0])
    return OrbifoldAtlas(a.charts, [bad] + a.gluings[1:], a.overlaps, name="corrupted")


def test_corrupted_alpha_fails():
    rep = validate_atlas(corrupted_football())
    assert not rep.passed
    bad = [e for e in rep.failures() if e["check"] == "equivariance"]
    assert bad and bad[0]["residual"] > 1e-2
    assert any(e["check"] == "alpha_homomorphism" for e in rep.failures())


def test_missing_witness_and_bad_image():
    U = Chart("U", Domain.disk(1.0), cyclic_rotations(2))
    V = Chart("V", Domain.disk(0.5, center=(3.0, 0.0)), validate_group([], dim=2))
    atlas = OrbifoldAtlas([U, V], [GluingEmbedding("V", "U", AffineEmbedding(np.eye(2)), [0])],
                          overlaps=[("U", "V")])
    rep = validate_atlas(atlas)
    assert [e["check"] for e in rep.failures()] == ["image_inside_target"]
    atlas2 = OrbifoldAtlas([U, V], [], overlaps=[("U", "V")])
    assert [e["check"] for e in validate_atlas(atlas2).failures()] == ["compatibility_witness"]


def test_non_preserved_domain():
    box = Chart("B", Domain.box([0.0, -1.0], [2.0, 1.0]), cyclic_rotations(2))
    rep = validate_atlas(OrbifoldAtlas([box]))
    assert any(e["check"] == "domain_preserved" for e in rep.failures())


def test_atlas_construction_errors():
    U = Chart("U", Domain.disk(1.0), cyclic_rotations(2))
    with pytest.raises(AtlasError):
        OrbifoldAtlas([U, U])
    with pytest.raises(AtlasError):
        OrbifoldAtlas([U], [GluingEmbedding("U", "X", AffineEmbedding(np.eye(2)), [0, 1])])
    with pytest.raises(AtlasError):
        Chart("W", Domain.disk(1.0, dim=3), cyclic_rotations(2))


@pytest.mark.parametrize("k", [2, 3, 4, 6])
def test_cone_isotropy(k):
    a = cone_atlas(k)
    assert isotropy_order(a, "U", [0.0, 0.0]) == k
    assert isotropy_order(a, "U", [0.3, 0.1]) == 1
    with pytest.raises(PointNotCovered):
        isotropy_order(a, "U", [2.0, 0.0])


def test_football_isotropy_through_gluings():
    a = football_atlas(3, 5)
    assert isotropy_order(a, "N", [0.0, 0.0]) == 3
    assert isotropy_order(a, "S0", [0.0, 0.0]) == 5
    assert isotropy_order(a, "W", [1.02, 0.01]) == 1


def test_mirror_isotropy():
    a = mirror_atlas()
    assert isotropy_order(a, "U", [0.4, 0.0]) == 2
    assert isotropy_order(a, "U", [0.4, 0.2]) == 1


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 1.5), st.floats(-1.0, 1.0), st.sampled_from([(-3, 5), (2, 1), (1, 3), (-2, 3)]))
def test_power_embedding_round_trip(r, theta, pq):
    e = PowerEmbedding(*pq)
    z = np.array([[r * np.cos(theta), r * np.sin(theta)]])
    assert np.allclose(e.inverse(e(z)), z, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2))
def test_affine_embedding_round_trip(x, y, angle):
    e = AffineEmbedding(rotation2d(angle), [0.5, -1.0])
    p = np.array([[x, y]])
    assert np.allclose(e.inverse(e(p)), p, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(-2, 2), st.floats(-2, 2))
def test_domain_sampling_inside(radius, cx, cy):
    d = Domain.disk(radius, center=(cx, cy))
    assert d.contains(d.sample(9)).all()
    b = d.boundary_samples(16)
    assert np.allclose(d.boundary_distance(b), 0.0, atol=1e-12)


def test_suborbifold_mirror_axis():
    a = mirror_atlas()
    axis = SuborbifoldWitness("U", (0, 1), [0.0, 0.0], [[1.0, 0.0]])
    assert validate_suborbifold(a, [axis]).passed
    slanted = SuborbifoldWitness("U", (0, 1), [0.0, 0.0], [[0.6, 0.8]])
    assert not validate_suborbifold(a, [slanted]).passed


def test_suborbifold_subgroup_must_be_closed():
    a = cone_atlas(4)
    w = SuborbifoldWitness("U", (0, 1), [0.0, 0.0], np.zeros((0, 2)))
    rep = validate_suborbifold(a, [w])
    assert not rep.entries[0]["passed"]
