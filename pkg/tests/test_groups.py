import itertools

import numpy as np
import pytest

from symlab.groups import (
    FiniteGroup,
    build_group,
    build_representation,
    character,
    character_inner,
)


def test_trivial_group():
    g = build_group("cyclic 1")
    assert g.order == 1
    assert g.identity == 0
    assert g.weights[0] == 1.0


def test_symmetric_3_basics():
    g = build_group("symmetric 3")
    assert g.order == 6
    assert np.allclose(g.weights, 1.0 / 6.0)
    assert g.is_exact


def test_symmetric_cap_rejected():
    with pytest.raises(ValueError):
        build_group("symmetric 8")  # 8! = 40320 > 5040


def test_so2_quadrature_table_is_index_addition():
    g = build_group("so2_quadrature 8")
    ids = np.arange(8)
    assert np.array_equal(g.table, (ids[:, None] + ids[None, :]) % 8)
    assert not g.is_exact
    assert g.exactness == "quadrature(8)"


def test_dihedral_order_and_noncommutativity():
    g = build_group("dihedral 4")
    assert g.order == 8
    # r * s != s * r for the square
    r, s = 1, 4
    assert g.compose(r, s) != g.compose(s, r)


def test_product_group():
    g = build_group("cyclic 2 * cyclic 3")
    assert g.order == 6
    assert np.allclose(g.weights.sum(), 1.0)
    # product of cyclics of coprime order is cyclic of order 6: some element generates
    orders = []
    for a in g.elements():
        x, k = a, 1
        while x != g.identity:
            x = g.compose(x, a)
            k += 1
        orders.append(k)
    assert max(orders) == 6


def test_reassociation_random_triples():
    for desc in ["symmetric 3", "dihedral 4", "cyclic 5", "cyclic 2 * symmetric 3"]:
        g = build_group(desc)
        rng = np.random.default_rng(7)
        for _ in range(1000):
            a, b, c = rng.integers(0, g.order, size=3)
            assert g.compose(g.compose(a, b), c) == g.compose(a, g.compose(b, c))


def test_invalid_descriptors():
    for bad in ["cyclic", "frobnicate 3", "cyclic 0", "cyclic 2 *", ""]:
        with pytest.raises(ValueError):
            build_group(bad)


def test_invalid_table_rejected():
    table = np.array([[0, 1], [1, 1]])  # not a group
    with pytest.raises(ValueError):
        FiniteGroup(
            name="broken",
            table=table,
            inverse=np.array([0, 1]),
            identity=0,
            weights=np.array([0.5, 0.5]),
        )


def test_natural_permutation_s3():
    g = build_group("symmetric 3")
    rep = build_representation(g, "natural_permutation")
    assert rep.dim == 3
    chi = character(rep)
    assert chi[g.identity] == 3
    # traces of S_3 permutation matrices: identity 3, transpositions 1, 3-cycles 0
    assert sorted(chi.tolist()) == [0, 0, 1, 1, 1, 3]


def test_character_inner_s3():
    g = build_group("symmetric 3")
    nat = build_representation(g, "natural_permutation")
    triv = build_representation(g, "trivial 1")
    assert character_inner(nat, nat) == pytest.approx(2.0, abs=1e-10)
    assert character_inner(nat, triv) == pytest.approx(1.0, abs=1e-10)
    assert character_inner(triv, triv) == pytest.approx(1.0, abs=1e-12)


def test_rotation_block_c4():
    g = build_group("cyclic 4")
    rep = build_representation(g, "rotation_block 1")
    assert rep.dim == 2
    m1 = rep.matrix(1)
    assert np.allclose(np.linalg.matrix_power(m1, 4), np.eye(2), atol=1e-12)
    assert np.allclose(m1, [[0, -1], [1, 0]], atol=1e-12)
    # character of a 2D rotation is 2 cos(theta)
    angles = 2 * np.pi * np.arange(4) / 4
    assert np.allclose(character(rep), 2 * np.cos(angles), atol=1e-12)


def test_rotation_block_requires_cyclic():
    g = build_group("symmetric 3")
    with pytest.raises(ValueError):
        build_representation(g, "rotation_block 1")


def test_sign_representation():
    g = build_group("symmetric 3")
    rep = build_representation(g, "sign")
    chi = character(rep)
    assert sorted(chi.tolist()) == [-1, -1, -1, 1, 1, 1]
    assert character_inner(rep, rep) == pytest.approx(1.0, abs=1e-12)


def test_sign_requires_symmetric():
    g = build_group("cyclic 4")
    with pytest.raises(ValueError):
        build_representation(g, "sign")


def test_direct_sum():
    g = build_group("symmetric 3")
    rep = build_representation(g, "direct_sum natural_permutation + trivial 1")
    assert rep.dim == 4
    assert character_inner(rep, rep) == pytest.approx(5.0, abs=1e-8)  # (nat+triv, nat+triv) = 2+1+1+1


def test_explicit_reflection_rep():
    g = build_group("cyclic 2")
    mats = np.stack([np.eye(3), np.diag([-1.0, 1.0, 1.0])])
    rep = build_representation(g, "explicit", matrices=mats)
    assert rep.is_orthogonal
    assert np.allclose(character(rep), [3.0, 1.0])


def test_explicit_non_homomorphism_rejected():
    g = build_group("cyclic 2")
    mats = np.stack([np.eye(2), np.array([[0.0, 1.0], [0.0, 1.0]])])
    with pytest.raises(ValueError):
        build_representation(g, "explicit", matrices=mats)


def test_non_orthogonal_flagged_when_allowed():
    # a valid non-orthogonal rep of C_2: conjugate the reflection by a shear
    g = build_group("cyclic 2")
    shear = np.array([[1.0, 0.7], [0.0, 1.0]])
    refl = np.diag([1.0, -1.0])
    mats = np.stack([np.eye(2), shear @ refl @ np.linalg.inv(shear)])
    with pytest.raises(ValueError):
        build_representation(g, "explicit", matrices=mats)
    rep = build_representation(g, "explicit", matrices=mats, require_orthogonal=False)
    assert not rep.is_orthogonal
    # inverse_matrix uses the table, so it is exact despite non-orthogonality
    assert np.allclose(rep.inverse_matrix(1) @ rep.matrix(1), np.eye(2), atol=1e-12)


def test_natural_permutation_dihedral_is_homomorphism():
    g = build_group("dihedral 5")
    rep = build_representation(g, "natural_permutation")
    assert rep.dim == 5
    for a, b in itertools.product(range(g.order), repeat=2):
        assert np.array_equal(rep.matrix(g.compose(a, b)), rep.matrix(a) @ rep.matrix(b))


def test_natural_permutation_product_group():
    g = build_group("cyclic 2 * symmetric 3")
    rep = build_representation(g, "natural_permutation")
    assert rep.dim == 5
    assert character_inner(rep, build_representation(g, "trivial 1")) == pytest.approx(2.0, abs=1e-8)


def test_large_group_sampled_validation():
    g = build_group("symmetric 7")
    assert g.order == 5040
    rep = build_representation(g, "natural_permutation")
    assert character_inner(rep, rep) == pytest.approx(2.0, abs=1e-8)
