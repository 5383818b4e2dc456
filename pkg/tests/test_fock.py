from contextlib import nullcontext

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from pairsim.fock import (
    DegenerateOperatorError, FockSpace, InvalidDimensionError, SiteRangeError,
    annihilation_matrix, commutator_norm, embed, hamiltonian_terms, heal_jump,
    heal_jump_hardcore, hop_noise_jump, number_total, pair_jump, product_state, site_op,
    site_operators,
)


def ket(space, occ):
    return product_state(occ, space).amplitudes


def test_annihilation_matrix_two_level():
    np.testing.assert_array_equal(annihilation_matrix(2).matrix, [[0, 1], [0, 0]])


def test_annihilation_matrix_three_level():
    m = annihilation_matrix(3).matrix
    assert m[0, 1] == 1.0
    assert m[1, 2] == pytest.approx(np.sqrt(2))
    assert np.count_nonzero(m) == 2
    assert not (m @ np.array([1.0, 0, 0])).any()


def test_annihilation_matrix_rejects_d1():
    with pytest.raises(InvalidDimensionError):
        annihilation_matrix(1)


def test_space_validation():
    with pytest.raises(InvalidDimensionError):
        FockSpace(0, 2)
    with pytest.raises(InvalidDimensionError):
        FockSpace(2, 0)
    with pytest.raises(SiteRangeError):
        FockSpace(3, 2).check_site(3)
    with pytest.raises(InvalidDimensionError):
        FockSpace(2, 2).index([3, 0])


def test_index_roundtrip_and_ordering():
    sp = FockSpace(3, 2)
    assert sp.index([0, 0, 1]) == 1
    assert sp.index([1, 0, 0]) == 9
    for k in range(sp.dim):
        assert sp.index(sp.occupations(k)) == k
    np.testing.assert_array_equal(sp.digits[sp.index([2, 1, 0])], [2, 1, 0])


def test_embed_identity_is_identity():
    sp = FockSpace(3, 2)
    op = embed(np.eye(3), 1, sp)
    np.testing.assert_allclose(op.toarray(), np.eye(sp.dim))


def test_embed_number_and_annihilation():
    sp = FockSpace(2, 2)
    n0 = site_op("n", 0, sp)
    np.testing.assert_allclose(n0 @ ket(sp, [2, 0]), 2 * ket(sp, [2, 0]))
    a1 = site_op("a", 1, sp)
    np.testing.assert_allclose(a1 @ ket(sp, [0, 1]), ket(sp, [0, 0]))


def test_embed_rejects_bad_shape_and_site():
    sp = FockSpace(2, 2)
    with pytest.raises(InvalidDimensionError):
        embed(np.eye(2), 0, sp)
    with pytest.raises(SiteRangeError):
        embed(np.eye(3), 2, sp)


def test_pair_jump_examples():
    sp = FockSpace(2, 2)
    l = pair_jump(0, sp)
    np.testing.assert_allclose(l @ ket(sp, [2, 0]), 2 * (ket(sp, [2, 0]) + ket(sp, [0, 2])), atol=1e-14)
    assert np.abs(l @ (ket(sp, [2, 0]) + ket(sp, [0, 2]))).max() < 1e-14
    assert np.abs(l @ ket(sp, [0, 0])).max() == 0


def test_pair_jump_needs_two_photons():
    with pytest.raises(DegenerateOperatorError):
        pair_jump(0, FockSpace(2, 1))


def test_pair_jump_bond_range():
    with pytest.raises(SiteRangeError):
        pair_jump(2, FockSpace(3, 2))
    # periodic chain has the wrap-around bond
    l = pair_jump(2, FockSpace(3, 2, periodic=True))
    assert l.support == (0, 2)


def test_heal_jump_examples():
    sp = FockSpace(2, 2)
    c = heal_jump(0, sp, 1.0)
    np.testing.assert_allclose(c @ ket(sp, [1, 1]), np.sqrt(2) * ket(sp, [0, 2]), atol=1e-14)
    assert np.abs(c @ ket(sp, [2, 0])).max() == 0


def test_heal_jump_open_boundary_drops_missing_neighbour():
    sp = FockSpace(3, 2)
    assert heal_jump(0, sp).support == (0, 1)
    assert heal_jump(1, sp).support == (0, 1, 2)
    c = heal_jump(1, sp, 2.0)
    out = c @ ket(sp, [0, 1, 0])
    np.testing.assert_allclose(out, 2.0 * (ket(sp, [1, 0, 0]) + ket(sp, [0, 0, 1])), atol=1e-14)


def test_hardcore_projector_and_kernel():
    s = site_operators(3)
    np.testing.assert_allclose(s["n"] @ (s["n"] - 2 * s["id"]), np.diag([0, -1, 0]))
    sp = FockSpace(2, 2)
    with pytest.warns(UserWarning):
        heal_jump_hardcore(0, FockSpace(2, 3))
    c = heal_jump_hardcore(0, sp)
    for right in range(3):
        assert np.abs(c @ ket(sp, [0, right])).max() == 0
        assert np.abs(c @ ket(sp, [2, right])).max() == 0


def test_hardcore_truncated_hop():
    # the |0,3> branch is cut by the d=3 truncation; the surviving term is
    # a_0^dag a_1 n_0(n_0-2)|1,2> = -sqrt(1*2)*sqrt(2)|2,1> = -2|2,1>
    sp = FockSpace(2, 2)
    out = heal_jump_hardcore(0, sp) @ ket(sp, [1, 2])
    np.testing.assert_allclose(out, -2.0 * ket(sp, [2, 1]), atol=1e-14)


def test_hop_noise_examples():
    sp = FockSpace(2, 2)
    l = hop_noise_jump(0, sp)
    np.testing.assert_allclose(l @ ket(sp, [0, 1]), ket(sp, [1, 0]))
    assert np.abs(l @ ket(sp, [0, 0])).max() == 0
    np.testing.assert_allclose(l @ ket(sp, [1, 2]), 2 * ket(sp, [2, 1]), atol=1e-14)
    r = hop_noise_jump(0, sp, reverse=True)
    np.testing.assert_allclose(r @ ket(sp, [1, 0]), ket(sp, [0, 1]))


def test_hamiltonian_terms():
    sp = FockSpace(1, 2)
    kerr = hamiltonian_terms("kerr", 0.7, sp).toarray()
    assert kerr[2, 2] == pytest.approx(2 * 0.7)
    pen = hamiltonian_terms("penalty", 1.5, sp).toarray()
    np.testing.assert_allclose(np.diag(pen).real, [0.0, 1.5, 0.0])
    with pytest.raises(ValueError):
        hamiltonian_terms("zeeman", 1.0, sp)


@pytest.mark.parametrize("L,n_max,periodic", [(3, 2, False), (3, 3, False), (4, 2, True)])
def test_number_and_parity_conservation(L, n_max, periodic):
    sp = FockSpace(L, n_max, periodic)
    N = number_total(sp)
    ops = [pair_jump(j, sp) for j in range(len(sp.bonds))]
    ops += [hop_noise_jump(j, sp) for j in range(len(sp.bonds))]
    ops += [heal_jump(j, sp) for j in range(L)]
    for op in ops:
        assert commutator_norm(op, N) < 1e-12
    for j in range(len(sp.bonds)):
        for k in range(L):
            assert commutator_norm(pair_jump(j, sp), site_op("P", k, sp)) < 1e-12


def test_conjugation_outside_support_is_trivial():
    sp = FockSpace(3, 2)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    u = sla.expm(1j * (x + x.conj().T))
    U = embed(u, 2, sp).toarray()
    for op in (pair_jump(0, sp), heal_jump(0, sp), hop_noise_jump(0, sp)):
        m = op.toarray()
        assert np.abs(U @ m @ U.conj().T - m).max() < 1e-12


@pytest.mark.parametrize("make", [pair_jump, hop_noise_jump, heal_jump_hardcore])
def test_truncation_monotonicity(make):
    # matrix elements between states with occupations <= n_max - 2 do not
    # depend on the cutoff
    n_max = 4
    small, big = FockSpace(2, n_max), FockSpace(2, n_max + 1)
    with pytest.warns(UserWarning) if make is heal_jump_hardcore else nullcontext():
        a = make(0, small).toarray()
        b = make(0, big).toarray()
    low = [(i, j) for i in range(n_max - 1) for j in range(n_max - 1)]
    for x in low:
        for y in low:
            assert a[small.index(x), small.index(y)] == pytest.approx(b[big.index(x), big.index(y)])


def test_sparse_ordering_is_deterministic():
    sp = FockSpace(3, 2)
    m1, m2 = pair_jump(1, sp).matrix, pair_jump(1, sp).matrix
    assert m1.has_sorted_indices
    np.testing.assert_array_equal(m1.indices, m2.indices)
    np.testing.assert_array_equal(m1.data, m2.data)


def test_sector_enumeration():
    sp = FockSpace(4, 2)
    idx = sp.sector(4, [1, 1, 1, 1])
    occ = sp.digits[idx]
    assert len(idx) == 6  # choose 2 of 4 sites to hold a pair
    assert np.all(occ % 2 == 0) and np.all(occ.sum(axis=1) == 4)
    with pytest.raises(ValueError):
        sp.sector(2, [1, 1])


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 4), st.integers(2, 3), st.data())
def test_dense_product_matches_local_product(L, n_max, data):
    sp = FockSpace(L, n_max)
    j = data.draw(st.integers(0, L - 2))
    k = data.draw(st.integers(0, L - 1))
    a = pair_jump(j, sp)
    b = site_op("n", k, sp)
    np.testing.assert_allclose((a @ b).toarray(), a.toarray() @ b.toarray(), atol=1e-12)
    np.testing.assert_allclose(a.dag().toarray(), a.toarray().conj().T)
