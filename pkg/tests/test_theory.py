import itertools

import numpy as np
import pytest

from wtasym.latents import LatentStructure, enumerate_code_matrix
from wtasym.nn import make_rng
from wtasym.theory import (StructuredPermutation, TwoValueViolation, column_sum_property,
                           count_structured_permutations, enumerate_structured_permutations,
                           is_structured_permutation, least_squares, verify_lemma1,
                           verify_structure, verify_theorem1)


def row_set_preserving(structure):
    """Column permutations that map the set of valid codes onto itself, by brute force."""
    C = enumerate_code_matrix(structure)
    rows = {r.tobytes() for r in C}
    out = []
    for perm in itertools.permutations(range(structure.l)):
        P = np.eye(structure.l)[:, perm]
        if {r.tobytes() for r in C @ P} == rows:
            out.append(P)
    return out


@pytest.mark.parametrize("counts,expected", [((2, 2), 8), ((2, 2, 2), 48), ((2, 3), 12), ((3,), 6),
                                             ((5, 8, 5, 3, 9), 2 * 120 * 40320 * 120 * 6 * 362880)])
def test_count_formula(counts, expected):
    assert count_structured_permutations(LatentStructure(counts)) == expected


@pytest.mark.parametrize("counts", [(2, 2), (2, 3), (2, 2, 2), (3, 2)])
def test_enumeration_matches_brute_force(counts):
    s = LatentStructure(counts)
    mats = {sp.matrix.tobytes() for sp in enumerate_structured_permutations(s)}
    brute = {P.tobytes() for P in row_set_preserving(s)}
    assert mats == brute
    assert len(mats) == count_structured_permutations(s)


class TestIsStructured:
    def test_identity(self):
        s = LatentStructure((2, 3))
        ok, sp = is_structured_permutation(np.eye(5), s)
        assert ok and sp.factor_map == (0, 1) and sp.within == ((0, 1), (0, 1, 2))

    def test_block_swap_2x2(self):
        s = LatentStructure((2, 2))
        R = np.eye(4)[:, [2, 3, 0, 1]]
        ok, sp = is_structured_permutation(R, s)
        assert ok and sp.factor_map == (1, 0)
        assert np.array_equal(sp.matrix, R)

    def test_mixing_blocks_rejected(self):
        s = LatentStructure((2, 2))
        assert not is_structured_permutation(np.eye(4)[:, [0, 2, 1, 3]], s)[0]

    def test_unequal_blocks_cannot_swap(self):
        s = LatentStructure((2, 3))
        assert not is_structured_permutation(np.eye(5)[:, [2, 3, 4, 0, 1]], s)[0]

    def test_non_binary_rejected(self):
        s = LatentStructure((2, 2))
        assert not is_structured_permutation(np.eye(4) * 0.5, s)[0]

    def test_wrong_shape(self):
        with pytest.raises(ValueError):
            is_structured_permutation(np.eye(3), LatentStructure((2, 2)))

    def test_matrix_roundtrip(self):
        s = LatentStructure((3, 2, 3))
        for sp in itertools.islice(enumerate_structured_permutations(s), 0, None, 7):
            ok, back = is_structured_permutation(sp.matrix, s)
            assert ok and back == sp


def test_group_closure():
    s = LatentStructure((2, 2))
    mats = [sp.matrix for sp in enumerate_structured_permutations(s)]
    keys = {m.tobytes() for m in mats}
    for a, b in itertools.product(mats, mats):
        assert (a @ b).tobytes() in keys
        assert a.T.tobytes() in keys


def test_column_sum_property():
    for counts in [(2, 2), (2, 3), (5, 8, 5, 3, 9)]:
        s = LatentStructure(counts)
        assert column_sum_property(enumerate_code_matrix(s), s)
    s = LatentStructure((2, 2))
    assert not column_sum_property(enumerate_code_matrix(s)[:3], s)


class TestTwoValueDecomposition:
    def test_identity_decomposition(self):
        s = LatentStructure((2, 2))
        dec = verify_lemma1(enumerate_code_matrix(s), np.eye(4), s)
        assert np.array_equal(dec.Q, np.eye(4)) and not dec.b.any()

    def test_shifted_representation(self):
        # Adding t to block 0 and subtracting t from block 1 leaves C R unchanged.
        s = LatentStructure((2, 2))
        C = enumerate_code_matrix(s)
        shift = np.zeros((4, 4))
        shift[0:2, :] = 0.7
        shift[2:4, :] = -0.7
        dec = verify_lemma1(C, np.eye(4) + shift, s)
        assert np.array_equal(dec.Q, np.eye(4)) and not dec.b.any()

    def test_constant_column(self):
        # a column equal to one everywhere is b = 1 with Q = 0
        s = LatentStructure((2, 2))
        C = enumerate_code_matrix(s)
        R = np.zeros((4, 4))
        R[0:2, 0] = 1.0
        dec = verify_lemma1(C, R, s)
        assert dec.b.tolist() == [1, 0, 0, 0] and not dec.Q[:, 0].any()

    def test_non_binary_product(self):
        s = LatentStructure((2, 2))
        with pytest.raises(ValueError):
            verify_lemma1(enumerate_code_matrix(s), 2 * np.eye(4), s)

    def test_two_value_violation(self):
        s = LatentStructure((3,))
        C = enumerate_code_matrix(s)
        with pytest.raises((TwoValueViolation, ValueError)):
            verify_lemma1(C, np.diag([1.0, 0.5, 1.0]), s)


def test_least_squares_exact_for_structured():
    s = LatentStructure((3, 3))
    C = enumerate_code_matrix(s)
    sp = next(itertools.islice(enumerate_structured_permutations(s), 17, None))
    _, resid = least_squares(C, C @ sp.matrix)
    assert resid < 1e-10


class TestVerify:
    def test_two_by_two(self):
        rep = verify_theorem1(2, 2)
        assert rep.bijections_tested == 24 and rep.structured == 8 and rep.violations == 0
        assert rep.realizable == 8 and not rep.conjecture

    def test_three_binary_factors(self):
        rep = verify_theorem1(3, 2)
        assert rep.bijections_tested == 40320
        assert rep.structured == rep.expected_structured == 48 and rep.holds

    def test_mixed_sizes_labelled_conjecture(self):
        rep = verify_structure(LatentStructure((2, 3)), "sampled", trials=200, rng=make_rng(0))
        assert rep.conjecture and rep.holds and rep.structured >= 12
        assert rep.to_dict()["label"] == "conjecture check"

    def test_sampled_mode_larger(self):
        rep = verify_theorem1(2, 3, mode="sampled", trials=300, rng=make_rng(1))
        assert rep.structured >= 72 and rep.violations == 0

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            verify_theorem1(2, 1)
        with pytest.raises(ValueError):
            verify_theorem1(0, 2)
        with pytest.raises(ValueError):
            verify_theorem1(3, 3)  # 27! bijections
        with pytest.raises(ValueError):
            verify_structure(LatentStructure((2, 2)), mode="bogus")


def test_structured_permutation_is_hashable():
    s = LatentStructure((2,))
    assert len({StructuredPermutation(s, (0,), (0, 1)), StructuredPermutation(s, (0,), (0, 1))}) == 1
