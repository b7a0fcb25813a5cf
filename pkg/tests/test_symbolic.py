import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wtasym.latents import LatentStructure, enumerate_code_matrix
from wtasym.nn import make_rng
from wtasym.symbolic import (build_activation_table, check_symbolic, decoding_matrix,
                             head_factor_assignment, localized_factors, readout_consistency,
                             recover_structured_permutation)
from wtasym.tasks import TaskBank
from wtasym.theory import enumerate_structured_permutations


def brute_symbolic(z, z_hat, i):
    """Try every subset of units; exponential, only for small codes."""
    k = z_hat.shape[1]
    rows_on = z[:, i] == 1
    for mask in range(1, 2 ** k):
        units = [j for j in range(k) if mask >> j & 1]
        sub = z_hat[:, units]
        if np.any(sub[~rows_on]):
            continue
        if np.all(sub[rows_on].any(axis=1)):
            return True
    return False


S22 = LatentStructure((2, 2))
C22 = enumerate_code_matrix(S22)


class TestScenarios:
    def test_identity_code(self):
        v = check_symbolic(C22, C22, S22, (2, 2))
        assert v.overall and v.symbolic_count == 4 and v.localized == 2
        assert [c.encoding for c in v.categories] == [(0,), (1,), (2,), (3,)]

    def test_shared_unit(self):
        # unit 0 fires for categories 0 and 2; nothing else encodes category 0
        z_hat = np.stack([C22[:, 0] + C22[:, 2] > 0, C22[:, 1], C22[:, 3]], axis=1).astype(float)
        v = check_symbolic(C22, z_hat, S22)
        assert not v.categories[0].symbolic and not v.categories[2].symbolic
        assert v.categories[1].symbolic and v.categories[3].symbolic
        assert not v.overall

    def test_ambiguous_unit_with_backup(self):
        # unit 4 fires for category 0 and also sometimes without it: it is excluded,
        # but unit 0 still encodes category 0
        z_hat = np.concatenate([C22, np.array([[1], [0], [1], [0]], dtype=float)], axis=1)
        z_hat[1, 4] = 1.0
        v = check_symbolic(C22, z_hat, S22)
        assert v.categories[0].symbolic and 4 not in v.categories[0].encoding
        assert v.overall

    def test_split_encoding(self):
        # category 0 is carried by two units that each fire for half of its samples
        z_hat = np.zeros((4, 3))
        z_hat[0, 0] = 1
        z_hat[1, 1] = 1
        z_hat[2:, 2] = 1
        v = check_symbolic(C22, z_hat, S22)
        assert v.categories[0].symbolic and v.categories[0].encoding == (0, 1)
        assert v.categories[1].symbolic

    def test_silent_units_ignored(self):
        z_hat = np.concatenate([C22, np.zeros((4, 2))], axis=1)
        v = check_symbolic(C22, z_hat, S22)
        assert v.overall and all(max(c.encoding) < 4 for c in v.categories)

    def test_unobserved_category(self):
        z = C22[:2]
        v = check_symbolic(z, z, S22)
        assert not v.categories[1].observed and v.categories[3].observed
        assert v.to_dict()["categories"][1]["status"] == "unobserved"
        assert not v.overall

    def test_constant_code(self):
        v = check_symbolic(C22, np.ones((4, 2)), S22)
        assert v.symbolic_count == 0


@given(st.integers(0, 100_000))
def test_matches_brute_force(seed):
    gen = np.random.default_rng(seed)
    n = int(gen.integers(1, 12))
    z = C22[gen.integers(0, 4, size=n)]
    z_hat = (gen.random((n, 4)) < 0.4).astype(float)
    v = check_symbolic(z, z_hat, S22)
    for i in range(4):
        if z[:, i].any():
            assert v.categories[i].symbolic == brute_symbolic(z, z_hat, i)


@given(st.integers(0, 100_000))
def test_row_order_invariance(seed):
    gen = np.random.default_rng(seed)
    z = C22[gen.integers(0, 4, size=10)]
    z_hat = (gen.random((10, 3)) < 0.5).astype(float)
    perm = gen.permutation(10)
    a = check_symbolic(z, z_hat, S22).to_dict()
    b = check_symbolic(z[perm], z_hat[perm], S22).to_dict()
    assert a == b


@given(st.integers(0, 100_000))
def test_more_evidence_never_helps(seed):
    # A category that fails on a subset of samples still fails on the full set.
    gen = np.random.default_rng(seed)
    z = C22[gen.integers(0, 4, size=12)]
    z_hat = (gen.random((12, 3)) < 0.5).astype(float)
    full = check_symbolic(z, z_hat, S22)
    part = check_symbolic(z[:6], z_hat[:6], S22)
    for i in range(4):
        if part.categories[i].observed and not part.categories[i].symbolic:
            assert not full.categories[i].symbolic


class TestActivationTable:
    def test_counts(self):
        t = build_activation_table(C22, C22)
        assert t.total == 4 and t.present.tolist() == [2, 2, 2, 2]
        assert np.array_equal(t.together, C22.T @ C22)
        assert np.all(t.together + t.absent_on == C22.sum(axis=0))

    def test_conditional_identity(self):
        cond = build_activation_table(C22, C22).conditional
        np.testing.assert_allclose(np.diag(cond), 1.0)
        assert np.all((cond >= 0) & (cond <= 1))

    def test_errors(self):
        with pytest.raises(ValueError):
            build_activation_table(np.zeros((0, 4)), np.zeros((0, 4)))
        with pytest.raises(ValueError):
            build_activation_table(C22, C22[:3])

    def test_csv_rows(self, tmp_path):
        build_activation_table(C22, C22[:, :3]).write_csv(tmp_path / "a.csv")
        lines = (tmp_path / "a.csv").read_text().splitlines()
        assert lines[0] == "category,neuron,probability" and len(lines) == 1 + 4 * 3


def test_localized_factors_counts_heads():
    # both factors symbolic, but factor 1 is spread over two heads
    s = LatentStructure((2, 2))
    z_hat = C22[:, [0, 1, 2, 3]]
    assert localized_factors(check_symbolic(C22, z_hat, s, (2, 2)), (2, 2)) == 2
    assert localized_factors(check_symbolic(C22, z_hat, s, (3, 1)), (3, 1)) == 1


def test_head_factor_assignment():
    s = LatentStructure((2, 3))
    C = enumerate_code_matrix(s)
    swapped = np.concatenate([C[:, 2:], C[:, :2]], axis=1)
    assert head_factor_assignment(build_activation_table(C, swapped), s, (3, 2)) == [1, 0]


class TestPermutationRecovery:
    def test_identity(self):
        sp = recover_structured_permutation(C22, C22, S22)
        assert sp is not None and np.array_equal(sp.matrix, np.eye(4))

    def test_every_structured_permutation(self):
        s = LatentStructure((2, 3, 2))
        C = enumerate_code_matrix(s)
        for sp in enumerate_structured_permutations(s):
            got = recover_structured_permutation(C, C @ sp.matrix, s)
            assert got == sp

    def test_random_rows_rejected(self):
        s = LatentStructure((3, 3))
        C = enumerate_code_matrix(s)
        gen = make_rng(0)
        for _ in range(20):
            assert recover_structured_permutation(C, C[gen.permutation(9)], s) is None

    def test_shape_mismatch(self):
        assert recover_structured_permutation(C22, C22[:, :3], S22) is None


def test_readout_consistency_and_decoding():
    s = LatentStructure((2, 2))
    bank = TaskBank.sample(s, 4, make_rng(0))
    sp = next(iter(enumerate_structured_permutations(s)))
    R = np.eye(4)[:, [2, 3, 0, 1]]
    C_hat = C22 @ R
    W_out = bank.W_folded @ R  # z W^T = (z R) (W R)^T for permutation R
    assert readout_consistency(bank.W_folded, W_out, C22, C_hat) < 1e-12
    assert sp.factor_map == (0, 1)
    G = decoding_matrix(bank.W_folded, W_out)
    np.testing.assert_allclose(C_hat @ G, C22, atol=1e-8)
