import numpy as np
import pytest

from ncwfa.tensor_core import (
    TTTrain,
    matricize,
    mode_product,
    pinv_from_svd,
    rank_factorize,
    tt_contract_features,
    tt_to_dense,
)


def mode_product_loops(T, M, axis):
    """Independent oracle: explicit loop contraction of mode `axis` with M."""
    T = np.asarray(T, dtype=float)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    out_shape = list(T.shape)
    out_shape[axis] = M.shape[0]
    out = np.zeros(out_shape)
    for idx in np.ndindex(*out_shape):
        acc = 0.0
        for q in range(T.shape[axis]):
            src = list(idx)
            src[axis] = q
            acc += M[idx[axis], q] * T[tuple(src)]
        out[idx] = acc
    return out


class TestModeProduct:
    def test_identity_leaves_tensor_unchanged(self):
        rng = np.random.default_rng(0)
        T = rng.normal(size=(2, 3, 2))
        np.testing.assert_array_equal(mode_product(T, np.eye(3), axis=1), T)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        T = rng.normal(size=(2, 3, 4))
        for axis in range(3):
            M = rng.normal(size=(5, T.shape[axis]))
            np.testing.assert_allclose(
                mode_product(T, M, axis), mode_product_loops(T, M, axis), atol=1e-12
            )

    def test_composition_same_mode(self):
        # (T x_n A) x_n B == T x_n (B @ A)
        rng = np.random.default_rng(2)
        T = rng.normal(size=(2, 3, 2))
        A = rng.normal(size=(3, 3))
        B = rng.normal(size=(3, 3))
        lhs = mode_product(mode_product(T, A, 1), B, 1)
        rhs = mode_product(T, B @ A, 1)
        scale = np.abs(rhs).max()
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * max(scale, 1.0))

    def test_products_on_distinct_modes_commute(self):
        rng = np.random.default_rng(3)
        T = rng.normal(size=(2, 3, 4))
        A = rng.normal(size=(5, 2))
        B = rng.normal(size=(6, 3))
        lhs = mode_product(mode_product(T, A, 0), B, 1)
        rhs = mode_product(mode_product(T, B, 1), A, 0)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_vector_product_drops_axis(self):
        # hand contraction: rows of [[1,2],[3,4]] weighted by [1,1] -> [4, 6]
        T = np.array([[1.0, 2.0], [3.0, 4.0]])
        v = np.array([1.0, 1.0])
        out = mode_product(T, v, axis=0)
        np.testing.assert_allclose(out, [4.0, 6.0])
        np.testing.assert_allclose(out, mode_product_loops(T, v[None, :], 0)[0])

    def test_dimension_mismatch_names_mode(self):
        T = np.zeros((2, 3))
        with pytest.raises(ValueError, match="mode 1"):
            mode_product(T, np.eye(4), axis=1)
        with pytest.raises(ValueError, match="mode"):
            mode_product(T, np.eye(2), axis=5)


class TestMatricize:
    def test_single_group_is_vectorization(self):
        rng = np.random.default_rng(4)
        T = rng.normal(size=(2, 3, 4))
        v = matricize(T, (3,))
        assert v.shape == (24,)
        np.testing.assert_array_equal(v.reshape(T.shape), T)

    def test_grouping_1_2_index_arithmetic(self):
        # (i, j) entry of the 2 x 12 unfolding is T[i, j1, j2] with
        # j = j1 * 4 + j2 under the row-major linearization
        rng = np.random.default_rng(5)
        T = rng.normal(size=(2, 3, 4))
        M = matricize(T, (1, 2))
        assert M.shape == (2, 12)
        for i in range(2):
            for j1 in range(3):
                for j2 in range(4):
                    assert M[i, j1 * 4 + j2] == T[i, j1, j2]

    def test_rank_one_tensor_unfolds_to_rank_one_matrix(self):
        rng = np.random.default_rng(6)
        vecs = [rng.normal(size=2) for _ in range(4)]
        T = np.einsum("a,b,c,d->abcd", *vecs)
        M = matricize(T, (2, 2))
        assert M.shape == (4, 4)
        s = np.linalg.svd(M, compute_uv=False)
        assert s[1] < 1e-12 * s[0]

    def test_round_trip_exact(self):
        rng = np.random.default_rng(7)
        T = rng.normal(size=(2, 2, 2, 2))
        M = matricize(T, (2, 2))
        np.testing.assert_array_equal(M.reshape(T.shape), T)

    def test_invalid_grouping(self):
        with pytest.raises(ValueError, match="grouping"):
            matricize(np.zeros((2, 2)), (3,))


class TestTTTrain:
    def test_single_core_basis_selection(self):
        rng = np.random.default_rng(8)
        core = rng.normal(size=(3, 4))
        tt = TTTrain([core])
        e1 = np.array([1.0, 0.0, 0.0])
        np.testing.assert_array_equal(tt_contract_features(tt, [e1]), core[0])

    def test_contract_matches_kron_oracle(self):
        rng = np.random.default_rng(9)
        d, k = 3, 4
        tt = TTTrain(
            [rng.normal(size=(d, k)), rng.normal(size=(k, d, k)), rng.normal(size=(k, d, k))]
        )
        feats = [rng.normal(size=d) for _ in range(3)]
        dense = tt_to_dense(tt)
        psi = np.kron(np.kron(feats[0], feats[1]), feats[2])
        expected = psi @ matricize(dense, (3, 1))
        np.testing.assert_allclose(tt_contract_features(tt, feats), expected, atol=1e-10)

    def test_empty_features_returns_left_boundary(self):
        left = np.array([0.5, -1.0])
        tt = TTTrain([], left=left)
        np.testing.assert_array_equal(tt_contract_features(tt, []), left)

    def test_contract_length_mismatch(self):
        tt = TTTrain([np.zeros((2, 3))])
        with pytest.raises(ValueError, match="feature"):
            tt_contract_features(tt, [])

    def test_left_boundary_with_transition_cores(self):
        rng = np.random.default_rng(10)
        k, d = 3, 2
        left = rng.normal(size=k)
        core = rng.normal(size=(k, d, k))
        tt = TTTrain([core], left=left)
        f = rng.normal(size=d)
        expected = np.einsum("a,adb,d->b", left, core, f)
        np.testing.assert_allclose(tt_contract_features(tt, [f]), expected)

    def test_to_dense_one_core_verbatim(self):
        core = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(tt_to_dense(TTTrain([core])), core)

    def test_to_dense_two_cores_is_matrix_product(self):
        rng = np.random.default_rng(11)
        G1 = rng.normal(size=(2, 2))
        G2 = rng.normal(size=(2, 3))
        dense = tt_to_dense(TTTrain([G1, G2]))
        for i in range(2):
            for j in range(3):
                assert np.isclose(dense[i, j], G1[i] @ G2[:, j])

    def test_dense_against_basis_contraction(self):
        rng = np.random.default_rng(12)
        d, k = 2, 3
        tt = TTTrain(
            [
                rng.normal(size=(d, k)),
                rng.normal(size=(k, d, k)),
                rng.normal(size=(k, d, k)),
                rng.normal(size=(k, d, k)),
            ]
        )
        dense = tt_to_dense(tt)
        eye = np.eye(d)
        for idx in np.ndindex(d, d, d, d):
            feats = [eye[i] for i in idx]
            np.testing.assert_allclose(
                tt_contract_features(tt, feats), dense[idx], atol=1e-10
            )

    def test_size_cap(self):
        rng = np.random.default_rng(13)
        cores = [rng.normal(size=(10, 2))] + [rng.normal(size=(2, 10, 2))] * 7
        tt = TTTrain(cores)
        with pytest.raises(ValueError, match="cap"):
            tt_to_dense(tt, size_cap=10**6)

    def test_shape_validation(self):
        with pytest.raises(ValueError, match="bond"):
            TTTrain([np.zeros((2, 3)), np.zeros((4, 2, 3))])
        with pytest.raises(ValueError, match="mode dimension"):
            TTTrain([np.zeros((2, 3)), np.zeros((3, 5, 3)), np.zeros((3, 2, 3))])


class TestRankFactorize:
    def test_rank_one_exact(self):
        rng = np.random.default_rng(14)
        u = rng.normal(size=5)
        v = rng.normal(size=7)
        M = np.outer(u, v)
        res = rank_factorize(M, 1)
        assert np.linalg.norm(M - res.P @ res.S) < 1e-12

    def test_exact_rank_three(self):
        rng = np.random.default_rng(15)
        M = rng.normal(size=(8, 3)) @ rng.normal(size=(3, 10))
        res = rank_factorize(M, 3)
        assert res.residual < 1e-10
        assert np.linalg.norm(M - res.P @ res.S) < 1e-10

    def test_eckart_young_residual(self):
        rng = np.random.default_rng(16)
        M = rng.normal(size=(8, 3)) @ rng.normal(size=(3, 10))
        s = np.linalg.svd(M, compute_uv=False)
        res = rank_factorize(M, 2)
        assert abs(res.residual - s[2]) < 1e-10

    def test_residual_monotone_in_rank(self):
        rng = np.random.default_rng(17)
        M = rng.normal(size=(6, 9))
        residuals = [rank_factorize(M, R).residual for R in range(1, 7)]
        assert all(a >= b - 1e-12 for a, b in zip(residuals, residuals[1:]))

    def test_bad_rank(self):
        with pytest.raises(ValueError, match="rank"):
            rank_factorize(np.zeros((3, 3)), 4)
        with pytest.raises(ValueError, match="rank"):
            rank_factorize(np.zeros((3, 3)), 0)

    def test_pinv_from_svd_matches_numpy(self):
        rng = np.random.default_rng(18)
        M = rng.normal(size=(6, 4))
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
        np.testing.assert_allclose(pinv_from_svd(U, s, Vt), np.linalg.pinv(M), atol=1e-10)

    def test_pinv_truncates_tiny_singular_values(self):
        U = np.eye(3)
        Vt = np.eye(3)
        s = np.array([1.0, 0.5, 1e-14])
        P = pinv_from_svd(U, s, Vt)
        np.testing.assert_allclose(np.diag(P), [1.0, 2.0, 0.0])
