import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from collabfs.exceptions import AlphaOutOfRange, RankTooLarge
from collabfs.linalg import truncated_svd
from collabfs.mix import (FeatureEmbeddings, MixParams, blend_similarity,
                          cosine_item_similarity, embed_features, inject_collaborative,
                          item_popularity, mix, mix_matrices, tfidf_weight)


def cosine_oracle(R):
    # plain loop over column pairs
    R = np.asarray(R, dtype=np.float64)
    n = R.shape[1]
    S = np.eye(n)
    for a in range(n):
        for b in range(n):
            na, nb = np.linalg.norm(R[:, a]), np.linalg.norm(R[:, b])
            if a != b and na > 0 and nb > 0:
                S[a, b] = R[:, a] @ R[:, b] / (na * nb)
    return S


def random_problem(rng, n_users=30, n_items=25, n_features=12):
    R = (rng.random((n_users, n_items)) < 0.2).astype(float)
    F = (rng.random((n_items, n_features)) < 0.3) * rng.integers(1, 4, (n_items, n_features))
    F[np.arange(n_items), rng.integers(0, n_features, n_items)] = 1.0
    return sp.csr_matrix(R), sp.csr_matrix(F.astype(float))


class TestTfidf:
    def test_example(self):
        Fw = tfidf_weight(np.array([[1.0, 0], [1, 1]])).toarray()
        np.testing.assert_allclose(Fw, [[1, 0], [1, 1.4054651]], atol=1e-7)

    def test_zero_column_and_single_item(self):
        Fw = tfidf_weight(np.array([[1.0, 0], [2, 0]])).toarray()
        assert np.all(np.isfinite(Fw))
        assert np.all(Fw[:, 1] == 0)
        assert tfidf_weight(np.array([[1.0]])).toarray().tolist() == [[1.0]]

    def test_matches_formula(self, rng):
        F = rng.integers(0, 3, (9, 6)).astype(float)
        df = (F > 0).sum(axis=0)
        expected = F * (np.log(10 / (1 + df)) + 1)
        np.testing.assert_allclose(tfidf_weight(F).toarray(), expected, rtol=1e-14)


class TestCosine:
    def test_examples(self):
        S = cosine_item_similarity(np.array([[1.0, 1], [0, 1]]))
        assert S[0, 1] == pytest.approx(0.7071068, abs=1e-7)
        np.testing.assert_array_equal(cosine_item_similarity(np.eye(3)), np.eye(3))
        S = cosine_item_similarity(np.array([[1.0, 1, 0], [2, 2, 1]]))
        assert S[0, 1] == pytest.approx(1.0)

    def test_zero_column(self):
        S = cosine_item_similarity(np.array([[1.0, 0], [1, 0]]))
        np.testing.assert_array_equal(S, np.eye(2))

    def test_matches_loop_oracle_and_scale(self, rng):
        R = rng.random((15, 8)) * (rng.random((15, 8)) < 0.4)
        S = cosine_item_similarity(R)
        np.testing.assert_allclose(S, cosine_oracle(R), atol=1e-12)
        np.testing.assert_allclose(cosine_item_similarity(2 * R), S, atol=1e-12)
        np.testing.assert_allclose(cosine_item_similarity(R[::-1]), S, atol=1e-12)


class TestBlend:
    def test_limits(self, rng):
        sim = cosine_item_similarity(rng.random((10, 5)))
        np.testing.assert_array_equal(blend_similarity(sim, 0.0), np.eye(5))
        np.testing.assert_array_equal(blend_similarity(sim, 1.0), sim)

    def test_half(self):
        S = blend_similarity(np.array([[1, 0.7071068], [0.7071068, 1]]), 0.5)
        np.testing.assert_allclose(S, [[1, 0.3535534], [0.3535534, 1]], atol=1e-7)

    def test_alpha_range(self):
        with pytest.raises(AlphaOutOfRange):
            blend_similarity(np.eye(2), 1.5)
        with pytest.raises(AlphaOutOfRange):
            MixParams(alpha=-0.1)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (12, 7), elements=st.floats(0, 1)), st.floats(0, 1))
    def test_min_eigenvalue_bound(self, R, alpha):
        S = blend_similarity(cosine_item_similarity(R), alpha)
        assert np.linalg.eigvalsh(S)[0] >= (1 - alpha) - 1e-10


class TestInject:
    def test_identity(self, rng):
        Fw = sp.csr_matrix(rng.random((6, 4)))
        out = inject_collaborative(Fw, np.eye(6), np.arange(6), 0.0)
        assert np.max(np.abs(out - Fw.toarray())) <= 1e-12

    def test_popularity_scaling(self):
        out = inject_collaborative(np.eye(2), np.eye(2), [2, 1], 1.0)
        np.testing.assert_allclose(out, [[2, 0], [0, 1]])
        out = inject_collaborative(np.eye(2), np.eye(2), [2, 1], -1.0)
        np.testing.assert_allclose(out, [[0.5, 0], [0, 1]])

    def test_zero_popularity_neutral(self):
        out = inject_collaborative(np.eye(2), np.eye(2), [0, 4], -1.0)
        np.testing.assert_allclose(out, [[1, 0], [0, 0.25]])

    def test_matches_dense_formula(self, rng):
        R, F = random_problem(rng)
        Fw = tfidf_weight(F)
        S = blend_similarity(cosine_item_similarity(R), 0.6)
        pops = item_popularity(R)
        L = np.linalg.cholesky(S)
        d = np.where(pops > 0, pops, 1.0) ** -0.5
        expected = np.diag(d) @ L.T @ Fw.toarray()
        np.testing.assert_allclose(inject_collaborative(Fw, S, pops, -0.5), expected,
                                   atol=1e-12)


class TestEmbed:
    def test_rank_one(self, rng):
        u, v = rng.random(8), rng.random(5)
        emb = embed_features(np.outer(u, v), 1)
        recon = np.outer(u, v) @ emb.V @ emb.V.T
        assert np.linalg.norm(recon - np.outer(u, v)) <= 1e-10

    def test_rank_too_large(self):
        with pytest.raises(RankTooLarge):
            embed_features(np.ones((10, 4)), 4)

    def test_eigen_oracle(self, rng):
        A = rng.standard_normal((40, 12))
        emb = embed_features(A, 4)
        ev = np.sqrt(np.linalg.eigvalsh(A.T @ A)[::-1][:4])
        np.testing.assert_allclose(emb.sigma, ev, rtol=1e-6)
        np.testing.assert_allclose(emb.V.T @ emb.V, np.eye(4), atol=1e-12)

    def test_save_load_and_csv(self, rng, tmp_path):
        emb = embed_features(rng.standard_normal((20, 9)), 3)
        emb.save(tmp_path / "e.bin")
        back = FeatureEmbeddings.load(tmp_path / "e.bin")
        np.testing.assert_array_equal(back.V, emb.V)
        np.testing.assert_array_equal(back.sigma, emb.sigma)
        assert back.effective_rank == emb.effective_rank
        emb.to_csv(tmp_path / "e.csv", [f"f{i}" for i in range(9)])
        lines = (tmp_path / "e.csv").read_text().splitlines()
        assert lines[0] == "feature,v0,v1,v2"
        assert lines[1].startswith("sigma,")
        assert len(lines) == 11


class TestMix:
    def test_alpha_zero_is_content_only(self, rng):
        R, F = random_problem(rng)
        emb = mix_matrices(R, F, MixParams(alpha=0.0, p=0.0, k=4))
        ref = truncated_svd(tfidf_weight(F), 4)
        np.testing.assert_allclose(emb.V, ref.V, atol=1e-10)

    def test_feature_permutation_equivariance(self, rng):
        R, F = random_problem(rng)
        perm = rng.permutation(F.shape[1])
        params = MixParams(alpha=0.7, p=-0.5, k=4)
        a = mix_matrices(R, F, params)
        b = mix_matrices(R, F[:, perm], params)
        np.testing.assert_allclose(b.V, a.V[perm], atol=1e-9)

    def test_user_order_invariance(self, rng):
        R, F = random_problem(rng)
        params = MixParams(alpha=0.5, p=0.5, k=3)
        a = mix_matrices(R, F, params)
        b = mix_matrices(R[rng.permutation(R.shape[0])], F, params)
        np.testing.assert_allclose(a.V, b.V, atol=1e-10)

    def test_deterministic(self, rng):
        R, F = random_problem(rng)
        params = MixParams(alpha=0.5, k=3, seed=9)
        np.testing.assert_array_equal(mix_matrices(R, F, params).V,
                                      mix_matrices(R, F, params).V)

    def test_planted_rows_are_heavier(self, small_planted):
        emb = mix(small_planted.dataset, MixParams(alpha=0.8, p=0.0, k=12))
        norms = np.linalg.norm(emb.V, axis=1)
        planted = np.zeros(len(norms), dtype=bool)
        planted[small_planted.planted] = True
        assert norms[planted].mean() > norms[~planted].mean()

    def test_custom_similarity(self, rng):
        R, F = random_problem(rng)
        emb = mix_matrices(R, F, MixParams(alpha=1.0, k=3),
                           similarity=lambda R: np.eye(R.shape[1]))
        ref = mix_matrices(R, F, MixParams(alpha=0.0, k=3))
        np.testing.assert_allclose(emb.V, ref.V, atol=1e-10)
