import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from collabfs.exceptions import MaxItersExceeded, NSelectOutOfRange, SingularStart
from collabfs.linalg import volume
from collabfs.maxvol import (MaxvolParams, initial_rows, rect_maxvol, select_features,
                             square_maxvol)
from collabfs.mix import FeatureEmbeddings, MixParams, mix_matrices

FIXTURE = np.array([[1.0, 0], [0, 1], [10, 0], [0, 10]])


def brute_force_best(V):
    k = V.shape[1]
    return max(abs(np.linalg.det(V[list(c)])) for c in itertools.combinations(range(len(V)), k))


def brute_force_gains(V, chosen):
    # oracle: volume ratio of appending each leftover row, computed from scratch
    A = V[chosen]
    base = np.linalg.det(A.T @ A)
    gains = {}
    for i in range(len(V)):
        if i in chosen:
            continue
        B = V[list(chosen) + [i]]
        gains[i] = np.linalg.det(B.T @ B) / base
    return gains


class TestSquare:
    def test_fixture(self):
        res = square_maxvol(FIXTURE)
        assert set(res.indices.tolist()) == {2, 3}
        assert volume(FIXTURE[res.indices]) == pytest.approx(100.0)
        assert res.converged

    def test_identity_stack(self):
        V = np.vstack([np.eye(3), np.zeros((4, 3)), 0.5 * np.ones((2, 3))])
        res = square_maxvol(V)
        assert sorted(res.indices.tolist()) == [0, 1, 2]
        assert np.abs(res.coefficients).max() <= 1.0 + 1e-12

    def test_duplicate_rows(self):
        V = np.array([[3.0, 0], [3.0, 0], [0, 1], [0.5, 0.5]])
        res = square_maxvol(V)
        assert sorted(res.indices.tolist()) == [0, 2]

    def test_singular_start(self):
        with pytest.raises(SingularStart):
            initial_rows(np.array([[1.0, 2], [2, 4], [3, 6]]))

    def test_initial_rows_independent(self, rng):
        V = rng.standard_normal((30, 5))
        idx = initial_rows(V)
        assert len(set(idx.tolist())) == 5
        assert abs(np.linalg.det(V[idx])) > 0

    def test_iteration_budget_warns(self):
        # greedy start picks rows {1, 2} (volume 2.85); {0, 2} has volume 3
        V = np.array([[2.0, 0], [1.9, 1.2], [0, 1.5]])
        full = square_maxvol(V, MaxvolParams(tol=1.0001))
        assert full.n_swaps >= 1
        with pytest.warns(MaxItersExceeded):
            res = square_maxvol(V, MaxvolParams(tol=1.0001, max_iters=0))
        assert res.n_swaps == 0
        assert not res.converged

    def test_tol_validation(self):
        with pytest.raises(ValueError):
            MaxvolParams(tol=1.0)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, (12, 3), elements=st.floats(-10, 10)))
    def test_dominance_certificate(self, V):
        if np.linalg.matrix_rank(V) < 3 or np.linalg.cond(V) > 1e8:
            return
        res = square_maxvol(V)
        B = V @ np.linalg.inv(V[res.indices])
        assert np.abs(B).max() <= 1.05 + 1e-9

    def test_near_optimal_on_random(self):
        for seed in range(30):
            V = np.random.default_rng(seed).standard_normal((10, 3))
            res = square_maxvol(V)
            assert volume(V[res.indices]) >= brute_force_best(V) / 1.05 ** 3


class TestRect:
    def test_example_gain(self):
        V = np.vstack([FIXTURE, [5.0, 5.0]])
        r = rect_maxvol(V, 3)
        assert set(r.order[:2].tolist()) == {2, 3}
        assert r.order[2] == 4
        assert r.scores[2] == pytest.approx(1.5)
        gains = brute_force_gains(V, list(r.order[:2]))
        assert gains[4] == pytest.approx(1.5)
        assert gains[0] == pytest.approx(1.01)

    def test_n_select_k_is_square(self, rng):
        V = rng.standard_normal((20, 4))
        r = rect_maxvol(V, 4)
        np.testing.assert_array_equal(r.order, square_maxvol(V).indices)
        assert np.all(np.isinf(r.scores))

    def test_full_permutation(self, rng):
        V = rng.standard_normal((15, 3))
        r = rect_maxvol(V, 15)
        assert sorted(r.order.tolist()) == list(range(15))

    def test_gains_match_brute_force_and_decrease(self, rng):
        V = rng.standard_normal((25, 4))
        r = rect_maxvol(V, 12)
        for t in range(4, 12):
            gains = brute_force_gains(V, list(r.order[:t]))
            best = max(gains.values())
            assert r.scores[t] == pytest.approx(best, rel=1e-9)
            assert gains[int(r.order[t])] == pytest.approx(best, rel=1e-9)
        finite = r.scores[4:]
        assert np.all(np.diff(finite) <= 1e-12)

    def test_volume_nondecreasing_in_prefix(self, rng):
        V = rng.standard_normal((40, 5))
        r = rect_maxvol(V, 30)
        vols = [volume(V[r.order[:n]]) for n in range(5, 31)]
        assert np.all(np.diff(vols) >= -1e-9 * np.abs(vols[:-1]))

    def test_long_greedy_phase_with_refresh(self, rng):
        # more than one recompute period of greedy steps
        V = rng.standard_normal((300, 3))
        r = rect_maxvol(V, 200)
        gains = brute_force_gains(V, list(r.order[:150]))
        assert r.scores[150] == pytest.approx(max(gains.values()), rel=1e-8)

    def test_ties_lowest_index(self):
        V = np.array([[1.0, 0], [0, 1], [0.5, 0.5], [0.5, 0.5], [-0.5, 0.5]])
        r = rect_maxvol(V, 3)
        assert r.order[2] == 2

    def test_row_scaling_never_demotes(self, rng):
        for trial in range(40):
            V = rng.standard_normal((12, 3))
            n = 8
            base = rect_maxvol(V, n).order.tolist()
            row = int(rng.integers(0, 12))
            W = V.copy()
            W[row] *= 1.0 + 2 * rng.random()
            scaled = rect_maxvol(W, n).order.tolist()
            before = base.index(row) if row in base else n
            after = scaled.index(row) if row in scaled else n
            if before >= 3:
                # the greedy phase is a pure gain ordering
                assert after <= before

    def test_n_select_bounds(self, rng):
        V = rng.standard_normal((10, 3))
        with pytest.raises(NSelectOutOfRange):
            rect_maxvol(V, 2)
        with pytest.raises(NSelectOutOfRange):
            rect_maxvol(V, 11)


class TestSelectFeatures:
    def test_orthogonal_indicators_follow_norm_order(self):
        # each item carries one feature with its own frequency; alpha = 0
        counts = [1, 5, 3, 2, 4, 6]
        F = np.diag(np.asarray(counts, dtype=float))
        R = np.eye(len(counts))
        emb = mix_matrices(R, F, MixParams(alpha=0.0, k=3))
        norms = np.linalg.norm(emb.V, axis=1)
        r = select_features(emb, 3)
        expected = np.argsort(-norms, kind="stable")[:3]
        assert sorted(r.order.tolist()) == sorted(expected.tolist())

    def test_deterministic_and_bounds(self, small_planted):
        ds = small_planted.dataset
        emb = mix_matrices(ds.interactions, ds.features, MixParams(alpha=0.5, k=8, seed=3))
        a = select_features(emb, 20)
        b = select_features(emb, 20)
        np.testing.assert_array_equal(a.order, b.order)
        with pytest.raises(NSelectOutOfRange):
            select_features(emb, 7)

    def test_degenerate_embeddings_use_leading_columns(self):
        V = np.zeros((6, 3))
        V[:, :2] = np.random.default_rng(0).standard_normal((6, 2))
        emb = FeatureEmbeddings(V, np.array([2.0, 1.0, 0.0]), 2)
        r = select_features(emb, 4)
        assert len(r.order) == 4
        assert len(set(r.order.tolist())) == 4
