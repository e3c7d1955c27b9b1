import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from collabfs.evaluation import (EvalConfig, batch_metrics, category_proportions,
                                 coverage_at_k, jaccard, mean_ci, measure_times, method_grid,
                                 mrr_at_k, n_select_for, random_search, recall_at_k,
                                 run_experiment, split_items, split_sizes, stability_matrix)
from collabfs.exceptions import TooFewItems
from collabfs.mix import MixParams
from collabfs.ranking import FeatureRanking

TINY = dict(n_repeats=2, n_search_samples=3, selection_fractions=(0.1,),
            mix_grid={"alpha": [0.8], "p": [0.0], "k": [8]},
            cfecbf_grid={"lambda1": [0.0], "lambda2": [0.0]}, cfecbf_epochs=20)


class TestSplit:
    def test_sizes(self):
        assert split_sizes(10) == (7, 1, 2)
        with pytest.raises(TooFewItems):
            split_sizes(3)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(10, 300), st.integers(0, 2**32 - 1))
    def test_partition(self, n, seed):
        s = split_items(n, seed=seed)
        union = np.concatenate([s.train_items, s.valid_items, s.test_items])
        assert sorted(union.tolist()) == list(range(n))
        sizes = split_sizes(n)
        assert (len(s.train_items), len(s.valid_items), len(s.test_items)) == sizes
        assert abs(sizes[1] - 0.1 * n) <= 1 and abs(sizes[2] - 0.2 * n) <= 1

    def test_seeds_differ(self):
        tests = {tuple(split_items(50, seed=s).test_items) for s in range(50)}
        assert len(tests) >= 45


class TestMetrics:
    def test_recall(self):
        assert recall_at_k([1, 2], {1}, 10) == 1.0
        assert recall_at_k([2, 3], {1}, 10) == 0.0
        assert recall_at_k([1, 3], {1, 2}, 10) == 0.5
        assert recall_at_k([1], set(), 10) is None

    def test_mrr(self):
        assert mrr_at_k([5, 1], {5}, 10) == 1.0
        assert mrr_at_k([0, 1, 2, 5], {5}, 10) == 0.25
        assert mrr_at_k([0, 1], {5}, 10) == 0.0

    def test_coverage(self):
        assert coverage_at_k([[0, 1], [0, 1]], range(4), 2) == 0.5
        assert coverage_at_k([[0, 1], [2, 3]], range(4), 2) == 1.0
        assert coverage_at_k([[0], [1]], range(4), 1) == 0.5

    def test_jaccard(self):
        assert jaccard({1, 2, 3}, {2, 3, 4}) == 0.5
        assert jaccard({1}, {1}) == 1.0
        assert jaccard({1}, {2}) == 0.0
        assert jaccard(set(), set()) == 1.0

    @settings(max_examples=60, deadline=None)
    @given(st.permutations(range(12)), st.sets(st.integers(0, 11), min_size=1),
           st.integers(1, 11))
    def test_bounds_and_monotone(self, recs, holdout, k):
        r1, r2 = recall_at_k(recs, holdout, k), recall_at_k(recs, holdout, k + 1)
        assert 0 <= r1 <= r2 <= 1
        assert 0 <= mrr_at_k(recs, holdout, k) <= 1

    @settings(max_examples=40, deadline=None)
    @given(st.sets(st.integers(0, 9)), st.sets(st.integers(0, 9)))
    def test_jaccard_symmetry(self, a, b):
        assert jaccard(a, b) == jaccard(b, a)
        assert (jaccard(a, b) == 1.0) == (a == b)

    def test_batch_matches_per_user(self, rng):
        scores = rng.random((6, 15))
        holdout = (rng.random((6, 15)) < 0.2).astype(float)
        holdout[0] = 0
        m = batch_metrics(scores, holdout, 5)
        recalls, mrrs = [], []
        for u in range(6):
            recs = np.argsort(-scores[u], kind="stable")
            h = set(np.flatnonzero(holdout[u]).tolist())
            if h:
                recalls.append(recall_at_k(recs, h, 5))
                mrrs.append(mrr_at_k(recs, h, 5))
        assert m["recall"] == pytest.approx(np.mean(recalls))
        assert m["mrr"] == pytest.approx(np.mean(mrrs))
        assert m["n_users"] == len(recalls)


class TestProtocolPieces:
    def test_mean_ci(self):
        assert mean_ci([0.5]) == (0.5, None)
        mean, hw = mean_ci([1.0, 2.0, 3.0])
        assert mean == 2.0
        assert hw == pytest.approx(4.302652729911275 * 1.0 / np.sqrt(3))

    def test_n_select_for(self):
        assert n_select_for("random", 0.1, 300) == 30
        assert n_select_for("maxvol", 0.01, 300, k=16) == 16
        assert n_select_for("all", 0.01, 300) == 300

    def test_method_grid_filters_tall(self):
        cfg = EvalConfig(mix_grid={"alpha": [0.5], "p": [0.0], "k": [8, 500]})
        grid = method_grid("maxvol", cfg, 100, 300)
        assert [c["selector"]["k"] for c in grid] == [8]
        forced = method_grid("maxvol_alpha0", cfg, 100, 300)
        assert {c["selector"]["alpha"] for c in forced} == {0.0}

    def test_search_single_config(self, small_planted):
        ds = small_planted.dataset
        cfg = EvalConfig(**TINY)
        res = random_search(ds, split_items(ds, seed=0), cfg, "maxvol")
        assert res.best["selector"] == {"alpha": 0.8, "k": 8, "p": 0.0}
        assert len(res.trials) == 3

    def test_search_tie_goes_to_first_sampled(self, small_planted):
        # two configurations with identical selector output
        ds = small_planted.dataset
        cfg = EvalConfig(**{**TINY, "model_grid": {"neighbors": [None, 10_000]}})
        res = random_search(ds, split_items(ds, seed=0), cfg, "random")
        first = res.trials[0]
        assert res.best == first[0]
        assert all(r == first[1] for _, r in res.trials)

    def test_search_best_beats_median(self, small_planted):
        ds = small_planted.dataset
        grid = {"alpha": [0.0, 0.5, 0.8], "p": [0.0, -0.5], "k": [4, 8]}
        cfg = EvalConfig(**{**TINY, "mix_grid": grid, "n_search_samples": 12})
        res = random_search(ds, split_items(ds, seed=1), cfg, "maxvol")
        recalls = [r for _, r in res.trials]
        assert res.best_recall == max(recalls)
        assert res.best_recall >= np.median(recalls)
        assert len({json.dumps(c, sort_keys=True) for c, _ in res.trials}) == 12

    def test_measure_times(self):
        calls = []
        fit_ms, pred_ms = measure_times(lambda: calls.append(1), lambda m: None, repetitions=3)
        assert len(calls) == 4
        assert fit_ms >= 0 and pred_ms >= 0
        with pytest.raises(ValueError):
            measure_times(lambda: None, lambda m: None, repetitions=1)


class TestExperiment:
    def test_single_repeat_has_no_ci(self, small_planted):
        cfg = EvalConfig(**{**TINY, "n_repeats": 1})
        report = run_experiment(small_planted.dataset, cfg, ["random"])
        assert len(report.rows) == 1
        assert report.aggregates()[0]["recall_ci"] is None
        assert len(report.to_csv().strip().splitlines()) == 2

    def test_random_at_full_fraction_equals_all(self, small_planted):
        cfg = EvalConfig(**{**TINY, "selection_fractions": (1.0,), "n_repeats": 1})
        report = run_experiment(small_planted.dataset, cfg, ["random", "all"])
        r = {row["method"]: row["recall"] for row in report.rows}
        assert abs(r["random"] - r["all"]) <= 1e-12

    def test_deterministic_and_parallel(self, small_planted):
        cfg = EvalConfig(**TINY)
        methods = ["maxvol", "random", "popular", "cfecbf", "norm"]
        a = run_experiment(small_planted.dataset, cfg, methods)
        b = run_experiment(small_planted.dataset, cfg, methods)
        c = run_experiment(small_planted.dataset, cfg, methods, jobs=2)
        assert a.to_json() == b.to_json() == c.to_json()
        assert "fit_ms" not in a.to_json()
        assert "fit_ms" in a.timings_csv()

    def test_report_tables(self, small_planted):
        cfg = EvalConfig(**TINY)
        report = run_experiment(small_planted.dataset, cfg, ["maxvol", "random"])
        mean, hw = report.paired_difference("maxvol", "random", 0.1)
        assert hw is not None
        fractions, rows = report.improvement_table()
        assert fractions == [0.1]
        assert report.improvement_csv().splitlines()[0] == "model,10%"
        assert "maxvol" in report.summary()
        with pytest.raises(KeyError):
            report.paired_difference("maxvol", "cfecbf", 0.1)

    def test_unknown_method(self, small_planted):
        with pytest.raises(ValueError):
            run_experiment(small_planted.dataset, EvalConfig(**TINY), ["magic"])


class TestStabilityAndCategories:
    def test_single_and_duplicate_configs(self, small_planted):
        ds = small_planted.dataset
        labels, J = stability_matrix(ds, [MixParams(0.5, 0.0, 8)])
        assert J.tolist() == [[1.0]]
        # the seed only matters on the randomized SVD path
        labels, J = stability_matrix(ds, [MixParams(0.5, 0.0, 8, seed=0),
                                          MixParams(0.5, 0.0, 8, seed=7)])
        assert J[0, 1] == 1.0
        assert labels[0] == "alpha=0.5,p=0,k=8"

    def test_category_proportions(self):
        r = FeatureRanking([0, 2, 1, 3], None, "x", 4)
        props = category_proportions(r, ["a", "b", "a", None], [0.5, 1.0])
        assert props == {"a": [1.0, 1.0], "b": [0.0, 1.0]}
