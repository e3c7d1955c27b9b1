"""Cold-start evaluation protocol.

Items are split into disjoint train/validation/test sets. Feature
selection and the ItemKNN model see only train items and their
interactions; validation items drive a random hyperparameter search on
Recall@k, and the winning configuration is scored once on test items.
"""

import csv
import io
import itertools
import json
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy import stats

from .baselines import CfecbfParams
from .exceptions import TooFewItems
from .linalg import as_csr
from .maxvol import MaxvolParams
from .mix import MixParams, mix_matrices
from .ranking import FeatureRanking
from .recommender import fit_knn, recommend_top_n, score_matrix
from .selectors import compute_ranking

log = logging.getLogger(__name__)

BASELINES = ("random", "popular", "cfecbf")
# method label -> (selector, forced mix-grid overrides)
METHOD_VARIANTS = {
    "maxvol": ("maxvol", {}),
    "maxvol_alpha0": ("maxvol", {"alpha": [0.0]}),
    "norm": ("norm", {}),
    "random": ("random", {}),
    "popular": ("popular", {}),
    "cfecbf": ("cfecbf", {}),
    "all": ("all", {}),
}


# ---------------------------------------------------------------- splitting

@dataclass(frozen=True, eq=False)
class SplitBundle:
    train_items: np.ndarray
    valid_items: np.ndarray
    test_items: np.ndarray

    def items(self, part: str) -> np.ndarray:
        return {"train": self.train_items, "valid": self.valid_items,
                "test": self.test_items}[part]

    def interactions(self, dataset, part: str) -> sp.csr_matrix:
        """Users x items view restricted to one part (all users kept)."""
        return as_csr(dataset.interactions[:, self.items(part)])

    def features(self, dataset, part: str) -> sp.csr_matrix:
        return as_csr(dataset.features[self.items(part)])


def split_sizes(n_items: int, ratios=(0.7, 0.1, 0.2)) -> Tuple[int, int, int]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    n_valid = int(round(ratios[1] * n_items))
    n_test = int(round(ratios[2] * n_items))
    n_train = n_items - n_valid - n_test
    if min(n_train, n_valid, n_test) < 1:
        raise TooFewItems(f"{n_items} items cannot fill a {ratios} split")
    return n_train, n_valid, n_test


def split_items(dataset, ratios=(0.7, 0.1, 0.2), seed=0) -> SplitBundle:
    """Random item-disjoint partition (index arrays sorted ascending)."""
    n_items = dataset if isinstance(dataset, (int, np.integer)) else dataset.n_items
    n_train, n_valid, n_test = split_sizes(n_items, ratios)
    perm = np.random.default_rng(seed).permutation(n_items)
    test = np.sort(perm[:n_test])
    valid = np.sort(perm[n_test:n_test + n_valid])
    train = np.sort(perm[n_test + n_valid:])
    return SplitBundle(train, valid, test)


# ------------------------------------------------------------------ metrics

def recall_at_k(recommended, holdout, k: int) -> Optional[float]:
    """Share of ``holdout`` found in the first ``k`` recommendations (``None`` if empty)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    holdout = set(holdout)
    if not holdout:
        return None
    return len(holdout.intersection(list(recommended)[:k])) / len(holdout)


def mrr_at_k(recommended, holdout, k: int) -> Optional[float]:
    if k < 1:
        raise ValueError("k must be >= 1")
    holdout = set(holdout)
    if not holdout:
        return None
    for rank, item in enumerate(list(recommended)[:k], start=1):
        if item in holdout:
            return 1.0 / rank
    return 0.0


def coverage_at_k(all_recommendations, catalog, k: int) -> float:
    catalog = set(catalog)
    if not catalog:
        return 0.0
    seen = set()
    for recs in all_recommendations:
        seen.update(list(recs)[:k])
    return len(seen & catalog) / len(catalog)


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def batch_metrics(scores, holdout, k: int) -> Dict[str, float]:
    """Mean Recall@k / MRR@k over users with a nonempty holdout, plus Coverage@k.

    ``scores`` and ``holdout`` are users x cold items.
    """
    holdout = as_csr(holdout)
    active = np.flatnonzero(np.diff(holdout.indptr) > 0)
    n_cold = holdout.shape[1]
    if len(active) == 0:
        return {"recall": 0.0, "mrr": 0.0, "coverage": 0.0, "n_users": 0}
    top = recommend_top_n(np.asarray(scores)[active], k)
    H = (holdout[active] > 0).toarray()
    hits = np.take_along_axis(H, top, axis=1)
    recall = hits.sum(axis=1) / H.sum(axis=1)
    first = np.where(hits.any(axis=1), np.argmax(hits, axis=1) + 1, np.inf)
    mrr = np.where(np.isfinite(first), 1.0 / first, 0.0)
    coverage = len(np.unique(top)) / n_cold
    return {"recall": float(recall.mean()), "mrr": float(mrr.mean()),
            "coverage": float(coverage), "n_users": int(len(active))}


# ------------------------------------------------------------------- config

DEFAULT_MIX_GRID = {"alpha": [0.2, 0.5, 0.8], "p": [-1.0, -0.5, 0.0, 0.5], "k": [100, 200, 400]}


@dataclass
class EvalConfig:
    metric_cutoff: int = 10
    n_search_samples: int = 20
    n_repeats: int = 10
    selection_fractions: Sequence[float] = (0.01, 0.05, 0.10, 0.20, 0.30)
    mix_grid: Dict[str, list] = field(default_factory=lambda: dict(DEFAULT_MIX_GRID))
    model_grid: Dict[str, list] = field(default_factory=lambda: {"neighbors": [None]})
    cfecbf_grid: Dict[str, list] = field(
        default_factory=lambda: {"lambda1": [0.0, 1e-3], "lambda2": [0.0, 1e-2]})
    cfecbf_epochs: int = 200
    maxvol_tol: float = 1.05
    ratios: Sequence[float] = (0.7, 0.1, 0.2)
    seed: int = 0

    def __post_init__(self):
        self.selection_fractions = tuple(float(f) for f in self.selection_fractions)
        if not self.selection_fractions or any(
                not 0 < f <= 1 for f in self.selection_fractions):
            raise ValueError("selection fractions must lie in (0, 1]")
        if self.n_repeats < 1 or self.n_search_samples < 1 or self.metric_cutoff < 1:
            raise ValueError("n_repeats, n_search_samples and metric_cutoff must be >= 1")
        self.ratios = tuple(float(r) for r in self.ratios)
        for name in ("mix_grid", "model_grid", "cfecbf_grid"):
            grid = getattr(self, name)
            if any(len(v) == 0 for v in grid.values()):
                raise ValueError(f"{name} has an empty axis")

    def to_dict(self):
        d = asdict(self)
        d["selection_fractions"] = list(self.selection_fractions)
        d["ratios"] = list(self.ratios)
        return d


def _seed(*parts) -> int:
    ss = np.random.SeedSequence([int(p) for p in parts])
    return int(ss.generate_state(1)[0])


def _product(grid: Dict[str, list]) -> List[dict]:
    keys = sorted(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def method_grid(method: str, config: EvalConfig, n_train_items: int, n_features: int):
    """Candidate configurations for one method (selector params merged with model params)."""
    base, overrides = METHOD_VARIANTS[method]
    if base in ("maxvol", "norm"):
        grid = dict(config.mix_grid)
        grid.update(overrides)
        sel = [c for c in _product(grid)
               if c["k"] < n_features and c["k"] <= n_train_items]
        if not sel:
            raise ValueError(f"no k in {grid['k']} fits {n_train_items} items x "
                             f"{n_features} features")
    elif base == "cfecbf":
        sel = _product(config.cfecbf_grid)
    else:
        sel = [{}]
    model = _product(config.model_grid)
    return [{"selector": s, "model": m} for s, m in itertools.product(sel, model)]


def n_select_for(method: str, fraction: float, n_features: int, k: Optional[int] = None):
    """Feature count for a fraction; MaxVol needs at least ``k`` rows."""
    base = METHOD_VARIANTS[method][0]
    if base == "all":
        return n_features
    n = max(1, int(round(fraction * n_features)))
    if base == "maxvol" and k is not None:
        n = max(n, int(k))
    return min(n, n_features)


# ------------------------------------------------------------------- search

class _SplitContext:
    """Per-split state shared by every search: matrices and ranking caches."""

    def __init__(self, dataset, split: SplitBundle, config: EvalConfig, repeat_seed: int):
        self.dataset = dataset
        self.split = split
        self.config = config
        self.repeat_seed = repeat_seed
        self.R_train = split.interactions(dataset, "train")
        self.F_train = split.features(dataset, "train")
        self.parts = {
            part: (split.interactions(dataset, part), split.features(dataset, part))
            for part in ("valid", "test")
        }
        n_feat = dataset.n_features
        self.max_n = min(n_feat, max(
            max(1, int(round(f * n_feat))) for f in config.selection_fractions))
        self._embeddings = {}
        self._rankings = {}

    def embeddings(self, sel):
        key = (sel["alpha"], sel["p"], sel["k"])
        if key not in self._embeddings:
            t0 = time.perf_counter()
            emb = mix_matrices(self.R_train, self.F_train,
                               MixParams(sel["alpha"], sel["p"], sel["k"], self.repeat_seed))
            self._embeddings[key] = (emb, time.perf_counter() - t0)
        return self._embeddings[key]

    def ranking(self, method: str, sel: dict) -> Tuple[FeatureRanking, float]:
        base = METHOD_VARIANTS[method][0]
        key = (base, json.dumps(sel, sort_keys=True))
        if key in self._rankings:
            return self._rankings[key]
        cfg = self.config
        mix_time = 0.0
        kwargs = {}
        if base in ("maxvol", "norm"):
            emb, mix_time = self.embeddings(sel)
            kwargs["embeddings"] = emb
            kwargs["maxvol_params"] = MaxvolParams(cfg.maxvol_tol, seed=self.repeat_seed)
        elif base == "cfecbf":
            kwargs["cfecbf_params"] = CfecbfParams(sel["lambda1"], sel["lambda2"],
                                                   epochs=cfg.cfecbf_epochs,
                                                   seed=self.repeat_seed)
        t0 = time.perf_counter()
        ranking = compute_ranking(base, self.R_train, self.F_train, self.max_n,
                                  seed=self.repeat_seed, **kwargs)
        elapsed = mix_time + time.perf_counter() - t0
        self._rankings[key] = (ranking, elapsed)
        return ranking, elapsed

    def evaluate(self, method, cand, fraction, part):
        ranking, select_time = self.ranking(method, cand["selector"])
        n = n_select_for(method, fraction, self.dataset.n_features, cand["selector"].get("k"))
        n = min(n, len(ranking))
        model = fit_knn(self.F_train, ranking, n, self.split.train_items,
                        neighbors=cand["model"].get("neighbors"))
        R_part, F_part = self.parts[part]
        scores = score_matrix(model, self.R_train, F_part)
        metrics = batch_metrics(scores, R_part, self.config.metric_cutoff)
        metrics["n_select"] = n
        metrics["fit_ms"] = 1e3 * (select_time + model.timings["fit"])
        metrics["inference_ms"] = 1e3 * model.timings["inference"]
        return metrics


@dataclass
class SearchResult:
    best: dict
    best_recall: float
    trials: List[Tuple[dict, float]]


def _search(ctx: _SplitContext, method: str, fraction: float, search_seed: int) -> SearchResult:
    cfg = ctx.config
    candidates = method_grid(method, cfg, len(ctx.split.train_items), ctx.dataset.n_features)
    rng = np.random.default_rng(search_seed)
    size = len(candidates)
    replace = size < cfg.n_search_samples
    picks = rng.choice(size, size=cfg.n_search_samples, replace=replace)
    seen = {}
    trials = []
    best, best_recall = None, -math.inf
    for idx in picks:
        idx = int(idx)
        if idx not in seen:
            seen[idx] = ctx.evaluate(method, candidates[idx], fraction, "valid")["recall"]
        recall = seen[idx]
        trials.append((candidates[idx], recall))
        if recall > best_recall:
            best, best_recall = candidates[idx], recall
    return SearchResult(best, best_recall, trials)


def random_search(dataset, split: SplitBundle, config: EvalConfig, method: str,
                  fraction: float = 0.1, seed: Optional[int] = None) -> SearchResult:
    """Pick the configuration with the best validation Recall@cutoff.

    ``n_search_samples`` draws from the method's grid, without replacement
    when the grid is large enough and with replacement otherwise; ties go
    to the first-sampled configuration.
    """
    seed = config.seed if seed is None else seed
    ctx = _SplitContext(dataset, split, config, seed)
    return _search(ctx, method, fraction, _seed(seed, 1))


# ------------------------------------------------------------------- report

def mean_ci(values) -> Tuple[float, Optional[float]]:
    """Mean and Student-t 95% half-width (``None`` below two samples)."""
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    n = len(values)
    if n < 2:
        return mean, None
    q = stats.t.ppf(0.975, n - 1)
    return mean, float(q * values.std(ddof=1) / math.sqrt(n))


METRICS = ("recall", "mrr", "coverage")
TIMING_FIELDS = ("fit_ms", "inference_ms")
ROW_FIELDS = ("method", "fraction", "repeat", "n_select", "recall", "mrr", "coverage",
              "valid_recall", "params")


@dataclass
class EvalReport:
    rows: List[dict]
    config: dict
    methods: List[str]

    def cells(self):
        keys = []
        for r in self.rows:
            key = (r["method"], r["fraction"])
            if key not in keys:
                keys.append(key)
        return keys

    def values(self, method, fraction, metric="recall"):
        return [r[metric] for r in self.rows
                if r["method"] == method and r["fraction"] == fraction]

    def aggregates(self):
        out = []
        for method, fraction in self.cells():
            entry = {"method": method, "fraction": fraction}
            for m in METRICS + TIMING_FIELDS:
                mean, hw = mean_ci(self.values(method, fraction, m))
                entry[m] = mean
                entry[f"{m}_ci"] = hw
            out.append(entry)
        return out

    def paired_difference(self, method_a, method_b, fraction, metric="recall"):
        """Mean and 95% half-width of per-repeat ``a - b`` differences."""
        a = {r["repeat"]: r[metric] for r in self.rows
             if r["method"] == method_a and r["fraction"] == fraction}
        b = {r["repeat"]: r[metric] for r in self.rows
             if r["method"] == method_b and r["fraction"] == fraction}
        common = sorted(set(a) & set(b))
        if not common:
            raise KeyError(f"no paired rows for {method_a} vs {method_b} at {fraction}")
        return mean_ci([a[r] - b[r] for r in common])

    def improvement_table(self, target="maxvol", model="ItemKNN"):
        """Relative Recall improvement (%) of ``target`` over the best baseline per fraction."""
        fractions = sorted({f for m, f in self.cells() if m == target})
        row = {"model": model}
        for f in fractions:
            target_mean = mean_ci(self.values(target, f))[0]
            base = [mean_ci(self.values(b, f))[0] for b in BASELINES
                    if self.values(b, f)]
            if not base:
                row[f] = None
                continue
            best = max(base)
            row[f] = None if best == 0 else 100.0 * (target_mean - best) / best
        return fractions, [row]

    # serialization -------------------------------------------------------

    def to_dict(self, include_timing=False):
        strip = () if include_timing else TIMING_FIELDS
        rows = [{k: v for k, v in r.items() if k not in strip} for r in self.rows]
        aggs = [{k: v for k, v in a.items()
                 if not any(k.startswith(t) for t in strip)} for a in self.aggregates()]
        fractions, table = self.improvement_table()
        return {
            "config": self.config,
            "methods": self.methods,
            "rows": rows,
            "aggregates": aggs,
            "relative_improvement": {
                "fractions": fractions,
                "rows": [{"model": r["model"],
                          "values": [r[f] for f in fractions]} for r in table],
            },
        }

    def to_json(self, include_timing=False, **kwargs) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, **kwargs)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in self.rows:
            w.writerow([_cell(r[f]) for f in ROW_FIELDS])
        return buf.getvalue()

    def timings_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("method", "fraction", "repeat", "n_select") + TIMING_FIELDS)
        for r in self.rows:
            w.writerow([_cell(r[f]) for f in ("method", "fraction", "repeat", "n_select")
                        + TIMING_FIELDS])
        return buf.getvalue()

    def improvement_csv(self) -> str:
        fractions, table = self.improvement_table()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model"] + [f"{100 * f:g}%" for f in fractions])
        for r in table:
            w.writerow([r["model"]] + ["" if r[f] is None else f"{r[f]:.2f}"
                                       for f in fractions])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"{'method':<14}{'fraction':>9}{'recall':>9}{'+/-':>8}{'mrr':>8}{'cov':>8}"]
        for a in self.aggregates():
            ci = "" if a["recall_ci"] is None else f"{a['recall_ci']:.4f}"
            lines.append(f"{a['method']:<14}{a['fraction']:>9.3f}{a['recall']:>9.4f}"
                         f"{ci:>8}{a['mrr']:>8.4f}{a['coverage']:>8.4f}")
        return "\n".join(lines)


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


# --------------------------------------------------------------- experiment

def _run_repeat(dataset, config: EvalConfig, methods, repeat: int) -> List[dict]:
    repeat_seed = _seed(config.seed, repeat)
    split = split_items(dataset, config.ratios, seed=repeat_seed)
    ctx = _SplitContext(dataset, split, config, repeat_seed)
    rows = []
    for m_idx, method in enumerate(methods):
        base = METHOD_VARIANTS[method][0]
        fractions = (1.0,) if base == "all" else config.selection_fractions
        for f_idx, fraction in enumerate(fractions):
            result = _search(ctx, method, fraction, _seed(repeat_seed, m_idx, f_idx))
            test = ctx.evaluate(method, result.best, fraction, "test")
            rows.append({
                "method": method,
                "fraction": fraction,
                "repeat": repeat,
                "n_select": test["n_select"],
                "recall": test["recall"],
                "mrr": test["mrr"],
                "coverage": test["coverage"],
                "valid_recall": result.best_recall,
                "params": json.dumps(result.best, sort_keys=True),
                "fit_ms": test["fit_ms"],
                "inference_ms": test["inference_ms"],
            })
            log.debug("repeat %d %s @%.3f: valid %.4f test %.4f", repeat, method, fraction,
                      result.best_recall, test["recall"])
    return rows


def run_experiment(dataset, config: EvalConfig, methods: Sequence[str],
                   jobs: int = 1) -> EvalReport:
    """Repeated split / search / test protocol for every method and fraction."""
    methods = list(methods)
    for m in methods:
        if m not in METHOD_VARIANTS:
            raise ValueError(f"unknown method {m!r}; choose from {sorted(METHOD_VARIANTS)}")
    if jobs == 1:
        per_repeat = [_run_repeat(dataset, config, methods, r) for r in range(config.n_repeats)]
    else:
        from joblib import Parallel, delayed

        per_repeat = Parallel(n_jobs=jobs)(
            delayed(_run_repeat)(dataset, config, methods, r) for r in range(config.n_repeats))
    rows = [row for chunk in per_repeat for row in chunk]
    return EvalReport(rows, config.to_dict(), methods)


# ------------------------------------------------------------------- timing

def measure_times(fit: Callable[[], object], predict: Callable[[object], object],
                  repetitions: int = 5) -> Tuple[float, float]:
    """Median wall-clock milliseconds of ``fit()`` and ``predict(model)`` after a warmup."""
    if repetitions < 3:
        raise ValueError("repetitions must be >= 3")
    predict(fit())
    fit_ms, pred_ms = [], []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        model = fit()
        t1 = time.perf_counter()
        predict(model)
        t2 = time.perf_counter()
        fit_ms.append(1e3 * (t1 - t0))
        pred_ms.append(1e3 * (t2 - t1))
    return statistics.median(fit_ms), statistics.median(pred_ms)


# ---------------------------------------------------------------- stability

def stability_matrix(dataset, configs: Sequence[MixParams], fraction: float = 0.10,
                     maxvol_params: MaxvolParams = MaxvolParams()):
    """Pairwise Jaccard similarity of MaxVol selections across configurations."""
    sets = []
    for params in configs:
        emb = mix_matrices(dataset.interactions, dataset.features, params)
        n = n_select_for("maxvol", fraction, dataset.n_features, params.k)
        ranking = compute_ranking("maxvol", None, dataset.features, n, embeddings=emb,
                                  maxvol_params=maxvol_params)
        sets.append(set(ranking.top(n).tolist()))
    J = np.array([[jaccard(a, b) for b in sets] for a in sets])
    labels = [f"alpha={c.alpha:g},p={c.p:g},k={c.k}" for c in configs]
    return labels, J


def category_proportions(ranking: FeatureRanking, categories: Sequence[Optional[str]],
                         fractions: Sequence[float]) -> Dict[str, List[float]]:
    """Share of each category's features inside the top-fraction selection."""
    cats = np.asarray([c if c is not None else "" for c in categories], dtype=object)
    names = sorted(set(cats.tolist()) - {""})
    n_features = len(cats)
    out = {name: [] for name in names}
    for f in fractions:
        n = min(len(ranking), max(1, int(round(f * n_features))))
        chosen = cats[ranking.top(n)]
        for name in names:
            out[name].append(float(np.sum(chosen == name) / np.sum(cats == name)))
    return out
