"""Content-based ItemKNN for cold items.

A cold item ``c`` is scored for a user by summing cosine similarities
between its (selected) features and those of every item in the user's
history: ``score(c) = sum_{i in history} cos(f_c, f_i)``.
"""

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .baselines import normalize_feature_rows
from .exceptions import NSelectOutOfRange, ShapeMismatch, UnknownItem
from .linalg import as_csr
from .ranking import FeatureRanking

# up to this many selected features, uncapped scoring goes through dense user profiles
PROFILE_FEATURE_LIMIT = 1024


@dataclass(frozen=True, eq=False)
class KnnModel:
    feature_subset: np.ndarray
    item_feature_rows: sp.csr_matrix
    train_items: np.ndarray
    neighbors: Optional[int] = None
    timings: dict = field(default_factory=dict)

    @property
    def n_train_items(self):
        return self.item_feature_rows.shape[0]

    def restrict(self, F) -> sp.csr_matrix:
        """Select this model's columns from ``F`` and row-normalize."""
        F = as_csr(F)
        return normalize_feature_rows(F[:, self.feature_subset])


def fit_knn(F_train, ranking: Optional[FeatureRanking] = None, n_select: Optional[int] = None,
            train_items=None, neighbors: Optional[int] = None) -> KnnModel:
    """Keep the top-``n_select`` ranked columns of ``F_train`` and row-normalize.

    Columns are stored in ascending index order; only the selected set
    matters for cosine scores.
    """
    t0 = time.perf_counter()
    F_train = as_csr(F_train)
    n_features = F_train.shape[1]
    if ranking is None:
        cols = np.arange(n_features)
    else:
        if ranking.n_features != n_features:
            raise ShapeMismatch("ranking and feature matrix disagree on the feature count")
        n = len(ranking) if n_select is None else n_select
        if not 0 <= n <= len(ranking):
            raise NSelectOutOfRange(f"n_select={n} outside [0, {len(ranking)}]")
        cols = np.sort(ranking.top(n))
    if neighbors is not None and neighbors < 1:
        raise ValueError("neighbors must be a positive count or None")
    rows = normalize_feature_rows(F_train[:, cols])
    if train_items is None:
        train_items = np.arange(F_train.shape[0])
    train_items = np.asarray(train_items, dtype=np.intp)
    model = KnnModel(cols, rows, train_items, neighbors)
    model.timings["fit"] = time.perf_counter() - t0
    return model


def fit(dataset, ranking: FeatureRanking, n_select: int, train_items=None,
        neighbors: Optional[int] = None) -> KnnModel:
    """:func:`fit_knn` on a dataset's features (restricted to ``train_items``)."""
    F = dataset.features
    if train_items is not None:
        F = F[np.asarray(train_items, dtype=np.intp)]
    return fit_knn(F, ranking, n_select, train_items, neighbors)


def _similarities(model: KnnModel, cold_rows):
    # (n_cold, n_train) cosine similarities, optionally capped to top neighbors
    sim = as_csr(cold_rows @ model.item_feature_rows.T)
    if model.neighbors is None:
        return sim
    keep = model.neighbors
    dense = sim.toarray()
    if keep < dense.shape[1]:
        cut = np.argsort(-dense, axis=1, kind="stable")[:, keep:]
        np.put_along_axis(dense, cut, 0.0, axis=1)
    return as_csr(dense)


def score_matrix(model: KnnModel, history, cold_features) -> np.ndarray:
    """Scores for many users at once.

    ``history`` is users x train items (row-position aligned with the
    model's train items); the result is users x cold items.

    Without a neighbour cap and with at most ``PROFILE_FEATURE_LIMIT``
    selected features the product is taken as ``(history F~) F~_cold^T``
    through dense user profiles, so its cost scales with the number of
    selected features. Otherwise the cold x train similarity is formed
    first.
    """
    t0 = time.perf_counter()
    history = as_csr(history)
    if history.shape[1] != model.n_train_items:
        raise ShapeMismatch(
            f"history has {history.shape[1]} items, model has {model.n_train_items}"
        )
    cold = model.restrict(cold_features)
    if model.neighbors is None and len(model.feature_subset) <= PROFILE_FEATURE_LIMIT:
        profiles = (history @ model.item_feature_rows).toarray()
        scores = profiles @ cold.T.toarray()
    else:
        sim = _similarities(model, cold)
        scores = np.asarray((history @ sim.T).toarray())
    model.timings["inference"] = time.perf_counter() - t0
    return scores


def score_cold_items(model: KnnModel, user_history, cold_features) -> np.ndarray:
    """Scores of every cold item for one user.

    ``user_history`` lists train-item ids (as in ``model.train_items``);
    repeats count repeatedly.
    """
    pos = {int(item): j for j, item in enumerate(model.train_items)}
    counts = np.zeros(model.n_train_items)
    for item in user_history:
        j = pos.get(int(item))
        if j is None:
            raise UnknownItem(f"item {item} is not a training item")
        counts[j] += 1.0
    return score_matrix(model, sp.csr_matrix(counts[None, :]), cold_features)[0]


def recommend_top_n(scores, n: int) -> np.ndarray:
    """Indices of the ``n`` largest scores, ties by lowest index.

    A 2-d ``scores`` array is ranked row by row.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, axis=-1, kind="stable")
    return order[..., :n]
