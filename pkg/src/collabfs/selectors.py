"""scikit-learn compatible feature selectors and the ItemKNN estimator.

Items are samples: ``X`` is the item-feature matrix ``(n_items, n_features)``
and the target ``Y`` is the transposed interaction matrix
``(n_items, n_users)``, so every selector composes in a ``Pipeline``::

    pipe = make_pipeline(CollaborativeMaxVolSelector(n_features_to_select=0.1),
                         ContentItemKNN())
    pipe.fit(F_train, R_train.T)
    scores = pipe.predict(F_cold)          # (n_cold, n_users)
"""

from numbers import Integral, Real
from typing import Optional

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from .baselines import (CfecbfParams, cfecbf_weights, select_by_norm, select_popular,
                        select_random)
from .linalg import as_csr
from .maxvol import MaxvolParams, select_features
from .mix import MixParams, cosine_item_similarity, mix_matrices
from .ranking import FeatureRanking, check_n_select, identity_ranking
from .recommender import fit_knn, recommend_top_n, score_matrix


def resolve_n_select(n_features_to_select, n_features: int) -> int:
    """``None`` -> all, float in (0, 1] -> rounded fraction (at least 1), int -> as is."""
    if n_features_to_select is None:
        return n_features
    if isinstance(n_features_to_select, (Integral, np.integer)) and not isinstance(
            n_features_to_select, bool):
        return check_n_select(int(n_features_to_select), 0, n_features)
    if isinstance(n_features_to_select, Real) and 0 < n_features_to_select <= 1:
        return max(1, int(round(n_features_to_select * n_features)))
    raise ValueError(f"invalid n_features_to_select={n_features_to_select!r}")


def compute_ranking(method: str, R, F, n_select: int, *, mix_params: Optional[MixParams] = None,
                    maxvol_params: Optional[MaxvolParams] = None,
                    cfecbf_params: Optional[CfecbfParams] = None, seed=0,
                    embeddings=None, similarity=None) -> FeatureRanking:
    """Rank features of ``F`` (items x features) given interactions ``R`` (users x items).

    For ``maxvol`` the ranking has ``max(k, n_select)`` entries since the
    square phase always yields ``k`` rows.
    """
    n_features = F.shape[1]
    if method == "all":
        return identity_ranking(n_features)
    if method == "random":
        return select_random(n_features, n_select, seed)
    if method == "popular":
        return select_popular(R, F, n_select)
    if method == "cfecbf":
        S_cf = cosine_item_similarity(R) if similarity is None else similarity
        return cfecbf_weights(S_cf, F, cfecbf_params or CfecbfParams(seed=seed), n_select)
    if method in ("maxvol", "norm"):
        if embeddings is None:
            embeddings = mix_matrices(R, F, mix_params or MixParams(seed=seed))
        if method == "norm":
            return select_by_norm(embeddings, n_select)
        n = max(n_select, min(embeddings.effective_rank, embeddings.k))
        return select_features(embeddings, n, maxvol_params or MaxvolParams(seed=seed))
    raise ValueError(f"unknown selection method {method!r}")


def _check_interactions(Y, n_items):
    if Y is None:
        raise ValueError("this selector needs the item x user interaction matrix as y")
    Y = check_array(Y, accept_sparse="csr", dtype=np.float64)
    if Y.shape[0] != n_items:
        raise ValueError(f"y has {Y.shape[0]} items, X has {n_items}")
    return as_csr(Y)


class _RankingSelector(SelectorMixin, BaseEstimator):
    """Shared fit logic: rank features, keep the top ``n_features_to_select``."""

    _method = None
    _needs_interactions = True

    def _ranking(self, R, F, n_select):
        raise NotImplementedError

    def fit(self, X, y=None):
        X = validate_data(self, X, accept_sparse="csr", dtype=np.float64, reset=True)
        F = as_csr(X)
        R = _check_interactions(y, F.shape[0]).T.tocsr() if self._needs_interactions else None
        n_select = resolve_n_select(self.n_features_to_select, F.shape[1])
        self.ranking_ = self._ranking(R, F, n_select)
        self.n_selected_ = max(n_select, len(self.ranking_)) if self._method == "maxvol" \
            else n_select
        self.support_ = self.ranking_.support(min(self.n_selected_, len(self.ranking_)))
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_")
        return self.support_

    @property
    def feature_ranking_(self):
        check_is_fitted(self, "ranking_")
        return self.ranking_.order


class CollaborativeMaxVolSelector(_RankingSelector):
    """Rectangular MaxVol over collaboratively enriched feature embeddings.

    Parameters
    ----------
    n_features_to_select : int, float or None
        Count, fraction in (0, 1], or ``None`` for a full ranking. At least
        ``k`` features are always kept.
    alpha : float
        Weight of the collaborative similarity in ``[0, 1]``.
    p : float
        Popularity exponent; negative values favour long-tail items.
    k : int
        Embedding rank.
    tol : float
        Dominance tolerance of the square phase (> 1).
    max_iters : int or None
        Square-phase swap budget, ``100 * k`` by default.
    random_state : int
        Seed for the randomized SVD path.
    """

    _method = "maxvol"

    def __init__(self, n_features_to_select=None, alpha=0.5, p=0.0, k=32, tol=1.05,
                 max_iters=None, random_state=0):
        self.n_features_to_select = n_features_to_select
        self.alpha = alpha
        self.p = p
        self.k = k
        self.tol = tol
        self.max_iters = max_iters
        self.random_state = random_state

    def _ranking(self, R, F, n_select):
        self.embeddings_ = mix_matrices(R, F, MixParams(self.alpha, self.p, self.k,
                                                        self.random_state))
        return compute_ranking("maxvol", R, F, n_select, embeddings=self.embeddings_,
                               maxvol_params=MaxvolParams(self.tol, self.max_iters,
                                                          self.random_state))


class EmbeddingNormSelector(_RankingSelector):
    """Rank features by the Euclidean norm of their enriched embeddings."""

    _method = "norm"

    def __init__(self, n_features_to_select=None, alpha=0.5, p=0.0, k=32, random_state=0):
        self.n_features_to_select = n_features_to_select
        self.alpha = alpha
        self.p = p
        self.k = k
        self.random_state = random_state

    def _ranking(self, R, F, n_select):
        self.embeddings_ = mix_matrices(R, F, MixParams(self.alpha, self.p, self.k,
                                                        self.random_state))
        return select_by_norm(self.embeddings_, n_select)


class RandomFeatureSelector(_RankingSelector):
    _method = "random"
    _needs_interactions = False

    def __init__(self, n_features_to_select=None, random_state=0):
        self.n_features_to_select = n_features_to_select
        self.random_state = random_state

    def _ranking(self, R, F, n_select):
        return select_random(F.shape[1], n_select, self.random_state)


class PopularFeatureSelector(_RankingSelector):
    """Features ranked by the summed popularity of the items carrying them."""

    _method = "popular"

    def __init__(self, n_features_to_select=None):
        self.n_features_to_select = n_features_to_select

    def _ranking(self, R, F, n_select):
        return select_popular(R, F, n_select)


class CFeCBFSelector(_RankingSelector):
    """Features ranked by weights fitting collaborative with content similarity."""

    _method = "cfecbf"

    def __init__(self, n_features_to_select=None, lambda1=0.0, lambda2=0.0,
                 learning_rate=None, epochs=200, random_state=0):
        self.n_features_to_select = n_features_to_select
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.random_state = random_state

    def _ranking(self, R, F, n_select):
        params = CfecbfParams(self.lambda1, self.lambda2, self.learning_rate, self.epochs,
                              self.random_state)
        return compute_ranking("cfecbf", R, F, n_select, cfecbf_params=params)


class ContentItemKNN(BaseEstimator):
    """Cosine ItemKNN over item features, scoring unseen (cold) items.

    ``fit(X, y)`` takes train item features and the item x user interaction
    matrix; ``predict(X_cold)`` returns ``(n_cold, n_users)`` scores.
    """

    def __init__(self, neighbors=None, n_recommendations=10):
        self.neighbors = neighbors
        self.n_recommendations = n_recommendations

    def fit(self, X, y):
        X = validate_data(self, X, accept_sparse="csr", dtype=np.float64, reset=True)
        Y = _check_interactions(y, X.shape[0])
        self.model_ = fit_knn(X, neighbors=self.neighbors)
        self.history_ = Y.T.tocsr()
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = validate_data(self, X, accept_sparse="csr", dtype=np.float64, reset=False)
        return score_matrix(self.model_, self.history_, sp.csr_matrix(X)).T

    def recommend(self, X, n=None):
        """Top cold-item indices per user, shape ``(n_users, n)``."""
        scores = self.predict(X).T
        return recommend_top_n(scores, n or self.n_recommendations)
