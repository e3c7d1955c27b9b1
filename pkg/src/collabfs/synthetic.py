"""Synthetic corpora with a known set of behaviour-driving ("planted") features.

Users hold preferences over planted features only, so planted features are
exactly the ones whose co-occurrence matches co-consumption. Noise features
are drawn from a Zipf-like law, which makes a few of them frequent, heavy
columns that dominate content-only embeddings without telling anything
about user behaviour.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import Dataset


@dataclass(frozen=True)
class PlantedSpec:
    n_items: int = 400
    n_features: int = 300
    n_planted: int = 30
    planted_per_item: int = 3
    noise_per_item: int = 5
    n_users: int = 2000
    likes_per_user: int = 2
    interactions_per_user: int = 20
    noise_zipf: float = 1.0
    popularity_skew: float = 0.0


@dataclass(frozen=True, eq=False)
class PlantedCorpus:
    dataset: Dataset
    planted: np.ndarray


def _draw_without_replacement(rng, probs, size):
    return rng.choice(len(probs), size=size, replace=False, p=probs)


def make_planted(spec: PlantedSpec = PlantedSpec(), seed: int = 0) -> PlantedCorpus:
    """Generate a planted-feature corpus.

    Feature columns are shuffled so planted features are not a contiguous
    block; ``planted`` lists their column indices. With
    ``popularity_skew > 0`` item consumption probability is additionally
    multiplied by a per-item log-normal popularity factor.
    """
    rng = np.random.default_rng(seed)
    n_noise = spec.n_features - spec.n_planted
    ranks = np.arange(1, n_noise + 1, dtype=np.float64)
    noise_p = ranks ** -spec.noise_zipf
    noise_p /= noise_p.sum()

    rows, cols = [], []
    item_planted = np.zeros((spec.n_items, spec.n_planted))
    for i in range(spec.n_items):
        pf = rng.choice(spec.n_planted, size=spec.planted_per_item, replace=False)
        nf = _draw_without_replacement(rng, noise_p, spec.noise_per_item)
        item_planted[i, pf] = 1.0
        rows.extend([i] * (len(pf) + len(nf)))
        cols.extend(pf.tolist())
        cols.extend((spec.n_planted + nf).tolist())

    perm = rng.permutation(spec.n_features)
    F = sp.coo_matrix((np.ones(len(rows)), (rows, perm[np.asarray(cols)])),
                      shape=(spec.n_items, spec.n_features)).tocsr()
    F.data[:] = 1.0
    planted = np.sort(perm[:spec.n_planted])

    item_pop = np.exp(spec.popularity_skew * rng.standard_normal(spec.n_items))
    u_rows, u_cols = [], []
    for u in range(spec.n_users):
        likes = rng.choice(spec.n_planted, size=spec.likes_per_user, replace=False)
        affinity = item_planted[:, likes].sum(axis=1)
        w = affinity * item_pop
        candidates = np.flatnonzero(w > 0)
        n = min(spec.interactions_per_user, len(candidates))
        if n == 0:
            continue
        p = w[candidates] / w[candidates].sum()
        chosen = rng.choice(candidates, size=n, replace=False, p=p)
        u_rows.extend([u] * n)
        u_cols.extend(chosen.tolist())
    R = sp.coo_matrix((np.ones(len(u_rows)), (u_rows, u_cols)),
                      shape=(spec.n_users, spec.n_items)).tocsr()
    keep = np.flatnonzero(np.diff(R.indptr) > 0)
    R = R[keep]

    feature_names = tuple(f"f{j}" for j in range(spec.n_features))
    planted_set = set(planted.tolist())
    categories = {name: ("planted" if j in planted_set else "noise")
                  for j, name in enumerate(feature_names)}
    ds = Dataset(R, F, tuple(f"u{u}" for u in keep), tuple(f"i{i}" for i in range(spec.n_items)),
                 feature_names, categories)
    return PlantedCorpus(ds, planted)


def make_runtime_corpus(n_items=5000, n_features=9000, features_per_item=150, n_users=3000,
                        interactions_per_user=30, seed=0) -> Dataset:
    """Large random corpus for timing studies (textual-like feature density)."""
    rng = np.random.default_rng(seed)
    ranks = np.arange(1, n_features + 1, dtype=np.float64)
    p = ranks ** -0.8
    p /= p.sum()
    rows = np.repeat(np.arange(n_items), features_per_item)
    cols = np.concatenate([rng.choice(n_features, features_per_item, replace=False, p=p)
                           for _ in range(n_items)])
    vals = rng.integers(1, 4, size=len(rows)).astype(np.float64)
    F = sp.coo_matrix((vals, (rows, cols)), shape=(n_items, n_features)).tocsr()
    u_rows = np.repeat(np.arange(n_users), interactions_per_user)
    u_cols = np.concatenate([rng.choice(n_items, interactions_per_user, replace=False)
                             for _ in range(n_users)])
    R = sp.coo_matrix((np.ones(len(u_rows)), (u_rows, u_cols)),
                      shape=(n_users, n_items)).tocsr()
    return Dataset(R, F, tuple(f"u{u}" for u in range(n_users)),
                   tuple(f"i{i}" for i in range(n_items)),
                   tuple(f"t{j}" for j in range(n_features)))
