"""Collaboratively enriched feature embeddings.

The pipeline reweights the item-feature matrix with TF-IDF, blends the
identity with a collaborative item similarity, pushes the weighted
features through the transposed Cholesky factor of that blend, rescales
item rows by popularity, and keeps the top right singular vectors::

    F_w   = tfidf(F)
    S     = (1 - alpha) I + alpha cos(R),   S = L L^T
    F_sat = D^p L^T F_w
    F_sat ~ U Sigma V^T       ->  V is (n_features, k)
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .exceptions import AlphaOutOfRange, EmptyFeatureSpace, RankTooLarge, ShapeMismatch
from .linalg import RANK_TOL, as_csr, as_dense, cholesky, truncated_svd

EMBEDDINGS_MAGIC = b"CFSEMB01"


@dataclass(frozen=True)
class MixParams:
    alpha: float = 0.5
    p: float = 0.0
    k: int = 32
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {self.alpha}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")


@dataclass(frozen=True, eq=False)
class FeatureEmbeddings:
    """Latent feature vectors ``V`` (rows = features) with their singular values."""

    V: np.ndarray
    sigma: np.ndarray
    effective_rank: int

    @property
    def n_features(self):
        return self.V.shape[0]

    @property
    def k(self):
        return self.V.shape[1]

    def save(self, path):
        """Binary layout: magic, ``<QQQ`` rows/cols/rank, sigma, V row-major, all little-endian."""
        V = np.ascontiguousarray(self.V, dtype="<f8")
        with open(path, "wb") as fh:
            fh.write(EMBEDDINGS_MAGIC)
            fh.write(struct.pack("<QQQ", V.shape[0], V.shape[1], self.effective_rank))
            fh.write(np.asarray(self.sigma, dtype="<f8").tobytes())
            fh.write(V.tobytes())

    @classmethod
    def load(cls, path):
        raw = Path(path).read_bytes()
        if raw[:8] != EMBEDDINGS_MAGIC:
            raise ValueError(f"{path}: not an embeddings file")
        rows, cols, rank = struct.unpack_from("<QQQ", raw, 8)
        off = 8 + 24
        sigma = np.frombuffer(raw, dtype="<f8", count=cols, offset=off)
        off += 8 * cols
        V = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=off)
        return cls(V.reshape(rows, cols).astype(np.float64), sigma.astype(np.float64), int(rank))

    def to_csv(self, path, feature_names=None):
        names = feature_names or [str(i) for i in range(self.n_features)]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("feature," + ",".join(f"v{j}" for j in range(self.k)) + "\n")
            fh.write("sigma," + ",".join(repr(float(s)) for s in self.sigma) + "\n")
            for name, row in zip(names, self.V):
                fh.write(f"{name}," + ",".join(repr(float(x)) for x in row) + "\n")


def tfidf_weight(F) -> sp.csr_matrix:
    """Raw term frequency times smoothed idf ``ln((1 + N) / (1 + df)) + 1``."""
    F = as_csr(F)
    n_items, n_features = F.shape
    if n_items == 0 or n_features == 0:
        raise EmptyFeatureSpace("feature matrix is empty")
    if np.any(F.data < 0):
        raise ValueError("feature matrix must be nonnegative")
    F.eliminate_zeros()
    df = np.bincount(F.indices, minlength=n_features)
    idf = np.log((1.0 + n_items) / (1.0 + df)) + 1.0
    Fw = F.copy()
    Fw.data *= idf[Fw.indices]
    return Fw


def cosine_item_similarity(R, binarize: bool = False) -> np.ndarray:
    """Dense cosine similarity between the columns of ``R``.

    All-zero columns are similar to nothing but themselves.
    """
    R = as_csr(R)
    if binarize:
        R.data[:] = 1.0
    n = R.shape[1]
    if n < 1:
        raise ShapeMismatch("interaction matrix has no items")
    G = (R.T @ R).toarray()
    norms = np.sqrt(np.diag(G).copy())
    nz = norms > 0
    inv = np.zeros(n)
    inv[nz] = 1.0 / norms[nz]
    S = G * inv[:, None] * inv[None, :]
    S = 0.5 * (S + S.T)
    np.fill_diagonal(S, 1.0)
    return S


def blend_similarity(sim, alpha: float) -> np.ndarray:
    """``(1 - alpha) I + alpha * sim``."""
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {alpha}")
    sim = as_dense(sim)
    if sim.shape[0] != sim.shape[1]:
        raise ShapeMismatch(f"similarity must be square, got {sim.shape}")
    S = alpha * sim
    S[np.diag_indices_from(S)] += 1.0 - alpha
    return S


def item_popularity(R) -> np.ndarray:
    """Number of interactions per item (nonzeros per column)."""
    R = as_csr(R)
    R.eliminate_zeros()
    return np.bincount(R.indices, minlength=R.shape[1]).astype(np.float64)


def inject_collaborative(F_w, S, item_pops, p: float, jitter: float = 0.0) -> np.ndarray:
    """``D^p L^T F_w`` with ``S = L L^T`` and ``D = diag(item_pops)``.

    Items with zero popularity get a neutral weight of 1.
    """
    F_w = as_csr(F_w)
    pops = np.asarray(item_pops, dtype=np.float64).ravel()
    n_items = F_w.shape[0]
    if pops.shape[0] != n_items or np.shape(S) != (n_items, n_items):
        raise ShapeMismatch("S, item_pops and F_w disagree on the number of items")
    if np.any(pops < 0):
        raise ValueError("item popularity must be nonnegative")
    L = cholesky(S, jitter=jitter)
    # (F_w^T L)^T keeps the sparse operand on the left
    out = np.asarray((F_w.T @ L).T)
    d = np.where(pops > 0, pops, 1.0)
    if p != 0:
        out *= (d ** p)[:, None]
    return np.ascontiguousarray(out)


def embed_features(F_sat, k: int, seed: Optional[int] = 0) -> FeatureEmbeddings:
    n_items, n_features = np.shape(F_sat)
    if k >= n_features or k > min(n_items, n_features):
        raise RankTooLarge(
            f"k={k} needs k < n_features={n_features} and k <= n_items={n_items}"
        )
    res = truncated_svd(F_sat, k, seed=seed)
    s = res.sigma
    eff = int(np.count_nonzero(s > RANK_TOL * s[0])) if s[0] > 0 else 0
    return FeatureEmbeddings(res.V, s, eff)


SimilarityFn = Callable[[sp.csr_matrix], np.ndarray]


def mix_matrices(R, F, params: MixParams,
                 similarity: SimilarityFn = cosine_item_similarity) -> FeatureEmbeddings:
    """Embeddings from an interaction matrix ``R`` (users x items) and features ``F``."""
    R = as_csr(R)
    F = as_csr(F)
    if R.shape[1] != F.shape[0]:
        raise ShapeMismatch(f"R has {R.shape[1]} items, F has {F.shape[0]}")
    F_w = tfidf_weight(F)
    if params.alpha == 0.0:
        S = np.eye(F.shape[0])
    else:
        S = blend_similarity(similarity(R), params.alpha)
    F_sat = inject_collaborative(F_w, S, item_popularity(R), params.p)
    return embed_features(F_sat, params.k, seed=params.seed)


def mix(dataset, params: MixParams,
        similarity: SimilarityFn = cosine_item_similarity) -> FeatureEmbeddings:
    return mix_matrices(dataset.interactions, dataset.features, params, similarity)
