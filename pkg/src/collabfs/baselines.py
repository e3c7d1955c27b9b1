"""Reference feature rankings: random, popularity, CFeCBF weights, embedding norms."""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import NonFiniteLoss, ShapeMismatch
from .linalg import as_csr, as_dense
from .ranking import FeatureRanking, argsort_desc, check_n_select

log = logging.getLogger(__name__)

LOSS_SLACK = 1e-9


def select_random(n_features: int, n_select: int, seed=0) -> FeatureRanking:
    """Uniform sample without replacement; a prefix of a seeded permutation."""
    n_select = check_n_select(n_select, 0, n_features)
    perm = np.random.default_rng(seed).permutation(n_features)
    return FeatureRanking(perm[:n_select], None, "random", n_features)


def feature_popularity(R, F) -> np.ndarray:
    """``e^T R F``: interaction counts aggregated over each feature's items."""
    R = as_csr(R)
    F = as_csr(F)
    if R.shape[1] != F.shape[0]:
        raise ShapeMismatch(f"R has {R.shape[1]} items, F has {F.shape[0]}")
    pop = np.asarray(R.sum(axis=0)).ravel()
    return np.asarray(F.T @ pop).ravel()


def select_popular(R, F, n_select: int) -> FeatureRanking:
    w = feature_popularity(R, F)
    n_select = check_n_select(n_select, 0, len(w))
    order = argsort_desc(w)[:n_select]
    return FeatureRanking(order, w[order], "popular", len(w))


def normalize_feature_rows(F) -> sp.csr_matrix:
    """Scale every nonzero row to unit Euclidean norm."""
    F = as_csr(F)
    norms = np.sqrt(np.asarray(F.multiply(F).sum(axis=1)).ravel())
    inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    return as_csr(sp.diags(inv) @ F)


def select_by_norm(embeddings, n_select: int) -> FeatureRanking:
    V = embeddings.V if hasattr(embeddings, "V") else as_dense(embeddings)
    n_select = check_n_select(n_select, 0, V.shape[0])
    norms = np.linalg.norm(V, axis=1)
    order = argsort_desc(norms)[:n_select]
    return FeatureRanking(order, norms[order], "norm", V.shape[0])


@dataclass(frozen=True)
class CfecbfParams:
    lambda1: float = 0.0
    lambda2: float = 0.0
    learning_rate: Optional[float] = None
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("regularization weights must be nonnegative")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def cfecbf_loss(w, S_cf, F, lambda1=0.0, lambda2=0.0) -> float:
    """Direct evaluation of ``||S_cf - F~ diag(w) F~^T||_F^2 + l1 |w|_1 + l2 |w|_2^2``."""
    Fn = normalize_feature_rows(F).toarray()
    S_cbf = (Fn * np.asarray(w, dtype=np.float64)) @ Fn.T
    resid = as_dense(S_cf) - S_cbf
    return float(np.sum(resid * resid) + lambda1 * np.abs(w).sum() + lambda2 * np.dot(w, w))


class _Quadratic:
    """The data term as ``c - 2 a^T w + w^T Q w`` with ``Q = (F~^T F~) o (F~^T F~)``."""

    def __init__(self, S_cf, F):
        S = as_dense(S_cf)
        Fn = normalize_feature_rows(F)
        if S.shape != (Fn.shape[0], Fn.shape[0]):
            raise ShapeMismatch(f"S_cf shape {S.shape} does not match {Fn.shape[0]} items")
        G = as_csr(Fn.T @ Fn)
        self.Q = as_csr(G.multiply(G))
        self.a = np.asarray((Fn.multiply(S @ Fn)).sum(axis=0)).ravel()
        self.c = float(np.sum(S * S))

    def value(self, w):
        return self.c - 2.0 * self.a @ w + w @ (self.Q @ w)

    def grad(self, w):
        return 2.0 * (self.Q @ w - self.a)

    def lipschitz(self):
        n = self.Q.shape[0]
        if n <= 500:
            top = np.linalg.eigvalsh(self.Q.toarray())[-1] if n else 0.0
        else:
            top = spla.eigsh(self.Q, k=1, which="LA", return_eigenvectors=False,
                             v0=np.ones(n))[0]
        return 2.0 * max(float(top), 0.0)


class CfecbfResult(NamedTuple):
    ranking: FeatureRanking
    weights: np.ndarray
    losses: np.ndarray


def cfecbf_gradient(w, S_cf, F, lambda1=0.0, lambda2=0.0):
    """Gradient (subgradient ``sign(w)`` for the l1 term) of :func:`cfecbf_loss`."""
    q = _Quadratic(S_cf, F)
    w = np.asarray(w, dtype=np.float64)
    return q.grad(w) + 2.0 * lambda2 * w + lambda1 * np.sign(w)


def fit_cfecbf(S_cf, F, params: CfecbfParams = CfecbfParams()) -> CfecbfResult:
    """Learn feature weights approximating ``S_cf`` by weighted content similarity.

    Full-batch proximal gradient descent from ``w = 1``: a gradient step on
    the smooth part followed by soft-thresholding for the l1 term. Without
    an explicit learning rate the step is ``1 / L`` for the smooth part's
    Lipschitz constant, which makes the loss nonincreasing. A loss that
    becomes non-finite or grows by more than ``1e-9`` raises
    :class:`NonFiniteLoss`.
    """
    q = _Quadratic(S_cf, F)
    n = len(q.a)
    lam1, lam2 = params.lambda1, params.lambda2
    lr = params.learning_rate
    if lr is None:
        L = q.lipschitz() + 2.0 * lam2
        lr = 1.0 / L if L > 0 else 1.0

    def loss(w):
        return q.value(w) + lam1 * np.abs(w).sum() + lam2 * (w @ w)

    w = np.ones(n)
    current = loss(w)
    losses = [current]
    for epoch in range(params.epochs):
        step = w - lr * (q.grad(w) + 2.0 * lam2 * w)
        w = np.sign(step) * np.maximum(np.abs(step) - lr * lam1, 0.0)
        new = loss(w)
        if not np.isfinite(new):
            raise NonFiniteLoss(f"loss became non-finite at epoch {epoch}; lower learning_rate")
        if new > current + LOSS_SLACK * max(1.0, abs(current)):
            raise NonFiniteLoss(
                f"loss increased from {current:.6g} to {new:.6g} at epoch {epoch}; "
                "learning_rate too large"
            )
        current = new
        losses.append(current)
    order = argsort_desc(w)
    ranking = FeatureRanking(order, w[order], "cfecbf", n)
    return CfecbfResult(ranking, w, np.asarray(losses))


def cfecbf_weights(S_cf, F, params: CfecbfParams = CfecbfParams(),
                   n_select: Optional[int] = None) -> FeatureRanking:
    result = fit_cfecbf(S_cf, F, params)
    if n_select is None:
        return result.ranking
    n_select = check_n_select(n_select, 0, result.ranking.n_features)
    r = result.ranking
    return FeatureRanking(r.order[:n_select], r.scores[:n_select], "cfecbf", r.n_features)
