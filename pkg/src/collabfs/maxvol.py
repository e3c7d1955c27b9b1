"""Square and rectangular maximal-volume row selection.

Square phase: start from ``k`` independent rows picked by greedy pivoted
Gram-Schmidt, then repeatedly swap in the row ``i`` / position ``j`` with
the largest ``|B[i, j]|`` of ``B = V A^{-1}`` until every coefficient is at
most ``tol``. Each swap multiplies ``|det A|`` by ``|B[i, j]| > tol``.

Rectangular phase: greedily append the leftover row ``x`` maximizing
``1 + x^T (A^T A)^{-1} x``, the factor by which ``det(A^T A)`` grows.
"""

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .exceptions import MaxItersExceeded, ShapeMismatch, SingularStart
from .linalg import as_dense
from .ranking import FeatureRanking, check_n_select

_SINGULAR_TOL = 1e-10
_RECOMPUTE_EVERY = 64


@dataclass(frozen=True)
class MaxvolParams:
    tol: float = 1.05
    max_iters: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 1.0:
            raise ValueError(f"tol must be > 1, got {self.tol}")
        if self.max_iters is not None and self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")

    def iters_for(self, k):
        return 100 * k if self.max_iters is None else self.max_iters


class SquareMaxvol(NamedTuple):
    indices: np.ndarray
    coefficients: np.ndarray
    n_swaps: int
    converged: bool


def initial_rows(V) -> np.ndarray:
    """``k`` linearly independent rows by column-pivoted Gram-Schmidt on ``V^T``."""
    V = np.array(V, dtype=np.float64)
    n, k = V.shape
    norms0 = np.einsum("ij,ij->i", V, V)
    scale = norms0.max(initial=0.0)
    picked = []
    for _ in range(k):
        norms = np.einsum("ij,ij->i", V, V)
        norms[picked] = -1.0
        j = int(np.argmax(norms))
        if scale == 0.0 or norms[j] <= _SINGULAR_TOL ** 2 * scale:
            raise SingularStart(
                f"embedding matrix has rank {len(picked)} < {k}; no nonsingular start"
            )
        picked.append(j)
        q = V[j] / np.sqrt(norms[j])
        V -= np.outer(V @ q, q)
    return np.asarray(picked, dtype=np.intp)


def _coefficients(V, idx):
    return np.linalg.solve(V[idx].T, V.T).T


def square_maxvol(V, params: MaxvolParams = MaxvolParams()) -> SquareMaxvol:
    """Dominant ``k x k`` submatrix of a tall ``n x k`` matrix.

    Returns the selected row indices (in pivot order) and ``B = V A^{-1}``.
    When ``params.max_iters`` swaps are exhausted a :class:`MaxItersExceeded`
    warning is emitted and the best-so-far selection returned.
    """
    V = as_dense(V)
    n, k = V.shape
    if n < k:
        raise ShapeMismatch(f"square_maxvol needs a tall matrix, got {V.shape}")
    idx = initial_rows(V)
    B = _coefficients(V, idx)
    max_iters = params.iters_for(k)
    swaps = 0
    converged = False
    since_refresh = 0
    while True:
        flat = int(np.argmax(np.abs(B)))
        i, j = divmod(flat, k)
        if abs(B[i, j]) <= params.tol:
            if since_refresh == 0:
                converged = True
                break
            # confirm with freshly solved coefficients before stopping
            B = _coefficients(V, idx)
            since_refresh = 0
            continue
        if swaps >= max_iters:
            warnings.warn(
                f"square MaxVol stopped after {swaps} swaps with max |B| = {abs(B[i, j]):.4f}",
                MaxItersExceeded,
                stacklevel=2,
            )
            break
        u = B[i].copy()
        u[j] -= 1.0
        B -= np.outer(B[:, j], u) / B[i, j]
        idx[j] = i
        swaps += 1
        since_refresh += 1
        if since_refresh >= _RECOMPUTE_EVERY:
            B = _coefficients(V, idx)
            since_refresh = 0
    return SquareMaxvol(idx, B, swaps, converged)


def rect_maxvol(V, n_select: int, params: MaxvolParams = MaxvolParams(),
                method: str = "maxvol") -> FeatureRanking:
    """Rank ``n_select`` rows of ``V``: square MaxVol rows first, then greedy volume gains.

    ``scores`` hold ``inf`` for square-phase rows and the volume gain
    ``1 + x^T (A^T A)^{-1} x`` at selection time for greedy rows; the gains
    are nonincreasing.
    """
    V = as_dense(V)
    n, k = V.shape
    n_select = check_n_select(n_select, k, n)
    square = square_maxvol(V, params)
    order = np.empty(n_select, dtype=np.intp)
    scores = np.full(n_select, np.inf)
    order[:k] = square.indices
    if n_select == k:
        return FeatureRanking(order, scores, method, n)

    chosen = np.zeros(n, dtype=bool)
    chosen[square.indices] = True
    A = V[square.indices]
    M = np.linalg.inv(A.T @ A)

    def fresh_gains():
        g = np.einsum("ij,jk,ik->i", V, M, V)
        g[chosen] = -np.inf
        return g

    gains = fresh_gains()
    for t in range(k, n_select):
        if (t - k) and (t - k) % _RECOMPUTE_EVERY == 0:
            sel = order[:t]
            M = np.linalg.inv(V[sel].T @ V[sel])
            gains = fresh_gains()
        i = int(np.argmax(gains))
        q = gains[i]
        order[t] = i
        scores[t] = 1.0 + q
        chosen[i] = True
        Mx = M @ V[i]
        w = V @ Mx
        gains -= w * w / (1.0 + q)
        gains[i] = -np.inf
        M -= np.outer(Mx, Mx) / (1.0 + q)
    return FeatureRanking(order, scores, method, n)


def select_features(embeddings, n_select: int,
                    params: MaxvolParams = MaxvolParams()) -> FeatureRanking:
    """MaxVol ranking of feature embeddings (rows of ``embeddings.V``).

    Degenerate embeddings use only their leading ``effective_rank`` columns.
    """
    V = embeddings.V
    check_n_select(n_select, V.shape[1], V.shape[0])
    r = embeddings.effective_rank
    if r < 1:
        raise SingularStart("embeddings have zero effective rank")
    if r < V.shape[1]:
        V = V[:, :r]
    return rect_maxvol(V, n_select, params)
