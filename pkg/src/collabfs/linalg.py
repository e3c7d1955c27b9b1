"""Dense linear-algebra primitives: jittered Cholesky, truncated SVD, volume.

Dense matrices are plain ``numpy.ndarray`` objects; sparse ones are
``scipy.sparse`` CSR matrices.
"""

from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse as sp

from .exceptions import EmptyMatrix, NotPositiveDefinite, RankTooLarge, ShapeMismatch

#: Above this ``min(rows, cols)`` the randomized range finder is used.
EXACT_SVD_LIMIT = 512
OVERSAMPLING = 10
POWER_ITERATIONS = 4
MAX_JITTER_ESCALATIONS = 3
RANK_TOL = 1e-12


def as_dense(A) -> np.ndarray:
    if sp.issparse(A):
        A = A.toarray()
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ShapeMismatch(f"expected a 2-d matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix contains NaN or Inf entries")
    return A


def as_csr(A) -> sp.csr_matrix:
    """Canonical CSR copy: float64, duplicates summed, sorted indices."""
    M = sp.csr_matrix(A, dtype=np.float64, copy=True)
    M.sum_duplicates()
    M.sort_indices()
    if not np.all(np.isfinite(M.data)):
        raise ValueError("matrix contains NaN or Inf entries")
    return M


def _try_cholesky(S):
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return None
    d = np.diag(L)
    if not np.all(np.isfinite(L)) or np.any(d <= 0):
        return None
    return L


def cholesky(S, jitter: float = 0.0, return_jitter: bool = False):
    """Lower Cholesky factor of a symmetric (semi)definite matrix.

    A factorization of ``S + jitter * I`` is attempted first. On failure the
    diagonal shift is raised to ``1e-10 * trace(S) / N`` (or kept at
    ``jitter`` if that is larger) and multiplied by 10 up to three times.

    Parameters
    ----------
    S : array_like, shape (N, N)
    jitter : float
        Initial diagonal shift, nonnegative.
    return_jitter : bool
        Also return the shift that was finally applied.

    Returns
    -------
    L : ndarray, shape (N, N)
        Lower triangular with strictly positive diagonal.
    jitter : float, optional
    """
    S = as_dense(S)
    n, m = S.shape
    if n != m:
        raise ShapeMismatch(f"cholesky needs a square matrix, got {S.shape}")
    if jitter < 0:
        raise ValueError("jitter must be nonnegative")
    scale = max(np.abs(S).max(initial=0.0), 1.0)
    if np.abs(S - S.T).max(initial=0.0) > 1e-10 * scale:
        raise ShapeMismatch("cholesky needs a symmetric matrix")
    S = 0.5 * (S + S.T)
    if n == 0:
        L = np.zeros((0, 0))
        return (L, jitter) if return_jitter else L

    eye = np.eye(n)
    shift = jitter
    L = _try_cholesky(S + shift * eye if shift else S)
    if L is None:
        base = 1e-10 * abs(np.trace(S)) / n
        if base == 0.0:
            base = 1e-10
        shift = max(jitter, base)
        for _ in range(MAX_JITTER_ESCALATIONS + 1):
            L = _try_cholesky(S + shift * eye)
            if L is not None:
                break
            shift *= 10.0
        else:
            raise NotPositiveDefinite(
                f"Cholesky failed after {MAX_JITTER_ESCALATIONS} jitter "
                f"escalations (last shift {shift / 10.0:.3e})"
            )
    return (L, shift) if return_jitter else L


class SVDResult(NamedTuple):
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray
    effective_rank: int

    @property
    def rank_deficient(self) -> bool:
        return self.effective_rank < len(self.sigma)


def _flip_signs(U, s, Vt):
    # largest-magnitude entry of each right singular vector made positive
    idx = np.argmax(np.abs(Vt), axis=1)
    signs = np.sign(Vt[np.arange(Vt.shape[0]), idx])
    signs[signs == 0] = 1.0
    return U * signs, s, Vt * signs[:, None]


def _randomized_svd(A, k, rng):
    n_rows, n_cols = A.shape
    ell = min(k + OVERSAMPLING, n_rows, n_cols)
    Omega = rng.standard_normal((n_cols, ell))
    Q, _ = np.linalg.qr(A @ Omega)
    for _ in range(POWER_ITERATIONS):
        Z, _ = np.linalg.qr(A.T @ Q)
        Q, _ = np.linalg.qr(A @ Z)
    B = np.asarray(Q.T @ A)
    Ub, s, Vt = np.linalg.svd(B, full_matrices=False)
    return Q @ Ub, s, Vt


def truncated_svd(A, k: int, seed: Optional[int] = 0) -> SVDResult:
    """Rank-``k`` truncated SVD ``A ~ U diag(sigma) V^T``.

    Exact LAPACK SVD when ``min(A.shape) <= 512``; otherwise a seeded
    randomized range finder (oversampling 10, 4 power iterations).
    Singular vectors are sign-normalized so the result is deterministic.
    Singular values below ``1e-12 * sigma[0]`` are reported as exact zeros
    and excluded from ``effective_rank``.
    """
    if sp.issparse(A):
        if A.shape[0] == 0 or A.shape[1] == 0:
            raise EmptyMatrix("cannot take the SVD of an empty matrix")
        A = sp.csr_matrix(A, dtype=np.float64)
        dense = min(A.shape) <= EXACT_SVD_LIMIT
        if dense:
            A = as_dense(A)
    else:
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.size == 0:
            raise EmptyMatrix("cannot take the SVD of an empty matrix")
        A = as_dense(A)
        dense = min(A.shape) <= EXACT_SVD_LIMIT
    k = int(k)
    if k < 1 or k > min(A.shape):
        raise RankTooLarge(f"k={k} outside [1, {min(A.shape)}] for shape {A.shape}")

    if dense:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    else:
        U, s, Vt = _randomized_svd(A, k, np.random.default_rng(seed))
    U, s, Vt = U[:, :k], s[:k].copy(), Vt[:k]
    U, s, Vt = _flip_signs(U, s, Vt)

    top = s[0] if s.size else 0.0
    zero = s <= RANK_TOL * top if top > 0 else np.ones_like(s, dtype=bool)
    s[zero] = 0.0
    return SVDResult(
        np.ascontiguousarray(U),
        s,
        np.ascontiguousarray(Vt.T),
        int(np.count_nonzero(~zero)),
    )


def volume(B) -> float:
    """``sqrt(det(B^T B))`` for a tall or square matrix, via QR."""
    B = as_dense(B)
    rows, cols = B.shape
    if rows < cols:
        raise ShapeMismatch(f"volume needs rows >= cols, got {B.shape}")
    if cols == 0:
        return 1.0
    R = np.linalg.qr(B, mode="r")
    return float(np.prod(np.abs(np.diag(R))))
