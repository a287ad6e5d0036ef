"""Small shared linear-algebra helpers (rank cutoffs, pseudoinverse solves)."""

from __future__ import annotations

import numpy as np


def svd_rank(shape: tuple[int, int], s: np.ndarray) -> int:
    """Numerical rank given singular values, max(m,n)*eps*smax cutoff."""
    if s.size == 0 or s[0] == 0.0:
        return 0
    cutoff = max(shape) * np.finfo(float).eps * s[0]
    return int((s > cutoff).sum())


def minimum_norm_lstsq(A: np.ndarray, b: np.ndarray):
    """Minimum-norm least-squares solution of A x ~ b via SVD.

    Returns
    -------
    x : ndarray
        The pseudoinverse solution ``A^+ b``.
    rank : int
        Numerical rank of A.
    svd : (U_r, s_r, Vt_r)
        The rank-truncated SVD factors, for reuse in variance formulas.
    """
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    rank = svd_rank(A.shape, s)
    U_r, s_r, Vt_r = U[:, :rank], s[:rank], Vt[:rank]
    x = Vt_r.T @ ((U_r.T @ b) / s_r)
    return x, rank, (U_r, s_r, Vt_r)
