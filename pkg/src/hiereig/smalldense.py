"""Deterministic dense kernels for small matrices.

Symmetric eigendecomposition, the generalized symmetric-definite problem
solved by Cholesky congruence, and QR in an arbitrary SPD inner product.
Used for the coarsest-level solve, inside Lanczos restarts, and as the
oracle side of many tests. Eigenvector signs follow a fixed convention
(largest-magnitude component positive, ties broken by lowest index) so all
downstream results are reproducible bit-for-bit on a given platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from hiereig.errors import AsymmetricMatrixError, RankDeficiencyError


@dataclass
class EigenPairsDense:
    values: np.ndarray   # descending
    vectors: np.ndarray  # matching columns


def _check_symmetric(s: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"expected square matrix, got shape {s.shape}")
    scale = max(np.max(np.abs(s)), 1e-300)
    asym = np.max(np.abs(s - s.T))
    if asym > rel_tol * scale:
        raise AsymmetricMatrixError(f"matrix asymmetric: rel deviation {asym / scale:.3e}")
    return 0.5 * (s + s.T)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # argmax returns the first maximal index, which is the tie rule we want
    if vectors.size == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def dense_sym_eig(s) -> EigenPairsDense:
    """Eigendecomposition S = P diag(d) P^T with eigenvalues descending."""
    s = _check_symmetric(s)
    w, v = np.linalg.eigh(s)
    order = np.argsort(w, kind="stable")[::-1]
    return EigenPairsDense(values=w[order], vectors=_fix_signs(v[:, order]))


def dense_gen_eig(a, m) -> EigenPairsDense:
    """Solve A z = (1/mu) M z for SPD A, M; returns mu descending, z M-orthonormal.

    mu are the eigenvalues of A^{-1} M. Solved by Cholesky congruence
    M = L L^T followed by a dense symmetric eigendecomposition, which is
    adequate because both operators are well conditioned by construction
    wherever this routine is used.
    """
    a = _check_symmetric(a)
    m = _check_symmetric(m)
    if a.shape != m.shape:
        raise ValueError("A and M must have equal dims")
    try:
        low = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise ValueError("M is not positive definite") from exc
    # pencil A z = lam M z  <->  (L^-1 A L^-T) y = lam y,  z = L^-T y
    t = sla.solve_triangular(low, a, lower=True)
    t = sla.solve_triangular(low, t.T, lower=True).T
    w, y = np.linalg.eigh(0.5 * (t + t.T))
    if w[0] <= 0:
        raise ValueError("A is not positive definite on span(M)")
    order = np.argsort(w, kind="stable")  # lam ascending == mu = 1/lam descending
    lam = w[order]
    z = sla.solve_triangular(low, y[:, order], lower=True, trans="T")
    return EigenPairsDense(values=1.0 / lam, vectors=_fix_signs(z))


def m_orthogonal_qr(f, apply_m, rank_tol: float = 1e-13):
    """QR factorization F = Q R with Q^T M Q = I.

    Modified Gram-Schmidt in the M inner product with one full
    reorthogonalization pass. R has a positive diagonal. Raises on rank
    deficiency, identifying the offending column.
    """
    f = np.array(f, dtype=np.float64, order="F")
    if f.ndim == 1:
        f = f[:, None]
    n, k = f.shape
    if callable(apply_m):
        m_op = apply_m
    elif apply_m is None:
        m_op = lambda x: x
    else:
        m_mat = apply_m
        m_op = lambda x: m_mat @ x
    q = np.zeros((n, k), order="F")
    mq = np.zeros((n, k), order="F")
    r = np.zeros((k, k))
    for j in range(k):
        w = f[:, j].copy()
        norm0 = float(np.sqrt(max(w @ m_op(w), 0.0)))
        for _ in range(2):  # MGS + one full reorth pass
            for i in range(j):
                h = float(mq[:, i] @ w)
                r[i, j] += h
                w -= h * q[:, i]
        mw = m_op(w)
        norm = float(np.sqrt(max(w @ mw, 0.0)))
        if norm <= rank_tol * max(norm0, 1e-300):
            raise RankDeficiencyError(f"column {j} is dependent in the M inner product")
        r[j, j] = norm
        q[:, j] = w / norm
        mq[:, j] = mw / norm
    return q, r
