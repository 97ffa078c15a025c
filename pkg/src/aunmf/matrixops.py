"""Dense/sparse matrix primitives shared by every driver.

Conventions, in lieu of wrapper classes:

* dense matrices are 2-D float64 ``numpy`` arrays, column-major by
  convention (constructors here return Fortran order; consumers accept any);
* sparse matrices are ``scipy.sparse.csc_matrix``;
* a Gram matrix is a k x k dense array that is exactly symmetric — ``gram``
  computes the upper triangle and mirrors it, so ``G[i, j] is G[j, i]``
  bitwise.

Only the data matrix A is ever sparse; factors and Gram matrices are dense.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def is_sparse(M) -> bool:
    return sp.issparse(M)


def _check_2d(M, name: str) -> None:
    if M.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={M.ndim}")
    if M.shape[0] < 1 or M.shape[1] < 1:
        raise ValueError(f"{name} must have positive dimensions, got {M.shape}")


def gram(M: np.ndarray) -> np.ndarray:
    """M^T M for a dense m x k block, exactly symmetric.

    This is the k x k workhorse every kernel consumes (HH^T via gram(H^T),
    W^T W via gram(W)).  BLAS makes no symmetry promise, so the strict lower
    triangle is overwritten with the upper one.
    """
    M = np.asarray(M)
    _check_2d(M, "matrix")
    G = np.asfortranarray(M.T @ M)
    k = G.shape[0]
    lower = np.tril_indices(k, -1)
    G[lower] = G.T[lower]
    return G


def mm_a_ht(A, Ht: np.ndarray) -> np.ndarray:
    """A @ Ht with A dense or CSC sparse, Ht dense n x k; returns m x k."""
    Ht = np.asarray(Ht)
    _check_2d(Ht, "Ht")
    _check_2d(A, "A")
    if A.shape[1] != Ht.shape[0]:
        raise ValueError(f"inner dimensions disagree: {A.shape} x {Ht.shape}")
    return np.asfortranarray(A @ Ht)


def mm_wt_a(W: np.ndarray, A) -> np.ndarray:
    """W^T @ A with A dense or CSC sparse, W dense m x k; returns k x n."""
    W = np.asarray(W)
    _check_2d(W, "W")
    _check_2d(A, "A")
    if W.shape[0] != A.shape[0]:
        raise ValueError(f"inner dimensions disagree: {W.shape}^T x {A.shape}")
    if sp.issparse(A):
        # csc.T is a csr view; csr @ dense is the fast sparse path.
        return np.asfortranarray((A.T @ W).T)
    return np.asfortranarray(W.T @ A)


def frobenius_sq(M) -> float:
    """Sum of squared entries; for sparse input, over stored values."""
    if sp.issparse(M):
        data = M.data
        return float(np.dot(data, data))
    M = np.asarray(M)
    flat = M.ravel(order="K")
    return float(np.dot(flat, flat))


def inner(X, Y) -> float:
    """Frobenius inner product <X, Y> with a pinned traversal order.

    Summation happens over the column-major flattening regardless of how
    either operand is laid out, so the result is bitwise-reproducible across
    callers that built the same values in different memory orders.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape != Y.shape:
        raise ValueError(f"shapes {X.shape} and {Y.shape} disagree")
    return float(np.dot(X.ravel(order="F"), Y.ravel(order="F")))
