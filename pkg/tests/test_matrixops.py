"""Shared matrix products, checked against naive triple-loop oracles.

Everything downstream (kernels, engines, error tracking) sits on these four
operations, so they get exact frozen cases, dense-vs-sparse agreement on
integer matrices (where floating point is exact), and randomized oracle
comparisons.
"""

import numpy as np
import pytest
import scipy.sparse as sp

from aunmf import matrixops


def loop_matmul(X, Y):
    """Triple-loop reference product, no BLAS."""
    Xd = np.asarray(X.todense()) if matrixops.is_sparse(X) else np.asarray(X)
    Yd = np.asarray(Y.todense()) if matrixops.is_sparse(Y) else np.asarray(Y)
    r, inner = Xd.shape
    inner2, c = Yd.shape
    assert inner == inner2
    out = np.zeros((r, c))
    for i in range(r):
        for j in range(c):
            acc = 0.0
            for t in range(inner):
                acc += Xd[i, t] * Yd[t, j]
            out[i, j] = acc
    return out


def test_gram_frozen_example():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matrixops.gram(M), [[10.0, 14.0], [14.0, 20.0]])


def test_gram_is_symmetric_exactly():
    rand = np.random.default_rng(0)
    M = rand.random((13, 5))
    G = matrixops.gram(M)
    np.testing.assert_array_equal(G, G.T)


def test_gram_matches_loop_oracle():
    rand = np.random.default_rng(1)
    M = rand.random((9, 4))
    np.testing.assert_allclose(matrixops.gram(M), loop_matmul(M.T, M), rtol=1e-12)


def test_mm_a_ht_sparse_single_nonzero():
    # A holds a single 5 at (1, 2); with Ht's row 2 equal to [1, 2] the
    # product's row 1 must be exactly [5, 10] and all other rows zero.
    A = sp.csc_matrix(([5.0], ([1], [2])), shape=(3, 4))
    Ht = np.zeros((4, 2))
    Ht[2] = [1.0, 2.0]
    out = matrixops.mm_a_ht(A, Ht)
    expected = np.zeros((3, 2))
    expected[1] = [5.0, 10.0]
    np.testing.assert_array_equal(out, expected)


def test_mm_wt_a_matches_loop_oracle():
    rand = np.random.default_rng(2)
    W = rand.random((7, 3))
    A = rand.random((7, 5))
    np.testing.assert_allclose(matrixops.mm_wt_a(W, A), loop_matmul(W.T, A), rtol=1e-12)


def test_mm_a_ht_matches_loop_oracle():
    rand = np.random.default_rng(3)
    A = rand.random((6, 8))
    Ht = rand.random((8, 3))
    np.testing.assert_allclose(matrixops.mm_a_ht(A, Ht), loop_matmul(A, Ht), rtol=1e-12)


def test_sparse_and_dense_products_agree_exactly_on_integers():
    # Small-integer matrices make every intermediate exactly representable,
    # so the sparse path must agree bitwise with the dense one.
    rand = np.random.default_rng(4)
    Ad = rand.integers(0, 5, size=(12, 10)).astype(np.float64)
    As = sp.csc_matrix(Ad)
    Ht = rand.integers(0, 5, size=(10, 3)).astype(np.float64)
    W = rand.integers(0, 5, size=(12, 3)).astype(np.float64)
    np.testing.assert_array_equal(matrixops.mm_a_ht(As, Ht), matrixops.mm_a_ht(Ad, Ht))
    np.testing.assert_array_equal(matrixops.mm_wt_a(W, As), matrixops.mm_wt_a(W, Ad))
    assert matrixops.frobenius_sq(As) == matrixops.frobenius_sq(Ad)


def test_frobenius_sq_frozen_example():
    assert matrixops.frobenius_sq(np.array([[3.0, 4.0]])) == 25.0


def test_frobenius_sq_sparse():
    A = sp.csc_matrix(np.array([[0.0, 1.0], [2.0, 2.0]]))
    assert matrixops.frobenius_sq(A) == 9.0


def test_inner_is_elementwise_sum():
    rand = np.random.default_rng(5)
    X = rand.random((6, 4))
    Y = rand.random((6, 4))
    assert matrixops.inner(X, Y) == pytest.approx(float(np.sum(X * Y)), rel=1e-13)


def test_inner_is_layout_invariant():
    # The traversal order is pinned, so C- and F-ordered copies of the same
    # values produce the identical scalar — this is what keeps error traces
    # bitwise reproducible across engines.
    rand = np.random.default_rng(6)
    X = rand.random((31, 17))
    Y = rand.random((31, 17))
    a = matrixops.inner(np.ascontiguousarray(X), np.ascontiguousarray(Y))
    b = matrixops.inner(np.asfortranarray(X), np.asfortranarray(Y))
    c = matrixops.inner(np.ascontiguousarray(X), np.asfortranarray(Y))
    assert a == b == c


def test_inner_shape_mismatch_raises():
    with pytest.raises(ValueError):
        matrixops.inner(np.zeros((2, 3)), np.zeros((3, 2)))


def test_non_2d_input_rejected():
    with pytest.raises(ValueError):
        matrixops.gram(np.zeros(4))
    with pytest.raises(ValueError):
        matrixops.mm_wt_a(np.zeros(4), np.zeros((4, 2)))


def test_gram_equals_explicit_product():
    rand = np.random.default_rng(7)
    M = rand.random((20, 6))
    np.testing.assert_allclose(matrixops.gram(M), M.T @ M, rtol=1e-12, atol=1e-14)
