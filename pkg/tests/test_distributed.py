"""Distributed engine tests.

The two parallel schemes must reproduce the sequential run — same seed,
same matrix — to tight tolerance on every iteration (bitwise on a single
rank), and their instrumented communication must equal the closed-form
model word for word.
"""

import numpy as np
import pytest
import scipy.sparse as sp

from aunmf import matrixops
from aunmf.comm import run_spmd
from aunmf.costmodel import luc_flop_model, per_iter_cost
from aunmf.datasets import pad_to_grid
from aunmf.distributed import (
    DistributedBlocks,
    ProcessorGrid,
    distribute,
    gather_factors,
    make_grid,
    mpifaun_run,
    naive_run,
)
from aunmf.sequential import NmfConfig, aunmf_run

GRIDS = [(1, (1, 1)), (2, (2, 1)), (4, (2, 2)), (4, (4, 1)), (6, (3, 2)), (8, (4, 2))]


def run_scheme(impl, A, grid, config, orig_dims=None):
    mode = "twoD" if impl == "faun" else "naive"
    blocks = distribute(A, grid, mode, orig_dims=orig_dims)
    result = mpifaun_run(blocks, config) if impl == "faun" else naive_run(blocks, config)
    W, H = gather_factors(
        result.w_blocks, result.h_blocks, grid, mode, blocks.orig_m, blocks.orig_n
    )
    return W, H, result


# ------------------------------------------------------------ grid choice


def test_make_grid_frozen_cases():
    assert (make_grid(1000, 10, 4).p_r, make_grid(1000, 10, 4).p_c) == (4, 1)
    assert (make_grid(10, 1000, 4).p_r, make_grid(10, 1000, 4).p_c) == (1, 4)
    assert (make_grid(120, 120, 16).p_r, make_grid(120, 120, 16).p_c) == (4, 4)


def test_make_grid_single_rank():
    g = make_grid(50, 50, 1)
    assert (g.p_r, g.p_c) == (1, 1)


def test_grid_coordinates_round_trip():
    g = ProcessorGrid(3, 2)
    for rank in range(6):
        i, j = g.coords(rank)
        assert g.rank_of(i, j) == rank
    with pytest.raises(ValueError):
        ProcessorGrid(0, 2)


# --------------------------------------------------- distribute and gather


def test_distribute_twod_frozen_blocks():
    A = np.arange(16.0).reshape(4, 4)
    blocks = distribute(A, ProcessorGrid(2, 2), "twoD")
    # Rank 1 sits at grid position (0, 1): rows 0-1, columns 2-3.
    np.testing.assert_array_equal(blocks.a_blocks[1], [[2.0, 3.0], [6.0, 7.0]])
    np.testing.assert_array_equal(blocks.a_blocks[2], [[8.0, 9.0], [12.0, 13.0]])


def test_distribute_naive_holds_row_and_column_blocks():
    A = np.arange(16.0).reshape(4, 4)
    blocks = distribute(A, ProcessorGrid(2, 1), "naive")
    row_block, col_block = blocks.a_blocks[1]
    np.testing.assert_array_equal(row_block, A[2:4, :])
    np.testing.assert_array_equal(col_block, A[:, 2:4])


def test_distribute_requires_divisible_dims():
    with pytest.raises(ValueError):
        distribute(np.ones((5, 4)), ProcessorGrid(2, 2), "twoD")


def test_distribute_sparse_keeps_sparsity():
    A = sp.random(8, 8, density=0.3, random_state=0, format="csr")
    blocks = distribute(A, ProcessorGrid(2, 2), "twoD")
    assert all(matrixops.is_sparse(b) for b in blocks.a_blocks)
    np.testing.assert_array_equal(
        np.asarray(blocks.a_blocks[3].todense()), np.asarray(A.tocsc()[4:, 4:].todense())
    )


def test_gather_factors_inverts_block_layout():
    # Build per-rank factor blocks by slicing known global factors the way
    # each scheme lays them out, then check reassembly.
    rand = np.random.default_rng(0)
    W = rand.random((8, 3))
    H = rand.random((3, 8))
    grid = ProcessorGrid(2, 2)

    w_blocks = [W[r * 2:(r + 1) * 2] for r in range(4)]
    h_blocks = []
    for rank in range(4):
        i, j = grid.coords(rank)
        col0 = j * 4 + i * 2
        h_blocks.append(H[:, col0:col0 + 2])
    W2, H2 = gather_factors(w_blocks, h_blocks, grid, "twoD", 8, 8)
    np.testing.assert_array_equal(W2, W)
    np.testing.assert_array_equal(H2, H)

    naive_grid = ProcessorGrid(4, 1)
    h_naive = [H[:, r * 2:(r + 1) * 2] for r in range(4)]
    W3, H3 = gather_factors(w_blocks, h_naive, naive_grid, "naive", 8, 8)
    np.testing.assert_array_equal(W3, W)
    np.testing.assert_array_equal(H3, H)


def test_gather_factors_strips_padding():
    W = np.ones((8, 2))
    H = np.ones((2, 8))
    grid = ProcessorGrid(2, 2)
    w_blocks = [W[r * 2:(r + 1) * 2] for r in range(4)]
    h_blocks = [H[:, r * 2:(r + 1) * 2] for r in range(4)]
    W2, H2 = gather_factors(w_blocks, h_blocks, grid, "twoD", 7, 5)
    assert W2.shape == (7, 2)
    assert H2.shape == (2, 5)


# --------------------------------------------- sequential equivalence


@pytest.mark.parametrize("algo", ["mu", "hals", "bpp"])
@pytest.mark.parametrize("p,grid", GRIDS)
def test_faun_matches_sequential_each_iteration(algo, p, grid):
    rand = np.random.default_rng(17)
    m, n, k, iters = 24, 36, 3, 4
    A = np.asfortranarray(rand.random((m, n)))
    padded, orig = pad_to_grid(A, p)
    config = NmfConfig(k=k, max_iters=iters, algo=algo, seed=5)
    Wseq, Hseq, seq_trace = aunmf_run(A, config)
    W, H, result = run_scheme("faun", padded, ProcessorGrid(*grid), config, orig_dims=orig)
    np.testing.assert_allclose(W, Wseq, rtol=0, atol=1e-8 * max(1, abs(Wseq).max()))
    np.testing.assert_allclose(H, Hseq, rtol=0, atol=1e-8 * max(1, abs(Hseq).max()))
    for dist_err, seq_err in zip(result.trace.rel_errors, seq_trace.rel_errors):
        assert dist_err == pytest.approx(seq_err, abs=1e-8)


@pytest.mark.parametrize("algo", ["mu", "hals", "bpp"])
@pytest.mark.parametrize("p", [1, 2, 4, 6])
def test_naive_matches_sequential(algo, p):
    rand = np.random.default_rng(18)
    m, n, k, iters = 24, 36, 3, 4
    A = np.asfortranarray(rand.random((m, n)))
    padded, orig = pad_to_grid(A, p)
    config = NmfConfig(k=k, max_iters=iters, algo=algo, seed=6)
    Wseq, Hseq, seq_trace = aunmf_run(A, config)
    W, H, result = run_scheme("naive", padded, ProcessorGrid(p, 1), config, orig_dims=orig)
    np.testing.assert_allclose(W, Wseq, rtol=0, atol=1e-8 * max(1, abs(Wseq).max()))
    np.testing.assert_allclose(H, Hseq, rtol=0, atol=1e-8 * max(1, abs(Hseq).max()))
    for dist_err, seq_err in zip(result.trace.rel_errors, seq_trace.rel_errors):
        assert dist_err == pytest.approx(seq_err, abs=1e-8)


@pytest.mark.parametrize("algo", ["mu", "hals", "bpp"])
def test_single_rank_faun_is_bitwise_sequential(algo):
    # On one rank every collective is the identity, and the block layouts
    # are normalized to the sequential ones, so equality is exact.
    rand = np.random.default_rng(19)
    A = np.asfortranarray(rand.random((20, 14)))
    config = NmfConfig(k=3, max_iters=5, algo=algo, seed=7)
    Wseq, Hseq, seq_trace = aunmf_run(A, config)
    W, H, result = run_scheme("faun", A, ProcessorGrid(1, 1), config)
    np.testing.assert_array_equal(W, Wseq)
    np.testing.assert_array_equal(H, Hseq)
    assert result.trace.rel_errors == seq_trace.rel_errors


def test_sparse_and_dense_runs_agree():
    rand = np.random.default_rng(20)
    dense = rand.random((16, 12)) * (rand.random((16, 12)) < 0.4)
    config = NmfConfig(k=2, max_iters=3, algo="bpp", seed=8)
    grid = ProcessorGrid(2, 2)
    padded_d, orig = pad_to_grid(np.asfortranarray(dense), 4)
    padded_s, _ = pad_to_grid(sp.csc_matrix(dense), 4)
    Wd, Hd, _ = run_scheme("faun", padded_d, grid, config, orig_dims=orig)
    Ws, Hs, _ = run_scheme("faun", padded_s, grid, config, orig_dims=orig)
    np.testing.assert_allclose(Ws, Wd, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(Hs, Hd, rtol=1e-10, atol=1e-12)


# --------------------------------------------------- counter exactness


@pytest.mark.parametrize("algo", ["mu", "hals", "bpp"])
@pytest.mark.parametrize("grid", [(4, 1), (2, 2), (1, 4)])
def test_faun_counters_match_model_exactly(algo, grid):
    m, n, k, iters = 96, 48, 2, 3
    rand = np.random.default_rng(21)
    A = np.asfortranarray(rand.random((m, n)))
    config = NmfConfig(k=k, max_iters=iters, algo=algo, seed=9)
    _, _, result = run_scheme("faun", A, ProcessorGrid(*grid), config)
    model = per_iter_cost("faun", m, n, k, grid, luc_flop_model(algo))
    for snap in result.counters:
        total_words = sum(snap["words"].values())
        total_msgs = sum(snap["messages"].values())
        assert total_words == iters * model.words
        assert total_msgs == iters * model.messages
        for kind, entry in model.breakdown.items():
            assert snap["words"][kind] == iters * entry["words"]
            assert snap["messages"][kind] == iters * entry["messages"]


@pytest.mark.parametrize("algo", ["mu", "hals", "bpp"])
def test_naive_counters_match_model_exactly(algo):
    m, n, k, iters, p = 96, 48, 2, 3, 4
    rand = np.random.default_rng(22)
    A = np.asfortranarray(rand.random((m, n)))
    config = NmfConfig(k=k, max_iters=iters, algo=algo, seed=10)
    _, _, result = run_scheme("naive", A, ProcessorGrid(p, 1), config)
    model = per_iter_cost("naive", m, n, k, (p, 1), luc_flop_model(algo))
    for snap in result.counters:
        assert sum(snap["words"].values()) == iters * model.words
        assert sum(snap["messages"].values()) == iters * model.messages


def test_counters_invariant_to_sparsity():
    # Word counts are factor traffic only; the number of stored nonzeros in
    # A must not show up anywhere.
    m, n, k = 96, 48, 2
    config = NmfConfig(k=k, max_iters=2, algo="mu", seed=11)
    grid = ProcessorGrid(2, 2)
    dense = np.asfortranarray(np.random.default_rng(23).random((m, n)))
    nearly_empty = sp.csc_matrix(([1.0], ([0], [0])), shape=(m, n))
    _, _, r_dense = run_scheme("faun", dense, grid, config)
    _, _, r_sparse = run_scheme("faun", nearly_empty, grid, config)
    assert r_dense.counters == r_sparse.counters


# ------------------------------------------------------------ error paths


def test_kernel_failure_is_wrapped_with_rank_and_iteration():
    # A negative entry smuggled into a W block makes the MU kernel raise on
    # the first half-step; the engine labels the failure.
    A = np.asfortranarray(np.ones((8, 8)))
    blocks = distribute(A, ProcessorGrid(2, 2), "twoD")

    from aunmf import distributed as dist_mod

    original = dist_mod.w_block

    def poisoned(seed, k, row0, rows, row_limit):
        block = original(seed, k, row0, rows, row_limit)
        block[0, 0] = -1.0
        return block

    dist_mod.w_block = poisoned
    try:
        with pytest.raises(RuntimeError, match="update failed at iteration 0 on rank"):
            mpifaun_run(blocks, NmfConfig(k=2, max_iters=1, algo="mu", seed=0))
    finally:
        dist_mod.w_block = original


def test_mode_grid_mismatch_rejected():
    with pytest.raises(ValueError):
        distribute(np.ones((8, 8)), ProcessorGrid(2, 2), "blockCyclic")
