"""Distributed alternating-updating NMF: naive 1-D and 2-D grid schemes.

Both schemes run as SPMD rank functions over the in-process communicator.
The naive scheme all-gathers the entire fixed factor every half-iteration and
computes the Gram matrix redundantly; the grid scheme distributes A on a
p_r x p_c processor grid and moves only factor blocks:

    per half-iteration   all-reduce (k x k Gram contributions, all ranks)
                         all-gather (fixed-factor block, one grid dimension)
                         local multiply
                         reduce-scatter (cross product, other grid dimension)
                         local kernel update

Layout conventions (rank r at grid position (i, j) = divmod(r, p_c)):
rank r owns global W rows [r*m/p, (r+1)*m/p) — contiguous in rank order —
and global H columns [j*n/p_c + i*n/p, ...+n/p).  W travels in C order (row
blocks stay contiguous), H in Fortran order (column blocks stay contiguous).

Relative-error tracking reuses the scheme's own quantities plus a few
diagnostic exchanges that bypass the counters; instrumented traffic is
exactly the algorithm's own collectives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from aunmf import matrixops
from aunmf.comm import Communicator, run_spmd
from aunmf.costmodel import optimize_grid_exhaustive
from aunmf.sequential import (
    IterationTrace,
    NmfConfig,
    PhaseTimer,
    apply_hals_normalization,
    h_block,
    relative_error,
    update_h,
    update_w,
    w_block,
)


@dataclass(frozen=True)
class ProcessorGrid:
    p_r: int
    p_c: int

    def __post_init__(self):
        if self.p_r < 1 or self.p_c < 1:
            raise ValueError(f"grid dimensions must be >= 1, got {self.p_r}x{self.p_c}")

    @property
    def p(self) -> int:
        return self.p_r * self.p_c

    def coords(self, rank: int):
        """Grid position of a global rank (row-major numbering)."""
        return divmod(rank, self.p_c)

    def rank_of(self, i: int, j: int) -> int:
        return i * self.p_c + j


def make_grid(m: int, n: int, p: int) -> ProcessorGrid:
    """Choose the processor grid minimizing modeled per-iteration words.

    Very tall matrices (m/p >= n) get a 1-D row distribution, very wide ones
    the transpose; otherwise every divisor pair of p is tried.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if m >= n * p:
        return ProcessorGrid(p, 1)
    if n >= m * p:
        return ProcessorGrid(1, p)
    return ProcessorGrid(*optimize_grid_exhaustive(m, n, 1, p))


@dataclass
class DistributedBlocks:
    """Per-rank pieces of A plus the dimensions needed to undo padding.

    mode "twoD": a_blocks[r] is A_ij, (m/p_r) x (n/p_c).
    mode "naive": a_blocks[r] is (A_i, A^i) — the rank's row block
    (m/p) x n and column block m x (n/p); two copies of the data.
    m, n are padded dims; orig_m, orig_n the pre-padding ones (factor
    entries beyond them are identically zero throughout).
    """

    mode: str
    grid: ProcessorGrid
    m: int
    n: int
    orig_m: int
    orig_n: int
    a_blocks: list


def distribute(A, grid: ProcessorGrid, mode: str, orig_dims=None) -> DistributedBlocks:
    """Split a (padded) matrix into per-rank blocks.

    Requires p | m and p | n (use pad_to_grid first); orig_dims records the
    unpadded shape, defaulting to A's own.
    """
    if mode not in ("twoD", "naive"):
        raise ValueError(f"mode must be 'twoD' or 'naive', got {mode!r}")
    m, n = A.shape
    p = grid.p
    if m % p or n % p:
        raise ValueError(f"dimensions {m}x{n} not divisible by p={p}; pad first")
    orig_m, orig_n = orig_dims if orig_dims is not None else (m, n)
    sparse = matrixops.is_sparse(A)
    if sparse:
        A = A.tocsc()

    def cut(r0, r1, c0, c1):
        block = A[r0:r1, c0:c1]
        return block.tocsc() if sparse else np.asfortranarray(block)

    blocks = []
    if mode == "twoD":
        bm, bn = m // grid.p_r, n // grid.p_c
        for rank in range(p):
            i, j = grid.coords(rank)
            blocks.append(cut(i * bm, (i + 1) * bm, j * bn, (j + 1) * bn))
    else:
        bm, bn = m // p, n // p
        for rank in range(p):
            blocks.append((
                cut(rank * bm, (rank + 1) * bm, 0, n),
                cut(0, m, rank * bn, (rank + 1) * bn),
            ))
    return DistributedBlocks(mode, grid, m, n, orig_m, orig_n, blocks)


@dataclass
class DistRunResult:
    """Rank-ordered local factors plus rank 0's trace and all counters."""

    w_blocks: list
    h_blocks: list
    trace: IterationTrace
    counters: list


def gather_factors(w_blocks, h_blocks, grid: ProcessorGrid, mode: str,
                   orig_m: int, orig_n: int):
    """Assemble global (W, H) from per-rank blocks and strip padding."""
    p = grid.p
    W = np.vstack(w_blocks)
    k = W.shape[1]
    chunk_n = h_blocks[0].shape[1]
    n_pad = chunk_n * p
    H = np.zeros((k, n_pad), order="F")
    for rank, block in enumerate(h_blocks):
        if mode == "twoD":
            i, j = grid.coords(rank)
            col0 = j * (n_pad // grid.p_c) + i * chunk_n
        else:
            col0 = rank * chunk_n
        H[:, col0:col0 + chunk_n] = block
    return np.asfortranarray(W[:orig_m, :]), np.asfortranarray(H[:, :orig_n])


def _column_sumsq(M: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->j", M, M)


_ORDER_NOTE = """Layout discipline: every array rebuilt from a collective is
converted to the memory order the sequential engine produces at the same
point (grams and gathered W Fortran-order, scattered products C-order for
the W phase and C-order after the F-order unflatten for the H phase).  The
values are already bitwise-determined by the deterministic reductions; fixing
the layout too makes the p=1 grid run bitwise-identical to the sequential
engine, because BLAS rounding depends on operand order."""


def _reduced_gram(comm: Communicator, local_block: np.ndarray, k: int,
                  counted: bool = True) -> np.ndarray:
    """Sum of per-rank Gram contributions, identical on every rank."""
    U = matrixops.gram(local_block)
    return np.asfortranarray(comm.all_reduce(U.ravel(), counted=counted).reshape(k, k))


def _diagnostic_error(comm, norm_a_sq, GW, H_loc, WtA_loc, k):
    """Relative error after the H update, via uncounted exchanges only."""
    if norm_a_sq <= 0:
        return 0.0
    GHn = _reduced_gram(comm, np.ascontiguousarray(H_loc.T), k, counted=False)
    t_part = matrixops.inner(WtA_loc, H_loc)
    t = float(comm.all_reduce(np.array([t_part]), counted=False)[0])
    return relative_error(norm_a_sq, GW, GHn, t)


def _kernel_error(exc, what, iteration, rank):
    return RuntimeError(
        f"{what} update failed at iteration {iteration} on rank {rank}: {exc}"
    )


def mpifaun_run(blocks: DistributedBlocks, config: NmfConfig) -> DistRunResult:
    """Run the 2-D grid scheme; all ranks execute collectively in-process."""
    if blocks.mode != "twoD":
        raise ValueError("mpifaun_run needs blocks distributed in twoD mode")
    grid = blocks.grid
    p, p_r, p_c = grid.p, grid.p_r, grid.p_c
    m, n, k = blocks.m, blocks.n, config.k
    if k > min(blocks.orig_m, blocks.orig_n):
        raise ValueError(f"k={k} exceeds min(m, n)={min(blocks.orig_m, blocks.orig_n)}")
    bm_r, bn_c = m // p_r, n // p_c  # A_ij block shape
    cm, cn = m // p, n // p          # local factor chunk sizes

    def rank_fn(comm: Communicator):
        rank = comm.rank
        i, j = grid.coords(rank)
        row_comm, col_comm = comm.split_grid(p_r, p_c)
        A_ij = blocks.a_blocks[rank]
        w_row0 = rank * cm
        h_col0 = j * bn_c + i * cn
        W_loc = w_block(config.seed, k, w_row0, cm, blocks.orig_m)
        H_loc = h_block(config.seed, k, h_col0, cn, blocks.orig_n)

        norm_a_sq = float(comm.all_reduce(
            np.array([matrixops.frobenius_sq(A_ij)]), counted=False)[0])
        timer = PhaseTimer()
        errors = []

        # Iteration-0 error: one uncounted pass of the H-phase data movement.
        if norm_a_sq > 0:
            GW0 = _reduced_gram(comm, W_loc, k, counted=False)
            Wi = np.asfortranarray(row_comm.all_gather(
                np.ascontiguousarray(W_loc).ravel(), counted=False).reshape(bm_r, k))
            Y0 = matrixops.mm_wt_a(Wi, A_ij)
            WtA0 = col_comm.reduce_scatter(
                np.asfortranarray(Y0).ravel(order="F"), counted=False
            ).reshape(k, cn, order="F")
            errors.append(_diagnostic_error(comm, norm_a_sq, GW0, H_loc, WtA0, k))
        else:
            errors.append(0.0)

        for it in range(config.max_iters):
            timer.new_iteration()

            # --- W half-iteration ---
            with timer("gram"):
                U = matrixops.gram(np.ascontiguousarray(H_loc.T))
            with timer("allreduce"):
                GH = np.asfortranarray(comm.all_reduce(U.ravel()).reshape(k, k))
            with timer("allgather"):
                H_j = col_comm.all_gather(H_loc.ravel(order="F")).reshape(k, bn_c, order="F")
            with timer("mm"):
                V = matrixops.mm_a_ht(A_ij, np.ascontiguousarray(H_j.T))
            with timer("reducescatter"):
                AHt_loc = row_comm.reduce_scatter(
                    np.ascontiguousarray(V).ravel()).reshape(cm, k)
            try:
                with timer("luc"):
                    W_loc, col_ss = update_w(config.algo, GH, AHt_loc, W_loc)
                if config.algo == "hals":
                    with timer("allreduce"):
                        global_ss = comm.all_reduce(col_ss)
                    with timer("luc"):
                        W_loc, H_loc = apply_hals_normalization(
                            W_loc, H_loc, global_ss, config.seed, it, w_row0, blocks.orig_m)
            except Exception as exc:
                raise _kernel_error(exc, "W", it, rank) from exc

            # --- H half-iteration ---
            with timer("gram"):
                Uw = matrixops.gram(W_loc)
            with timer("allreduce"):
                GW = np.asfortranarray(comm.all_reduce(Uw.ravel()).reshape(k, k))
            with timer("allgather"):
                W_i = np.asfortranarray(row_comm.all_gather(
                    np.ascontiguousarray(W_loc).ravel()).reshape(bm_r, k))
            with timer("mm"):
                Y = matrixops.mm_wt_a(W_i, A_ij)
            with timer("reducescatter"):
                WtA_loc = col_comm.reduce_scatter(
                    np.asfortranarray(Y).ravel(order="F")).reshape(k, cn, order="F")
            try:
                with timer("luc"):
                    H_loc = update_h(config.algo, GW, WtA_loc, H_loc)
            except Exception as exc:
                raise _kernel_error(exc, "H", it, rank) from exc

            errors.append(_diagnostic_error(comm, norm_a_sq, GW, H_loc, WtA_loc, k))
            if config.tolerance is not None and errors[-2] - errors[-1] < config.tolerance:
                break

        trace = IterationTrace(rel_errors=errors, seconds=timer.seconds)
        return W_loc, H_loc, trace, comm.counters.snapshot()

    per_rank = run_spmd(p, rank_fn)
    return DistRunResult(
        w_blocks=[r[0] for r in per_rank],
        h_blocks=[r[1] for r in per_rank],
        trace=per_rank[0][2],
        counters=[r[3] for r in per_rank],
    )


def naive_run(blocks: DistributedBlocks, config: NmfConfig) -> DistRunResult:
    """Run the naive 1-D scheme: full-factor all-gathers, redundant Grams."""
    if blocks.mode != "naive":
        raise ValueError("naive_run needs blocks distributed in naive mode")
    grid = blocks.grid
    p = grid.p
    m, n, k = blocks.m, blocks.n, config.k
    if k > min(blocks.orig_m, blocks.orig_n):
        raise ValueError(f"k={k} exceeds min(m, n)={min(blocks.orig_m, blocks.orig_n)}")
    cm, cn = m // p, n // p

    def rank_fn(comm: Communicator):
        rank = comm.rank
        A_row, A_col = blocks.a_blocks[rank]
        W_loc = w_block(config.seed, k, rank * cm, cm, blocks.orig_m)
        H_loc = h_block(config.seed, k, rank * cn, cn, blocks.orig_n)

        norm_a_sq = float(comm.all_reduce(
            np.array([matrixops.frobenius_sq(A_col)]), counted=False)[0])
        timer = PhaseTimer()
        errors = []

        if norm_a_sq > 0:
            GW0 = _reduced_gram(comm, W_loc, k, counted=False)
            W_full0 = np.asfortranarray(comm.all_gather(
                np.ascontiguousarray(W_loc).ravel(), counted=False).reshape(m, k))
            WtA0 = matrixops.mm_wt_a(W_full0, A_col)
            errors.append(_diagnostic_error(comm, norm_a_sq, GW0, H_loc, WtA0, k))
        else:
            errors.append(0.0)

        for it in range(config.max_iters):
            timer.new_iteration()

            # --- W half: gather H, everything else local ---
            with timer("allgather"):
                H_full = comm.all_gather(H_loc.ravel(order="F")).reshape(k, n, order="F")
            with timer("gram"):
                GH = matrixops.gram(np.ascontiguousarray(H_full.T))
            with timer("mm"):
                AHt = matrixops.mm_a_ht(A_row, np.ascontiguousarray(H_full.T))
            try:
                with timer("luc"):
                    W_loc, _ = update_w(config.algo, GH, AHt, W_loc)
            except Exception as exc:
                raise _kernel_error(exc, "W", it, rank) from exc

            # --- H half: gather W, normalize from the gathered copy (HALS),
            # everything else local ---
            with timer("allgather"):
                W_full = np.asfortranarray(comm.all_gather(
                    np.ascontiguousarray(W_loc).ravel()).reshape(m, k))
            if config.algo == "hals":
                with timer("luc"):
                    global_ss = _column_sumsq(W_full)
                    W_full, H_loc = apply_hals_normalization(
                        W_full, H_loc, global_ss, config.seed, it, 0, blocks.orig_m)
                    W_loc = np.asfortranarray(W_full[rank * cm:(rank + 1) * cm, :])
            with timer("gram"):
                GW = matrixops.gram(W_full)
            with timer("mm"):
                WtA = matrixops.mm_wt_a(W_full, A_col)
            try:
                with timer("luc"):
                    H_loc = update_h(config.algo, GW, WtA, H_loc)
            except Exception as exc:
                raise _kernel_error(exc, "H", it, rank) from exc

            errors.append(_diagnostic_error(comm, norm_a_sq, GW, H_loc, WtA, k))
            if config.tolerance is not None and errors[-2] - errors[-1] < config.tolerance:
                break

        trace = IterationTrace(rel_errors=errors, seconds=timer.seconds)
        return W_loc, H_loc, trace, comm.counters.snapshot()

    per_rank = run_spmd(p, rank_fn)
    return DistRunResult(
        w_blocks=[r[0] for r in per_rank],
        h_blocks=[r[1] for r in per_rank],
        trace=per_rank[0][2],
        counters=[r[3] for r in per_rank],
    )
