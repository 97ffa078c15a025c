"""Sequential alternating-updating NMF driver.

One iteration updates all of W, then all of H, each side consuming the fixed
factor's Gram matrix and cross product with A:

    HH^T, AH^T  ->  kernel update of W   (HALS: then normalize columns of W)
    W^T W, W^T A -> kernel update of H

The relative error ||A - WH||_F / ||A||_F is evaluated after the H update via
the trace identity ||A - WH||^2 = ||A||^2 - 2 tr((W^T A) H^T) + tr((W^T W)(HH^T)),
reusing quantities the iteration already produced.  This driver is also the
correctness oracle for the distributed runs, so everything it does is
deterministic given (A, config).
"""

from __future__ import annotations

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from aunmf import kernels, matrixops
from aunmf.rng import (
    STREAM_COLUMN_RESET,
    STREAM_H_INIT,
    STREAM_W_INIT,
    derive_key,
    iteration_key,
    uniform_block,
)

ALGORITHMS = ("mu", "hals", "bpp")

# The six wall-time categories every driver reports: three local computations
# and the three collectives (zero for the sequential driver).
TIME_CATEGORIES = ("mm", "luc", "gram", "allgather", "reducescatter", "allreduce")


@dataclass
class NmfConfig:
    k: int
    max_iters: int
    algo: str = "bpp"
    seed: int = 0
    tolerance: float | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.algo not in ALGORITHMS:
            raise ValueError(f"algo must be one of {ALGORITHMS}, got {self.algo!r}")


@dataclass
class IterationTrace:
    """Per-iteration relative errors and wall times.

    rel_errors[0] is the error of the initial factors; rel_errors[i] the error
    after full iteration i.  seconds maps each category to a per-iteration
    list (all zeros for categories a driver doesn't exercise).
    """

    rel_errors: list = field(default_factory=list)
    seconds: dict = field(default_factory=lambda: {c: [] for c in TIME_CATEGORIES})

    def totals(self) -> dict:
        return {cat: float(sum(vals)) for cat, vals in self.seconds.items()}


class PhaseTimer:
    """Accumulates wall time into the six per-iteration categories."""

    def __init__(self):
        self.seconds = {cat: [] for cat in TIME_CATEGORIES}

    def new_iteration(self):
        for vals in self.seconds.values():
            vals.append(0.0)

    @contextmanager
    def __call__(self, category: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[category][-1] += time.perf_counter() - t0


def w_block(seed: int, k: int, row0: int, rows: int, row_limit: int) -> np.ndarray:
    """Rows [row0, row0+rows) of the global initial W (m x k).

    Entries at global row >= row_limit are zero: they are padding, and must
    stay exactly zero so padded and unpadded runs agree.
    """
    B = uniform_block(derive_key(seed, STREAM_W_INIT), row0, rows, 0, k)
    cut = max(0, min(rows, row_limit - row0))
    B[cut:, :] = 0.0
    return B


def h_block(seed: int, k: int, col0: int, cols: int, col_limit: int) -> np.ndarray:
    """Columns [col0, col0+cols) of the global initial H (k x n)."""
    B = uniform_block(derive_key(seed, STREAM_H_INIT), 0, k, col0, cols)
    cut = max(0, min(cols, col_limit - col0))
    B[:, cut:] = 0.0
    return B


def reset_column_values(seed: int, iteration: int, col: int,
                        row0: int, rows: int, row_limit: int) -> np.ndarray:
    """Replacement values for a collapsed W column: machine-epsilon-scaled
    uniform positives, identical for any tiling of the rows."""
    key = iteration_key(derive_key(seed, STREAM_COLUMN_RESET), iteration)
    u = uniform_block(key, row0, rows, col, 1)[:, 0]
    vals = np.finfo(np.float64).eps * (1.0 - u)
    cut = max(0, min(rows, row_limit - row0))
    vals[cut:] = 0.0
    return vals


def init_factors(m: int, n: int, k: int, seed: int):
    """Initial (W, H): i.i.d. uniform [0,1) from the portable counter
    generator, deterministic in seed and independent of data layout."""
    if m < 1 or n < 1 or k < 1:
        raise ValueError("dimensions must be >= 1")
    return w_block(seed, k, 0, m, m), h_block(seed, k, 0, n, n)


def relative_error(norm_a_sq: float, gram_w: np.ndarray, gram_h: np.ndarray,
                   wta_ht_trace: float) -> float:
    """||A - WH||_F / ||A||_F via the trace identity.

    norm_a_sq is ||A||_F^2 (> 0); wta_ht_trace is tr((W^T A) H^T), which
    equals the elementwise sum of (W^T A) * H.  The residual square is
    clamped at zero to guard rounding.
    """
    if norm_a_sq <= 0:
        raise ValueError(f"norm_a_sq must be positive, got {norm_a_sq}")
    s = matrixops.inner(gram_w, gram_h)
    resid_sq = norm_a_sq - 2.0 * wta_ht_trace + s
    return math.sqrt(max(0.0, resid_sq)) / math.sqrt(norm_a_sq)


def _check_nonnegative(A) -> None:
    if matrixops.is_sparse(A):
        if A.nnz and A.data.min() < 0:
            raise ValueError("A must be nonnegative")
    elif np.asarray(A).size and np.asarray(A).min() < 0:
        raise ValueError("A must be nonnegative")


def update_w(algo, GH, AHt, W):
    """Kernel dispatch for the W half-step on an (optionally local) row block.

    For HALS, returns the pre-normalization block and its column squared
    sums; the caller reduces the sums, normalizes, and compensates H.
    """
    if algo == "mu":
        return kernels.update_mu(GH, AHt, W), None
    if algo == "hals":
        return kernels.update_hals(GH, AHt, W)
    X = kernels.solve_bpp(GH, np.ascontiguousarray(AHt.T))
    return np.asfortranarray(X.T), None


def update_h(algo, GW, WtA, H):
    """Kernel dispatch for the H half-step on an (optionally local) column
    block.  H is k x cols; returns the updated block, same shape."""
    if algo == "mu":
        return np.asfortranarray(kernels.update_mu(GW, np.ascontiguousarray(WtA.T), np.ascontiguousarray(H.T)).T)
    if algo == "hals":
        Hn, _ = kernels.update_hals(GW, np.ascontiguousarray(WtA.T), np.ascontiguousarray(H.T))
        return np.asfortranarray(Hn.T)
    return kernels.solve_bpp(GW, WtA)


def apply_hals_normalization(W, H, global_col_sumsq, seed, iteration, row0, row_limit):
    """Normalize W's columns by their global norms and scale H's rows to
    compensate, so the product WH is unchanged.  Columns that collapsed to
    exactly zero are reinitialized from the reset stream and their H rows
    zeroed, which leaves the product unchanged as well.  Near-zero columns
    are merely flagged by the normalization and skipped here: rescaling or
    resetting a tiny-but-live column would perturb the residual, breaking
    the nonincreasing-error guarantee.

    W may be a local row block (row0 gives its global offset); H is whatever
    column block the caller owns.  Returns (W, H).
    """
    W, flags = kernels.normalize_columns(W, global_col_sumsq)
    H = np.asfortranarray(H)
    if not flags.all():
        scale = np.sqrt(global_col_sumsq[~flags])
        H[~flags, :] *= scale[:, None]
    for col in np.flatnonzero(global_col_sumsq == 0.0):
        W[:, col] = reset_column_values(seed, iteration, int(col), row0, W.shape[0], row_limit)
        H[col, :] = 0.0
    return W, H


def aunmf_run(A, config: NmfConfig):
    """Run alternating-updating NMF on a single process.

    Returns (W, H, IterationTrace).  The trace's first error entry is for the
    initial factors; one more entry follows each completed iteration.  With
    ||A|| = 0 the error is reported as 0 throughout.
    """
    m, n = A.shape
    if config.k > min(m, n):
        raise ValueError(f"k={config.k} exceeds min(m, n)={min(m, n)}")
    _check_nonnegative(A)

    W, H = init_factors(m, n, config.k, config.seed)
    norm_a_sq = matrixops.frobenius_sq(A)
    timer = PhaseTimer()
    errors = []

    if norm_a_sq > 0:
        t = matrixops.inner(matrixops.mm_wt_a(W, A), H)
        errors.append(relative_error(norm_a_sq, matrixops.gram(W), matrixops.gram(H.T), t))
    else:
        errors.append(0.0)

    for it in range(config.max_iters):
        timer.new_iteration()

        with timer("gram"):
            GH = matrixops.gram(np.ascontiguousarray(H.T))
        with timer("mm"):
            AHt = matrixops.mm_a_ht(A, np.ascontiguousarray(H.T))
        with timer("luc"):
            try:
                W, col_sumsq = update_w(config.algo, GH, AHt, W)
                if config.algo == "hals":
                    W, H = apply_hals_normalization(W, H, col_sumsq, config.seed, it, 0, m)
            except kernels.NoConvergenceError as exc:
                raise RuntimeError(f"W update failed to converge at iteration {it}") from exc

        with timer("gram"):
            GW = matrixops.gram(W)
        with timer("mm"):
            WtA = matrixops.mm_wt_a(W, A)
        with timer("luc"):
            try:
                H = update_h(config.algo, GW, WtA, H)
            except kernels.NoConvergenceError as exc:
                raise RuntimeError(f"H update failed to converge at iteration {it}") from exc

        if norm_a_sq > 0:
            t = matrixops.inner(WtA, H)
            errors.append(relative_error(norm_a_sq, GW, matrixops.gram(np.ascontiguousarray(H.T)), t))
        else:
            errors.append(0.0)

        if config.tolerance is not None and errors[-2] - errors[-1] < config.tolerance:
            break

    trace = IterationTrace(rel_errors=errors, seconds=timer.seconds)
    return W, H, trace
