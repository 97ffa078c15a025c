"""Local update kernels: multiplicative updates, HALS, block principal pivoting.

Each kernel sees only the two quantities the alternating iteration provides —
the k x k Gram matrix of the fixed factor and the k-wide cross product with the
data matrix — so the same code serves the sequential driver and every rank of
the distributed ones.  Updating W uses (HH^T, AH^T) with rows of W as the
unknowns; updating H uses (W^T W, W^T A) with columns of H as the unknowns.
Kernels are pure: they never mutate their inputs.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.linalg import cho_factor, cho_solve

# Floor applied to the multiplicative-update denominator.  Keeps the ratio
# finite without shifting fixed points materially, and maps 0/0 to 0.
MU_DENOM_FLOOR = 1e-16

# Column squared sums below this are treated as identically zero during
# normalization (the column is left untouched and flagged for reset).
ZERO_COLUMN_SUMSQ = 1e-24

# Pivoting tolerances for block principal pivoting.  _KKT_RTOL scales the
# acceptance test callers apply to kkt_residual; _PIVOT_RTOL (tighter) drives
# the internal exchange decisions so accepted solutions clear the KKT test
# with margin; _SINGULAR_PIVOT_RTOL detects a numerically singular passive
# submatrix; _SPD_GATE_RTOL is the admission test on the Gram matrix itself.
KKT_RTOL = 1e-10
_PIVOT_RTOL = 1e-12
_SINGULAR_PIVOT_RTOL = 1e-13
_SPD_GATE_RTOL = 1e-10


class DegenerateGramError(ValueError):
    """A zero Gram diagonal met a nonzero target column: the closed-form
    column update is undefined and the caller must reset the column."""

    def __init__(self, column: int):
        self.column = column
        super().__init__(
            f"gram diagonal {column} is zero but the corresponding rhs column "
            "is nonzero; reset the degenerate column before updating"
        )


class DegenerateColumnWarning(UserWarning):
    """A subproblem column was returned as all-zero because its passive-set
    normal equations were numerically singular."""


class NoConvergenceError(RuntimeError):
    """Principal pivoting hit its sweep cap.

    Attributes:
        best_x: the iterate with the fewest KKT violations seen, per column.
        columns: indices of the columns that failed to converge.
    """

    def __init__(self, columns, best_x):
        self.columns = list(columns)
        self.best_x = best_x
        super().__init__(
            f"block principal pivoting did not converge for columns {self.columns}"
        )


def _as_gram(G, k_expected=None) -> np.ndarray:
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError(f"gram must be square, got shape {G.shape}")
    if k_expected is not None and G.shape[0] != k_expected:
        raise ValueError(f"gram is {G.shape[0]}x{G.shape[0]}, expected k={k_expected}")
    # Pin the layout: BLAS rounding depends on operand order, and the kernels
    # must give bit-identical answers no matter how the caller built the gram.
    return np.asfortranarray(G)


def update_mu(gram: np.ndarray, rhs: np.ndarray, current: np.ndarray) -> np.ndarray:
    """One multiplicative-update half-step.

    out = current * rhs / max(current @ gram, MU_DENOM_FLOOR), elementwise.
    ``current`` and ``rhs`` are r x k (rows of the factor being updated);
    ``current`` must be nonnegative.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    current = np.asarray(current, dtype=np.float64)
    if rhs.shape != current.shape:
        raise ValueError(f"rhs {rhs.shape} and current {current.shape} disagree")
    G = _as_gram(gram, current.shape[1])
    if current.size and current.min() < 0:
        raise ValueError("current factor block has negative entries")
    den = current @ G
    np.maximum(den, MU_DENOM_FLOOR, out=den)
    out = current * rhs
    out /= den
    np.maximum(out, 0.0, out=out)
    return np.asfortranarray(out)


def update_hals(gram: np.ndarray, rhs: np.ndarray, current: np.ndarray):
    """One HALS sweep: exact nonnegative minimization column by column.

    Columns are visited in order, each seeing the already-updated preceding
    ones:

        col_i <- [ col_i + (rhs(:,i) - current @ gram(:,i)) / gram(i,i) ]_+

    which is the exact minimizer of the objective over column i with the rest
    held fixed.  Returns (updated block, per-column squared sums); the caller
    reduces the squared sums globally before normalizing.

    A zero gram(i,i) with a nonzero rhs column raises DegenerateGramError;
    with a zero rhs column the output column is zero (and its squared sum 0
    flags it downstream).
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    X = np.array(current, dtype=np.float64, order="F", copy=True)
    if rhs.shape != X.shape:
        raise ValueError(f"rhs {rhs.shape} and current {X.shape} disagree")
    G = _as_gram(gram, X.shape[1])
    k = G.shape[0]
    col_sumsq = np.empty(k, dtype=np.float64)
    for i in range(k):
        d = G[i, i]
        if d <= 0.0:
            if np.any(rhs[:, i]):
                raise DegenerateGramError(i)
            X[:, i] = 0.0
            col_sumsq[i] = 0.0
            continue
        col = X[:, i] + (rhs[:, i] - X @ G[:, i]) / d
        np.maximum(col, 0.0, out=col)
        X[:, i] = col
        col_sumsq[i] = float(np.dot(col, col))
    return X, col_sumsq


def normalize_columns(block: np.ndarray, global_col_sumsq: np.ndarray):
    """Divide each column by sqrt of its (globally reduced) squared sum.

    Columns whose global squared sum is below ZERO_COLUMN_SUMSQ are left
    unchanged and flagged.  Returns (normalized copy, flags).
    """
    ss = np.asarray(global_col_sumsq, dtype=np.float64)
    if np.any(ss < 0):
        raise ValueError("column squared sums must be nonnegative")
    B = np.array(block, dtype=np.float64, order="F", copy=True)
    if B.shape[1] != ss.shape[0]:
        raise ValueError(f"{B.shape[1]} columns but {ss.shape[0]} squared sums")
    flags = ss < ZERO_COLUMN_SUMSQ
    live = ~flags
    if live.any():
        B[:, live] /= np.sqrt(ss[live])
    return B, flags


def _spd_gate(G: np.ndarray) -> None:
    tr = float(np.trace(G))
    scale = max(abs(tr), 1.0)
    if not np.allclose(G, G.T, rtol=0.0, atol=1e-12 * scale):
        raise ValueError("gram must be symmetric")
    if G.shape[0] == 0:
        return
    smallest = float(np.linalg.eigvalsh(G)[0])
    if smallest < -_SPD_GATE_RTOL * abs(tr):
        raise ValueError(
            f"gram is not positive semidefinite within tolerance "
            f"(lambda_min={smallest:.3e}, trace={tr:.3e})"
        )


def _solve_passive_groups(G, rhs, passive, cols, X):
    """Solve the passive-set normal equations for the given open columns.

    Columns sharing a passive mask share one Cholesky factorization.  Returns
    the list of columns whose passive submatrix was numerically singular.
    """
    degenerate: list[int] = []
    groups: dict[bytes, list[int]] = {}
    for j in cols:
        groups.setdefault(passive[:, j].tobytes(), []).append(j)
    for mask_bytes, members in groups.items():
        mask = np.frombuffer(mask_bytes, dtype=bool)
        idx = np.flatnonzero(mask)
        X[:, members] = 0.0
        if idx.size == 0:
            continue
        Gpp = G[np.ix_(idx, idx)]
        sub_trace = float(np.trace(Gpp))
        try:
            factor = cho_factor(Gpp, lower=True, check_finite=False)
            pivots = np.diagonal(factor[0]) ** 2
            if float(pivots.min()) < _SINGULAR_PIVOT_RTOL * max(sub_trace, np.finfo(float).tiny):
                raise np.linalg.LinAlgError("pivot below singularity threshold")
            sol = cho_solve(factor, rhs[np.ix_(idx, members)], check_finite=False)
        except np.linalg.LinAlgError:
            degenerate.extend(members)
            continue
        X[np.ix_(idx, members)] = sol
    return degenerate


def solve_bpp(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Nonnegative least squares by block principal pivoting, multi-column.

    Solves min_{x >= 0} ||C x - b||_2 per column given gram = C^T C and
    rhs = C^T b (k x c).  Starts all-active (x = 0), swaps every
    KKT-violating index between the active and passive sets, solves the
    passive-set normal equations, and repeats until the complementarity
    conditions hold.  A per-column backoff guards against cycling: after 3
    consecutive sweeps without improving the violation count, only the
    lowest violating index is exchanged; after 5k sweeps NoConvergenceError
    is raised carrying the best iterate.

    Columns whose passive submatrix turns numerically singular are returned
    as all-zero with a DegenerateColumnWarning.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.ndim == 1:
        rhs = rhs[:, None]
    if rhs.ndim != 2:
        raise ValueError("rhs must be a k x c matrix")
    G = _as_gram(gram, rhs.shape[0])
    if not np.all(np.isfinite(rhs)):
        raise ValueError("rhs must be finite")
    _spd_gate(G)

    k, c = rhs.shape
    tau = _PIVOT_RTOL * (1.0 + np.abs(rhs).max(axis=0))  # per-column pivot tol
    X = np.zeros((k, c), dtype=np.float64, order="F")
    Y = -rhs.copy(order="F")
    passive = np.zeros((k, c), dtype=bool, order="F")
    best_viol = np.full(c, k + 1, dtype=np.int64)
    stall = np.zeros(c, dtype=np.int64)
    single_mode = np.zeros(c, dtype=bool)
    best_X = np.zeros((k, c), dtype=np.float64, order="F")
    open_cols = np.ones(c, dtype=bool)
    warned_degenerate = []

    max_sweeps = 5 * k
    sweeps = 0
    while True:
        viol = ((X < -tau) & passive) | ((Y < -tau) & ~passive)
        viol[:, ~open_cols] = False
        vcount = viol.sum(axis=0)
        open_cols &= vcount > 0
        if not open_cols.any():
            break
        if sweeps >= max_sweeps:
            merged = X.copy()
            failed = np.flatnonzero(open_cols)
            merged[:, failed] = best_X[:, failed]
            raise NoConvergenceError(failed, np.maximum(merged, 0.0))
        sweeps += 1

        improved = open_cols & (vcount < best_viol)
        best_viol[improved] = vcount[improved]
        stall[improved] = 0
        single_mode[improved] = False
        best_X[:, improved] = X[:, improved]
        stalled = open_cols & ~improved
        stall[stalled] += 1
        single_mode[stalled] |= stall[stalled] >= 3

        flip = viol
        for j in np.flatnonzero(open_cols & single_mode):
            lowest = int(np.argmax(viol[:, j]))
            flip[:, j] = False
            flip[lowest, j] = True
        passive[:, open_cols] ^= flip[:, open_cols]

        degenerate = _solve_passive_groups(G, rhs, passive, np.flatnonzero(open_cols), X)
        if degenerate:
            for j in degenerate:
                X[:, j] = 0.0
                open_cols[j] = False
            warned_degenerate.extend(degenerate)
        Y = G @ X - rhs

    if warned_degenerate:
        warnings.warn(
            f"passive-set normal equations singular; columns {sorted(warned_degenerate)} "
            "returned as zero",
            DegenerateColumnWarning,
            stacklevel=2,
        )
    np.maximum(X, 0.0, out=X)
    return X


def kkt_residual(gram: np.ndarray, rhs: np.ndarray, X: np.ndarray) -> float:
    """max over entries of (-min(x,0), -min(y,0), |x*y|) with y = gram@X - rhs."""
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.ndim == 1:
        rhs = rhs[:, None]
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape != rhs.shape:
        raise ValueError(f"X {X.shape} and rhs {rhs.shape} disagree")
    G = _as_gram(gram, rhs.shape[0])
    Y = G @ X - rhs
    neg_x = max(0.0, float(-X.min())) if X.size else 0.0
    neg_y = max(0.0, float(-Y.min())) if Y.size else 0.0
    comp = float(np.abs(X * Y).max()) if X.size else 0.0
    return max(neg_x, neg_y, comp)
