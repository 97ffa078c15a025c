"""Closed-form cost model: collective costs, per-iteration totals, grid search.

Everything here is exact arithmetic on problem parameters — no measurement.
The collective formulas are the standard ones for bandwidth-optimal
algorithms on p processors (costs vanish at p = 1):

    all-gather / reduce-scatter of n total words:  (p-1)/p * n words,  ceil(log2 p) messages
    all-reduce of n words:                       2*(p-1)/p * n words, 2*ceil(log2 p) messages

The communicator's counters charge each rank with these same per-participant
figures, which is what makes the model-vs-measurement equality tests exact:
both sides call `collective_cost` with identical arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

COLLECTIVE_KINDS = ("allgather", "reducescatter", "allreduce")

# The batched HALS normalization all-reduce costs 2*ceil(log2 p) messages; an
# unbatched per-column variant would cost k*ceil(log2 p).  Reports carry this
# note so the two latency figures are never conflated.
HALS_LATENCY_NOTE = (
    "hals normalization is one batched all-reduce of k column sums "
    "(2*ceil(log2 p) messages); an unbatched per-column variant would cost "
    "k*ceil(log2 p) messages"
)


def ceil_log2(p: int) -> int:
    """Exact ceil(log2 p) for p >= 1, with no floating-point log."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return (p - 1).bit_length()


def collective_cost(kind: str, n, p: int):
    """(words, messages) charged to each participant of one collective.

    n is the total payload: the gathered length for all-gather, the reduced
    length for reduce-scatter and all-reduce.
    """
    if kind not in COLLECTIVE_KINDS:
        raise ValueError(f"unknown collective kind {kind!r}")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if n < 0:
        raise ValueError(f"payload size must be >= 0, got {n}")
    if p == 1:
        return 0.0, 0
    if kind == "allreduce":
        return 2 * (p - 1) * n / p, 2 * ceil_log2(p)
    return (p - 1) * n / p, ceil_log2(p)


@dataclass(frozen=True)
class LucFlopModel:
    """Flop count F(rows, cols, k) of one local-update step beyond the shared
    matrix multiplications, for `rows` rows of W plus `cols` columns of H."""

    algo: str
    flops: Callable[[float, float, int], float]
    surrogate: bool = False


def _ratio_flops(rows, cols, k):
    return 2.0 * (rows + cols) * k * k


def _bpp_flops(rows, cols, k):
    # Worst-case surrogate: per sweep one Cholesky (k^3/3) plus a k^2
    # triangular-solve pair per column, capped at 5k sweeps, for each of the
    # two half-iterations.  BPP has no closed form; this is an upper bound.
    per_side = lambda c: 5.0 * k * (k**3 / 3.0 + k**2 * c)
    return per_side(rows) + per_side(cols)


def luc_flop_model(algo: str) -> LucFlopModel:
    if algo in ("mu", "hals"):
        return LucFlopModel(algo, _ratio_flops, surrogate=False)
    if algo == "bpp":
        return LucFlopModel(algo, _bpp_flops, surrogate=True)
    raise ValueError(f"no flop model for algo {algo!r}")


@dataclass
class CostReport:
    """Modeled per-iteration costs of one (implementation, algorithm) pair."""

    impl: str
    algo: str
    flops: float
    words: float
    messages: int
    memory_words: float
    breakdown: dict = field(default_factory=dict)  # kind -> {"words", "messages"}
    flops_surrogate: bool = False
    notes: tuple = ()

    def modeled_seconds(self, alpha: float, beta: float, gamma: float) -> float:
        return gamma * self.flops + beta * self.words + alpha * self.messages


def _exact_div(a: int, b: int):
    """a/b as an int when divisible (keeps word counts exact integers)."""
    return a // b if a % b == 0 else a / b


def per_iter_cost(impl: str, m: int, n: int, k: int, grid, luc_model: LucFlopModel) -> CostReport:
    """Modeled cost of one full iteration (both half-updates).

    impl is "naive" (1-D scheme, full-factor all-gathers) or "faun" (2-D
    grid scheme).  grid is (p_r, p_c); the naive scheme requires p_c-agnostic
    input but accepts any grid and uses p = p_r*p_c ranks.
    """
    if impl not in ("naive", "faun"):
        raise ValueError(f"impl must be 'naive' or 'faun', got {impl!r}")
    if m < 1 or n < 1 or k < 1:
        raise ValueError("dimensions must be >= 1")
    p_r, p_c = grid
    if p_r < 1 or p_c < 1:
        raise ValueError(f"invalid grid {grid}")
    p = p_r * p_c

    breakdown = {kind: {"words": 0.0, "messages": 0} for kind in COLLECTIVE_KINDS}

    def add(kind, size, group):
        w, msgs = collective_cost(kind, size, group)
        breakdown[kind]["words"] += w
        breakdown[kind]["messages"] += msgs

    if impl == "faun":
        # W half: all-reduce of HH^T contributions, all-gather of H_j down
        # grid columns, reduce-scatter of A_ij H_j^T across grid rows.
        add("allreduce", k * k, p)
        add("allgather", _exact_div(n * k, p_c), p_r)
        add("reducescatter", _exact_div(m * k, p_r), p_c)
        # H half: mirrored.
        add("allreduce", k * k, p)
        add("allgather", _exact_div(m * k, p_r), p_c)
        add("reducescatter", _exact_div(n * k, p_c), p_r)
        if luc_model.algo == "hals":
            add("allreduce", k, p)
        flops = 4 * m * n * k / p + (m + n) * k * k / p + luc_model.flops(m / p, n / p, k)
        memory = m * n / p + (m + n) * k / p + _exact_div(m * k, p_r) + _exact_div(n * k, p_c)
    else:
        # Naive 1-D: gather the full fixed factor each half; Gram matrices
        # are computed redundantly, so no other collective appears.  The
        # HALS column norms come from the gathered W at no extra cost.
        add("allgather", n * k, p)
        add("allgather", m * k, p)
        flops = 4 * m * n * k / p + (m + n) * k * k + luc_model.flops(m / p, n / p, k)
        memory = 2 * m * n / p + (m + n) * k / p + (m + n) * k

    words = sum(b["words"] for b in breakdown.values())
    messages = sum(b["messages"] for b in breakdown.values())
    notes = ()
    if luc_model.algo == "hals":
        notes = (HALS_LATENCY_NOTE,)
    return CostReport(
        impl=impl,
        algo=luc_model.algo,
        flops=float(flops),
        words=float(words),
        messages=int(messages),
        memory_words=float(memory),
        breakdown=breakdown,
        flops_surrogate=luc_model.surrogate,
        notes=notes,
    )


def bandwidth_lower_bound(m: int, n: int, k: int, p: int):
    """Communication lower bound, in words, for any parallel schedule.

    Valid when k is smaller than both matrix dimensions and k^2 < mn/p;
    returns None (not applicable) otherwise.  Labels are symmetric in m, n.
    """
    big, small = (m, n) if m >= n else (n, m)
    if k >= small:
        return None
    if k * k >= m * n / p:
        return None
    return float(min(math.sqrt(m * n * k * k / p), small * k))


def divisor_pairs(p: int):
    """All (p_r, p_c) with p_r*p_c = p, ascending in p_r."""
    return [(d, p // d) for d in range(1, p + 1) if p % d == 0]


def optimize_grid_exhaustive(m: int, n: int, k: int, p: int):
    """Grid minimizing modeled per-iteration words, by trying every divisor
    pair; ties break toward smaller p_r."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    model = luc_flop_model("mu")  # words are algo-independent up to the
    # hals normalization term, which is grid-independent; any model works.
    best_pair, best_words = None, None
    for pair in divisor_pairs(p):
        words = per_iter_cost("faun", m, n, k, pair, model).words
        if best_words is None or words < best_words:
            best_pair, best_words = pair, words
    return best_pair
