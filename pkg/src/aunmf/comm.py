"""In-process SPMD collectives with modeled-cost instrumentation.

Ranks are Python threads; the only cross-rank channel is a barrier-and-slot
rendezvous.  Every rank deposits its payload, waits, reads all slots, and
waits again (so nobody overwrites a slot a peer is still reading).  Every
reduction is computed by every rank itself in ascending rank order, which
makes collective results bitwise identical across ranks, scheduling orders,
and repeated runs — and makes reduce-scatter-then-all-gather agree with
all-reduce exactly, since both slice the same fixed-order sum.

Counters record the *modeled* cost of each collective — the per-participant
words and messages of the standard cost formulas, not backend bytes — so
instrumentation matches the closed-form model by construction.  Counters
belong to the rank: a rank's global and sub-grid communicators share one
counter set, giving per-processor (critical-path) totals.  Diagnostic
exchanges (error tracking) pass counted=False and are invisible to them.
"""

from __future__ import annotations

import threading

import numpy as np

from aunmf.costmodel import COLLECTIVE_KINDS, collective_cost

# A collective blocking longer than this means a peer rank died or the
# program is not SPMD-consistent; failing beats deadlocking.
BARRIER_TIMEOUT_S = 120.0


class ProtocolError(RuntimeError):
    """Ranks disagreed about a collective (lengths, grid, or a dead peer)."""


class CommCounters:
    """Per-rank tallies of collective calls and their modeled costs."""

    def __init__(self):
        self.calls = {kind: 0 for kind in COLLECTIVE_KINDS}
        self.words = {kind: 0.0 for kind in COLLECTIVE_KINDS}
        self.messages = {kind: 0 for kind in COLLECTIVE_KINDS}

    def record(self, kind: str, words: float, messages: int) -> None:
        self.calls[kind] += 1
        self.words[kind] += words
        self.messages[kind] += messages

    def total_words(self) -> float:
        return sum(self.words.values())

    def total_messages(self) -> int:
        return sum(self.messages.values())

    def snapshot(self) -> dict:
        return {
            "calls": dict(self.calls),
            "words": dict(self.words),
            "messages": dict(self.messages),
        }


def counters_delta(after: dict, before: dict) -> dict:
    """Per-kind difference of two counter snapshots."""
    return {
        section: {k: after[section][k] - before[section][k] for k in after[section]}
        for section in after
    }


class _Group:
    """Rendezvous state shared by the ranks of one communicator."""

    def __init__(self, size: int):
        self.size = size
        self.barrier = threading.Barrier(size)
        self.slots = [None] * size

    def exchange(self, rank: int, payload):
        self.slots[rank] = payload
        try:
            self.barrier.wait(timeout=BARRIER_TIMEOUT_S)
            data = list(self.slots)
            self.barrier.wait(timeout=BARRIER_TIMEOUT_S)
        except threading.BrokenBarrierError:
            raise ProtocolError("a peer rank failed or left the collective") from None
        return data


class World:
    """Factory and registry for the rendezvous groups of one SPMD program."""

    def __init__(self, size: int):
        if size < 1:
            raise ValueError(f"world size must be >= 1, got {size}")
        self.size = size
        self._groups: dict[tuple, _Group] = {}
        self._lock = threading.Lock()
        self.group(tuple(range(size)))

    def group(self, members: tuple) -> _Group:
        with self._lock:
            g = self._groups.get(members)
            if g is None:
                g = _Group(len(members))
                self._groups[members] = g
            return g

    def abort(self) -> None:
        """Break every barrier so blocked peers fail instead of hanging."""
        with self._lock:
            for g in self._groups.values():
                g.barrier.abort()


class Communicator:
    """One rank's handle on a group of ranks.

    scope is "global", "gridRow", or "gridColumn"; sub-communicators from
    split_grid share the parent rank's counters.
    """

    def __init__(self, world: World, members: tuple, rank: int,
                 counters: CommCounters, scope: str = "global"):
        self.world = world
        self.members = members
        self.size = len(members)
        self.rank = rank
        self.counters = counters
        self.scope = scope
        self._group = world.group(members)

    def _exchange(self, local) -> list:
        # Deposit a private copy: peers read slots after leaving the
        # rendezvous, so a view into a caller array the caller later mutates
        # in place would be a data race.
        arr = np.array(local, dtype=np.float64, copy=True).ravel()
        parts = self._group.exchange(self.rank, arr)
        if len({part.size for part in parts}) > 1:
            raise ProtocolError(
                f"{self.scope} collective saw mismatched lengths "
                f"{[part.size for part in parts]}"
            )
        return parts

    def _reduce(self, parts: list) -> np.ndarray:
        acc = parts[0].copy()
        for part in parts[1:]:
            acc += part
        return acc

    def all_gather(self, local, counted: bool = True) -> np.ndarray:
        """Concatenation of every rank's vector, in rank order."""
        parts = self._exchange(local)
        out = np.concatenate(parts)
        if counted:
            self.counters.record("allgather", *collective_cost("allgather", out.size, self.size))
        return out

    def reduce_scatter(self, local, counted: bool = True) -> np.ndarray:
        """This rank's chunk of the elementwise sum over all ranks."""
        parts = self._exchange(local)
        n = parts[0].size
        if n % self.size:
            raise ProtocolError(f"length {n} not divisible by communicator size {self.size}")
        acc = self._reduce(parts)
        chunk = n // self.size
        out = acc[self.rank * chunk:(self.rank + 1) * chunk].copy()
        if counted:
            self.counters.record("reducescatter", *collective_cost("reducescatter", n, self.size))
        return out

    def all_reduce(self, local, counted: bool = True) -> np.ndarray:
        """Elementwise sum over all ranks, same result on every rank."""
        parts = self._exchange(local)
        out = self._reduce(parts)
        if counted:
            self.counters.record("allreduce", *collective_cost("allreduce", out.size, self.size))
        return out

    def split_grid(self, p_r: int, p_c: int):
        """(rowComm, colComm) for this rank on a p_r x p_c grid.

        Rank r sits at grid position (r // p_c, r % p_c); the row
        communicator spans its p_c row peers, the column communicator its
        p_r column peers, both ordered by grid index.
        """
        if p_r * p_c != self.size or self.scope != "global":
            raise ProtocolError(
                f"cannot split a size-{self.size} {self.scope} communicator into {p_r}x{p_c}"
            )
        i, j = divmod(self.rank, p_c)
        row_members = tuple(self.members[i * p_c + jj] for jj in range(p_c))
        col_members = tuple(self.members[ii * p_c + j] for ii in range(p_r))
        row = Communicator(self.world, row_members, j, self.counters, "gridRow")
        col = Communicator(self.world, col_members, i, self.counters, "gridColumn")
        return row, col


def run_spmd(size: int, fn):
    """Run fn(comm) on `size` in-process ranks and return [result per rank].

    Each rank gets a global Communicator with its own counters.  If any rank
    raises, all barriers are broken and the lowest-rank original exception is
    re-raised in the caller.
    """
    world = World(size)
    members = tuple(range(size))
    results = [None] * size
    failures = [None] * size

    def body(rank: int):
        comm = Communicator(world, members, rank, CommCounters(), "global")
        try:
            results[rank] = fn(comm)
        except BaseException as exc:  # noqa: BLE001 - re-raised below
            failures[rank] = exc
            world.abort()

    if size == 1:
        body(0)
    else:
        threads = [
            threading.Thread(target=body, args=(rank,), name=f"spmd-rank-{rank}")
            for rank in range(size)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

    primary = next(
        (exc for exc in failures if exc is not None and not isinstance(exc, ProtocolError)),
        None,
    )
    if primary is None:
        primary = next((exc for exc in failures if exc is not None), None)
    if primary is not None:
        raise primary
    return results
