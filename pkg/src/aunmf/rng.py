"""Counter-based portable random numbers.

Factor initialization has to be reproducible across platforms *and* across
data layouts: a rank that owns rows 300..599 of W must produce exactly the
entries a sequential run produces for those rows.  Stateful generators can't
do that without serializing a stream, so every random entry here is a pure
function of (seed, stream, row, column):

    key        = mix64(seed XOR (stream * GOLDEN))
    counter    = (row << 32) | column
    entry(r,c) = (mix64(key XOR counter) >> 11) * 2**-53        in [0, 1)

where ``mix64`` is the SplitMix64 finalizer (Steele, Lea & Flood's constants).
The top 53 bits of the mixed word become the float64 mantissa, so the result
is exactly representable and identical on any IEEE-754 platform.

Row and column indices must fit in 32 bits each; matrices here are far
smaller.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB

# Stream tags. Distinct tags give statistically independent planes of the
# same seed; the numbering is part of the reproducibility contract.
STREAM_W_INIT = 1
STREAM_H_INIT = 2
STREAM_LOWRANK_LEFT = 3
STREAM_LOWRANK_RIGHT = 4
STREAM_SPARSE_PATTERN = 5
STREAM_SPARSE_VALUE = 6
STREAM_COLUMN_RESET = 7

_U64 = np.uint64


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python integer (mod 2**64)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_key(seed: int, stream: int) -> int:
    """Key for one (seed, stream) plane of the generator."""
    return mix64((seed & _MASK64) ^ ((stream * _GOLDEN) & _MASK64))


def iteration_key(key: int, iteration: int) -> int:
    """Sub-key for per-iteration draws (e.g. degenerate-column resets)."""
    return mix64(key ^ (((iteration + 1) * _GOLDEN) & _MASK64))


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> _U64(30))
    z = z * _U64(_MIX_A)
    z = z ^ (z >> _U64(27))
    z = z * _U64(_MIX_B)
    return z ^ (z >> _U64(31))


def uniform_block(key: int, row0: int, rows: int, col0: int, cols: int) -> np.ndarray:
    """Entries (row0..row0+rows) x (col0..col0+cols) of the infinite matrix.

    Returns a Fortran-ordered float64 array with values in [0, 1).  Because
    indexing is global, any tiling of a matrix across ranks reproduces the
    sequential initialization exactly.
    """
    if rows < 0 or cols < 0:
        raise ValueError("block extents must be nonnegative")
    if row0 + rows > 1 << 32 or col0 + cols > 1 << 32:
        raise ValueError("row/column indices must fit in 32 bits")
    r = np.arange(row0, row0 + rows, dtype=np.uint64) << _U64(32)
    c = np.arange(col0, col0 + cols, dtype=np.uint64)
    counters = r[:, None] | c[None, :]
    mixed = _mix64_array(_U64(key) ^ counters)
    out = (mixed >> _U64(11)).astype(np.float64) * 2.0**-53
    return np.asfortranarray(out)


def uniform_entry(key: int, row: int, col: int) -> float:
    """Single entry of the same plane ``uniform_block`` tiles."""
    return (mix64(key ^ (((row & 0xFFFFFFFF) << 32) | (col & 0xFFFFFFFF))) >> 11) * 2.0**-53
