"""Matrix ingestion, synthetic problem generators, and factor output.

Matrix Market support is deliberately hand-rolled: parse failures must carry
line numbers, pattern entries become 1.0, coordinate duplicates are summed,
and writes round-trip at 17 significant digits.  Only the `general` symmetry
is supported.  Synthetic matrices come from the portable counter generator,
so they are byte-identical across platforms for a given seed.
"""

from __future__ import annotations

import os
import warnings

import numpy as np
import scipy.sparse as sp

from aunmf.rng import (
    STREAM_LOWRANK_LEFT,
    STREAM_LOWRANK_RIGHT,
    STREAM_SPARSE_PATTERN,
    STREAM_SPARSE_VALUE,
    derive_key,
    uniform_block,
)

# Column stripe width for sparse generation; bounds the dense probability
# planes to stripe-sized slabs without changing the entries drawn.
_SPARSE_STRIPE_COLS = 512


class MatrixMarketError(ValueError):
    """Malformed Matrix Market input; message pinpoints file and line."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class NonnegativityWarning(UserWarning):
    """The matrix read contains negative values (NMF expects nonnegative)."""


def _data_lines(path):
    """Yield (line_no, stripped_line) skipping comments and blanks, headers
    excluded; the caller consumes the first yielded line as the size line."""
    with open(path, "r", encoding="ascii") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if line_no == 1:
                continue  # header handled separately
            line = raw.strip()
            if not line or line.startswith("%"):
                continue
            yield line_no, line


def _parse_header(path):
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline()
    parts = header.strip().split()
    if len(parts) != 5 or parts[0] != "%%MatrixMarket" or parts[1].lower() != "matrix":
        raise MatrixMarketError(path, 1, "expected '%%MatrixMarket matrix <format> <field> <symmetry>'")
    fmt, field, symmetry = (p.lower() for p in parts[2:])
    if fmt not in ("coordinate", "array"):
        raise MatrixMarketError(path, 1, f"unsupported format {fmt!r}")
    if field not in ("real", "integer", "pattern"):
        raise MatrixMarketError(path, 1, f"unsupported field {field!r}")
    if symmetry != "general":
        raise MatrixMarketError(path, 1, f"unsupported symmetry {symmetry!r}")
    if fmt == "array" and field == "pattern":
        raise MatrixMarketError(path, 1, "array format cannot be pattern")
    return fmt, field


def read_matrix_market(path):
    """Read a Matrix Market file.

    Coordinate files become CSC sparse matrices (duplicate entries summed);
    array files become dense Fortran-ordered arrays.  1-based indices are
    converted to 0-based; pattern entries get value 1.0.  Negative values
    trigger a NonnegativityWarning.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such matrix file: {path}")
    fmt, field = _parse_header(path)
    lines = _data_lines(path)

    try:
        size_no, size_line = next(lines)
    except StopIteration:
        raise MatrixMarketError(path, 2, "missing size line") from None
    tokens = size_line.split()
    expected = 3 if fmt == "coordinate" else 2
    if len(tokens) != expected:
        raise MatrixMarketError(path, size_no, f"size line needs {expected} integers")
    try:
        dims = [int(t) for t in tokens]
    except ValueError:
        raise MatrixMarketError(path, size_no, f"bad size line {size_line!r}") from None
    if fmt == "coordinate":
        m, n, nnz = dims
    else:
        m, n = dims
        nnz = None
    if m < 1 or n < 1:
        raise MatrixMarketError(path, size_no, f"dimensions must be >= 1, got {m}x{n}")

    if fmt == "coordinate":
        rows, cols, vals = [], [], []
        want_value = field != "pattern"
        for line_no, line in lines:
            tok = line.split()
            if len(tok) != (3 if want_value else 2):
                raise MatrixMarketError(path, line_no, f"bad coordinate entry {line!r}")
            try:
                i, j = int(tok[0]), int(tok[1])
                v = float(tok[2]) if want_value else 1.0
            except ValueError:
                raise MatrixMarketError(path, line_no, f"bad coordinate entry {line!r}") from None
            if not (1 <= i <= m and 1 <= j <= n):
                raise MatrixMarketError(path, line_no, f"index ({i}, {j}) outside {m}x{n}")
            rows.append(i - 1)
            cols.append(j - 1)
            vals.append(v)
        if len(rows) != nnz:
            raise MatrixMarketError(path, size_no, f"expected {nnz} entries, found {len(rows)}")
        A = sp.coo_matrix(
            (np.asarray(vals, dtype=np.float64),
             (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
            shape=(m, n),
        ).tocsc()
        if A.nnz and A.data.min() < 0:
            warnings.warn(f"{path} contains negative values", NonnegativityWarning, stacklevel=2)
        return A

    values = []
    for line_no, line in lines:
        for tok in line.split():
            try:
                values.append(float(tok))
            except ValueError:
                raise MatrixMarketError(path, line_no, f"bad value {tok!r}") from None
        if len(values) > m * n:
            raise MatrixMarketError(path, line_no, f"more than {m * n} values")
    if len(values) != m * n:
        raise MatrixMarketError(path, size_no, f"expected {m * n} values, found {len(values)}")
    A = np.asarray(values, dtype=np.float64).reshape((m, n), order="F")
    if A.size and A.min() < 0:
        warnings.warn(f"{path} contains negative values", NonnegativityWarning, stacklevel=2)
    return np.asfortranarray(A)


def write_matrix_market(M, path) -> None:
    """Write dense (array format) or sparse (coordinate) at full precision."""
    with open(path, "w", encoding="ascii") as fh:
        if sp.issparse(M):
            C = M.tocoo()
            fh.write("%%MatrixMarket matrix coordinate real general\n")
            fh.write(f"{C.shape[0]} {C.shape[1]} {C.nnz}\n")
            for i, j, v in zip(C.row, C.col, C.data):
                fh.write(f"{i + 1} {j + 1} {v:.17g}\n")
        else:
            M = np.asarray(M)
            fh.write("%%MatrixMarket matrix array real general\n")
            fh.write(f"{M.shape[0]} {M.shape[1]}\n")
            for v in M.ravel(order="F"):
                fh.write(f"{v:.17g}\n")


def write_csv_matrix(M, path) -> None:
    """Dense matrix as `rows,cols` header plus column-major values."""
    M = np.asarray(M)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{M.shape[0]},{M.shape[1]}\n")
        for v in M.ravel(order="F"):
            fh.write(f"{v:.17g}\n")


def read_csv_matrix(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        if len(header) != 2:
            raise ValueError(f"{path}:1: expected 'rows,cols' header")
        m, n = int(header[0]), int(header[1])
        values = [float(line) for line in fh if line.strip()]
    if len(values) != m * n:
        raise ValueError(f"{path}: expected {m * n} values, found {len(values)}")
    return np.asarray(values, dtype=np.float64).reshape((m, n), order="F")


def write_factors(W, H, directory, fmt: str = "matrixmarket"):
    """Write the factor pair under `directory` (created if needed).

    Returns (w_path, h_path).  fmt is "matrixmarket" or "csv"; csv requires
    dense factors (always true here).
    """
    if fmt not in ("matrixmarket", "csv"):
        raise ValueError(f"format must be 'matrixmarket' or 'csv', got {fmt!r}")
    os.makedirs(directory, exist_ok=True)
    ext = "mtx" if fmt == "matrixmarket" else "csv"
    w_path = os.path.join(directory, f"W.{ext}")
    h_path = os.path.join(directory, f"H.{ext}")
    writer = write_matrix_market if fmt == "matrixmarket" else write_csv_matrix
    writer(W, w_path)
    writer(H, h_path)
    return w_path, h_path


def gen_dense_lowrank(m: int, n: int, r: int, seed: int) -> np.ndarray:
    """Product of m x r and r x n uniform-[0,1) matrices: a nonnegative
    matrix of rank r (almost surely) with entries in [0, r]."""
    if r < 1 or r > min(m, n):
        raise ValueError(f"rank r={r} must be in [1, min(m, n)={min(m, n)}]")
    L = uniform_block(derive_key(seed, STREAM_LOWRANK_LEFT), 0, m, 0, r)
    R = uniform_block(derive_key(seed, STREAM_LOWRANK_RIGHT), 0, r, 0, n)
    return np.asfortranarray(L @ R)


def gen_sparse_uniform(m: int, n: int, density: float, seed: int):
    """Erdos-Renyi sparsity: each entry present independently with the given
    probability, values uniform on (0, 1].  Returns CSC."""
    if not 0 < density <= 1:
        raise ValueError(f"density must be in (0, 1], got {density}")
    pat_key = derive_key(seed, STREAM_SPARSE_PATTERN)
    val_key = derive_key(seed, STREAM_SPARSE_VALUE)
    rows, cols, vals = [], [], []
    for c0 in range(0, n, _SPARSE_STRIPE_COLS):
        width = min(_SPARSE_STRIPE_COLS, n - c0)
        pat = uniform_block(pat_key, 0, m, c0, width)
        hit_r, hit_c = np.nonzero(pat < density)
        if hit_r.size == 0:
            continue
        stripe_vals = 1.0 - uniform_block(val_key, 0, m, c0, width)[hit_r, hit_c]
        rows.append(hit_r)
        cols.append(hit_c + c0)
        vals.append(stripe_vals)
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
    else:
        rows = np.empty(0, dtype=np.int64)
        cols = np.empty(0, dtype=np.int64)
        vals = np.empty(0, dtype=np.float64)
    return sp.coo_matrix((vals, (rows, cols)), shape=(m, n)).tocsc()


def pad_to_grid(M, p: int):
    """Zero-pad so p divides both dimensions; returns (padded, (m, n)).

    The original shape is what gather_factors later strips back to.  Already
    divisible input is returned as-is.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    m, n = M.shape
    pad_m = (-m) % p
    pad_n = (-n) % p
    if pad_m == 0 and pad_n == 0:
        return M, (m, n)
    if sp.issparse(M):
        padded = M.tocsc(copy=True)
        padded.resize((m + pad_m, n + pad_n))
    else:
        padded = np.zeros((m + pad_m, n + pad_n), dtype=np.float64, order="F")
        padded[:m, :n] = M
    return padded, (m, n)
