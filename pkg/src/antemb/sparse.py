"""Row-sparse and dense matrix primitives.

The transform matrix is stored row by row as sorted ``(column, value)``
pairs, which keeps single-entry insertion and deletion cheap and makes
row slicing (the operation the training loop lives on) an O(nnz(row))
gather.  Compressed formats such as CSR were deliberately avoided:
moving a nonzero there requires rebuilding the index arrays.

Dense matrices are plain float64 ``numpy`` arrays in row-major order;
``check_dense`` enforces the invariants (shape, finiteness) where a
contract boundary needs them.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "SparseRowMatrix",
    "check_dense",
    "nnz",
    "spmm",
    "lookup_rows",
]


def check_dense(a, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validate and return a 2-D float64 array with finite entries."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={a.ndim}")
    if rows is not None and a.shape[0] != rows:
        raise ValueError(f"expected {rows} rows, got {a.shape[0]}")
    if cols is not None and a.shape[1] != cols:
        raise ValueError(f"expected {cols} columns, got {a.shape[1]}")
    if not np.isfinite(a).all():
        raise ValueError("dense matrix contains NaN or Inf")
    return a


class SparseRowMatrix:
    """Sparse matrix stored as per-row sorted (column, value) entry lists.

    Invariants (enforced by all mutators):
      * column indices within a row are strictly increasing and < ``cols``
      * stored values are never zero
      * if ``nonneg`` is set, stored values are strictly positive

    ``allow_zero`` waives the nonzero-value invariant for matrices whose
    entries are softmax logits rather than linear weights (there a stored
    zero is meaningful relative to the row's other entries).
    """

    __slots__ = ("rows", "cols", "nonneg", "allow_zero", "_col", "_val")

    def __init__(self, rows: int, cols: int, nonneg: bool = False, allow_zero: bool = False):
        if rows < 0 or cols < 0:
            raise ValueError("rows/cols must be non-negative")
        self.rows = int(rows)
        self.cols = int(cols)
        self.nonneg = bool(nonneg)
        self.allow_zero = bool(allow_zero)
        self._col: list[np.ndarray] = [_EMPTY_COLS] * self.rows
        self._val: list[np.ndarray] = [_EMPTY_VALS] * self.rows

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------

    @classmethod
    def from_entries(
        cls,
        rows: int,
        cols: int,
        entries: Iterable[tuple[int, int, float]],
        nonneg: bool = False,
        allow_zero: bool = False,
    ) -> "SparseRowMatrix":
        """Build from an iterable of (row, col, value) triples."""
        by_row: dict[int, list[tuple[int, float]]] = {}
        for r, c, v in entries:
            by_row.setdefault(int(r), []).append((int(c), float(v)))
        out = cls(rows, cols, nonneg=nonneg, allow_zero=allow_zero)
        for r, items in by_row.items():
            items.sort(key=lambda cv: cv[0])
            out.set_row(
                r,
                np.array([c for c, _ in items], dtype=np.int64),
                np.array([v for _, v in items], dtype=np.float64),
            )
        return out

    @classmethod
    def from_dense(cls, a, nonneg: bool = False) -> "SparseRowMatrix":
        a = check_dense(a)
        out = cls(a.shape[0], a.shape[1], nonneg=nonneg)
        for i in range(a.shape[0]):
            (cols_i,) = np.nonzero(a[i])
            out.set_row(i, cols_i.astype(np.int64), a[i, cols_i])
        return out

    def copy(self) -> "SparseRowMatrix":
        out = SparseRowMatrix(self.rows, self.cols, nonneg=self.nonneg, allow_zero=self.allow_zero)
        out._col = [c.copy() for c in self._col]
        out._val = [v.copy() for v in self._val]
        return out

    # ------------------------------------------------------------------
    # row access and mutation
    # ------------------------------------------------------------------

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (columns, values) of row ``i``. Treat as read-only."""
        self._check_row(i)
        return self._col[i], self._val[i]

    def set_row(self, i: int, cols: np.ndarray, vals: np.ndarray) -> None:
        """Replace row ``i``. ``cols`` must be strictly increasing."""
        self._check_row(i)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if cols.shape != vals.shape or cols.ndim != 1:
            raise ValueError("cols/vals must be 1-D arrays of equal length")
        if cols.size:
            if np.any(np.diff(cols) <= 0):
                raise ValueError("row columns must be strictly increasing")
            if cols[0] < 0 or cols[-1] >= self.cols:
                raise ValueError("column index out of range")
            if not self.allow_zero and np.any(vals == 0.0):
                raise ValueError("stored values must be nonzero")
            if self.nonneg and np.any(vals < 0.0):
                raise ValueError("matrix is non-negative; got a negative value")
        self._col[i] = cols
        self._val[i] = vals

    def clear_row(self, i: int) -> None:
        self._check_row(i)
        self._col[i] = _EMPTY_COLS
        self._val[i] = _EMPTY_VALS

    def get(self, i: int, j: int, default: float = 0.0) -> float:
        self._check_row(i)
        pos = np.searchsorted(self._col[i], j)
        if pos < self._col[i].size and self._col[i][pos] == j:
            return float(self._val[i][pos])
        return default

    def insert(self, i: int, j: int, value: float) -> None:
        """Insert or overwrite entry (i, j). Zero values are rejected."""
        self._check_row(i)
        if j < 0 or j >= self.cols:
            raise ValueError("column index out of range")
        value = float(value)
        if value == 0.0 and not self.allow_zero:
            raise ValueError("cannot store a zero value; use remove()")
        if self.nonneg and value < 0.0:
            raise ValueError("matrix is non-negative; got a negative value")
        cols, vals = self._col[i], self._val[i]
        pos = int(np.searchsorted(cols, j))
        if pos < cols.size and cols[pos] == j:
            vals = vals.copy()
            vals[pos] = value
            self._val[i] = vals
        else:
            self._col[i] = np.insert(cols, pos, j)
            self._val[i] = np.insert(vals, pos, value)

    def remove(self, i: int, j: int) -> None:
        """Delete entry (i, j); missing entries are a no-op."""
        self._check_row(i)
        cols = self._col[i]
        pos = int(np.searchsorted(cols, j))
        if pos < cols.size and cols[pos] == j:
            self._col[i] = np.delete(cols, pos)
            self._val[i] = np.delete(self._val[i], pos)

    # ------------------------------------------------------------------
    # column resizing (anchor growth and removal)
    # ------------------------------------------------------------------

    def append_columns(self, n: int) -> None:
        if n < 0:
            raise ValueError("n must be >= 0")
        self.cols += n

    def restore_column(self, entries: Sequence[tuple[int, float]]) -> None:
        """Append one column populated with ``(row, value)`` entries."""
        j = self.cols
        self.cols += 1
        for r, v in entries:
            # new column index is the largest, so entries append at the end
            self.insert(r, j, v)

    def pop_column(self) -> list[tuple[int, float]]:
        """Remove the last column, returning its entries as (row, value)."""
        if self.cols == 0:
            raise ValueError("no columns to remove")
        j = self.cols - 1
        removed: list[tuple[int, float]] = []
        for i in range(self.rows):
            cols = self._col[i]
            if cols.size and cols[-1] == j:
                removed.append((i, float(self._val[i][-1])))
                self._col[i] = cols[:-1]
                self._val[i] = self._val[i][:-1]
        self.cols = j
        return removed

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------

    def nnz(self) -> int:
        return sum(c.size for c in self._col)

    def row_nnz(self) -> np.ndarray:
        return np.array([c.size for c in self._col], dtype=np.int64)

    def zero_rows(self) -> int:
        return sum(1 for c in self._col if c.size == 0)

    def iter_entries(self) -> Iterable[tuple[int, int, float]]:
        """Yield (row, col, value) in (row, col) order."""
        for i in range(self.rows):
            cols, vals = self._col[i], self._val[i]
            for c, v in zip(cols.tolist(), vals.tolist()):
                yield i, c, v

    def packed_rows(self, indices) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Concatenate the requested rows for vectorised kernels.

        Returns (lengths, cols, vals) where ``cols``/``vals`` are the
        row entries concatenated in request order.
        """
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= self.rows):
            raise IndexError("row index out of range")
        lengths = np.array([self._col[i].size for i in indices], dtype=np.int64)
        if lengths.sum() == 0:
            return lengths, _EMPTY_COLS, _EMPTY_VALS
        cols = np.concatenate([self._col[i] for i in indices])
        vals = np.concatenate([self._val[i] for i in indices])
        return lengths, cols, vals

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        for i in range(self.rows):
            out[i, self._col[i]] = self._val[i]
        return out

    def validate(self) -> None:
        """Re-check the storage invariants; raises on violation."""
        for i in range(self.rows):
            cols, vals = self._col[i], self._val[i]
            if cols.shape != vals.shape:
                raise AssertionError(f"row {i}: ragged storage")
            if cols.size == 0:
                continue
            if np.any(np.diff(cols) <= 0):
                raise AssertionError(f"row {i}: columns not strictly increasing")
            if cols[0] < 0 or cols[-1] >= self.cols:
                raise AssertionError(f"row {i}: column out of range")
            if not self.allow_zero and np.any(vals == 0.0):
                raise AssertionError(f"row {i}: stored zero")
            if self.nonneg and np.any(vals < 0.0):
                raise AssertionError(f"row {i}: negative value in nonneg matrix")

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseRowMatrix):
            return NotImplemented
        if (self.rows, self.cols) != (other.rows, other.cols):
            return False
        return all(
            np.array_equal(self._col[i], other._col[i])
            and np.array_equal(self._val[i], other._val[i])
            for i in range(self.rows)
        )

    def __hash__(self):  # mutable container
        raise TypeError("SparseRowMatrix is unhashable")

    def __repr__(self) -> str:
        return (
            f"SparseRowMatrix(rows={self.rows}, cols={self.cols}, "
            f"nnz={self.nnz()}, nonneg={self.nonneg})"
        )

    def _check_row(self, i: int) -> None:
        if not 0 <= i < self.rows:
            raise IndexError(f"row {i} out of range [0, {self.rows})")


_EMPTY_COLS = np.empty(0, dtype=np.int64)
_EMPTY_VALS = np.empty(0, dtype=np.float64)
_EMPTY_COLS.setflags(write=False)
_EMPTY_VALS.setflags(write=False)


def nnz(t: SparseRowMatrix) -> int:
    """Total number of stored entries across all rows."""
    return t.nnz()


def _combine_row(t: SparseRowMatrix, i: int, a: np.ndarray, out: np.ndarray) -> None:
    # Shared kernel so materialisation and lookup sum in the same
    # (ascending column) order and agree bitwise.
    cols, vals = t.row(i)
    if cols.size:
        out[:] = vals @ a[cols]
    else:
        out[:] = 0.0


def spmm(t: SparseRowMatrix, a) -> np.ndarray:
    """Materialise the product ``t @ a`` as a dense matrix.

    Intended for verification and export; training paths should slice
    rows instead of materialising the full product.
    """
    a = check_dense(a)
    if t.cols != a.shape[0]:
        raise ValueError(
            f"dimension mismatch: sparse has {t.cols} columns, dense has {a.shape[0]} rows"
        )
    out = np.zeros((t.rows, a.shape[1]))
    for i in range(t.rows):
        _combine_row(t, i, a, out[i])
    return out


def lookup_rows(indices, t: SparseRowMatrix, a) -> np.ndarray:
    """Rows of the product ``t @ a`` without materialising it.

    ``out[j] == spmm(t, a)[indices[j]]`` bitwise: both paths use the same
    per-row kernel with a fixed (ascending column) summation order.
    """
    a = check_dense(a)
    if t.cols != a.shape[0]:
        raise ValueError(
            f"dimension mismatch: sparse has {t.cols} columns, dense has {a.shape[0]} rows"
        )
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 1:
        raise ValueError("indices must be 1-D")
    if indices.size and (indices.min() < 0 or indices.max() >= t.rows):
        raise IndexError("row index out of range")
    out = np.zeros((indices.size, a.shape[1]))
    for j, i in enumerate(indices):
        _combine_row(t, int(i), a, out[j])
    return out


def batch_embed(indices, t: SparseRowMatrix, a: np.ndarray) -> np.ndarray:
    """Vectorised variant of :func:`lookup_rows` for hot training paths.

    Sums each row's contributions in ascending column order via a single
    segment reduction; agrees with ``lookup_rows`` to float64 rounding.
    """
    indices = np.asarray(indices, dtype=np.int64)
    lengths, cols, vals = t.packed_rows(indices)
    out = np.zeros((indices.size, a.shape[1]))
    if cols.size:
        seg = np.repeat(np.arange(indices.size), lengths)
        np.add.at(out, seg, vals[:, None] * a[cols])
    return out
