"""Canonical CSR matrices and the sparse kernels built on them.

Two interchangeable kernel backends exist: a compiled Cython extension
(``sehgnn._kernels``) and a pure-Python/numpy fallback
(``sehgnn._kernels_py``). They produce bitwise-identical results; the
compiled one is picked at import time when available. Override with the
environment variable ``SEHGNN_KERNELS=python|cython`` or the
:func:`use_backend` context manager.

Determinism contract: every kernel accumulates each output row's
contributions in ascending column-index order, so results are reproducible
across runs, thread counts and backends.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

from . import _kernels_py

_BACKENDS = {"python": _kernels_py}
try:
    from . import _kernels as _kernels_c

    _BACKENDS["cython"] = _kernels_c
except ImportError:
    _kernels_c = None

_forced = os.environ.get("SEHGNN_KERNELS")
if _forced:
    if _forced not in _BACKENDS:
        raise ImportError(
            f"SEHGNN_KERNELS={_forced!r} requested but that backend is unavailable "
            f"(have: {sorted(_BACKENDS)})"
        )
    _active = _forced
else:
    _active = "cython" if "cython" in _BACKENDS else "python"


def active_backend() -> str:
    """Name of the kernel backend currently in use."""
    return _active


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


@contextlib.contextmanager
def use_backend(name: str):
    """Temporarily switch kernel backends (tests, benchmarks)."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r} (have: {sorted(_BACKENDS)})")
    prev = _active
    _active = name
    try:
        yield
    finally:
        _active = prev


def _impl():
    return _BACKENDS[_active]


class SparseMatrix:
    """Immutable CSR matrix in canonical form.

    Canonical means: ``row_offsets`` non-decreasing with length n_rows+1,
    column indices strictly increasing within each row (no duplicates), and
    all values finite. The backing arrays are frozen after construction so
    instances are safe to share across threads.
    """

    __slots__ = ("n_rows", "n_cols", "row_offsets", "col_indices", "values")

    def __init__(self, n_rows, n_cols, row_offsets, col_indices, values, validate=True):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.row_offsets = np.ascontiguousarray(row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(col_indices, dtype=np.int64)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        if validate:
            self._check_canonical()
        for arr in (self.row_offsets, self.col_indices, self.values):
            arr.flags.writeable = False

    def _check_canonical(self):
        off, cols, vals = self.row_offsets, self.col_indices, self.values
        if self.n_rows < 0 or self.n_cols < 0:
            raise ValueError("negative matrix dimension")
        if off.shape != (self.n_rows + 1,):
            raise ValueError("row_offsets must have length n_rows+1")
        if off[0] != 0 or off[-1] != cols.shape[0] or np.any(np.diff(off) < 0):
            raise ValueError("row_offsets must be non-decreasing from 0 to nnz")
        if cols.shape != vals.shape:
            raise ValueError("col_indices and values must have equal length")
        nnz = cols.shape[0]
        if nnz:
            if cols.min() < 0 or cols.max() >= self.n_cols:
                raise ValueError("column index out of range")
            if not np.all(np.isfinite(vals)):
                raise ValueError("values must be finite")
        if nnz > 1:
            inner = np.ones(nnz - 1, dtype=bool)
            bounds = off[1:-1]
            bounds = bounds[(bounds > 0) & (bounds < nnz)]
            inner[bounds - 1] = False  # pairs spanning a row boundary
            if not np.all(np.diff(cols)[inner] > 0):
                raise ValueError("column indices must be strictly increasing within rows")

    @property
    def nnz(self) -> int:
        return int(self.col_indices.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @classmethod
    def from_coo(cls, n_rows, n_cols, rows, cols, values=None, dedup=False) -> "SparseMatrix":
        """Build a canonical matrix from coordinate lists.

        With ``values=None`` entries are binary (1.0); ``dedup=True`` collapses
        repeated (row, col) pairs. Explicit values with duplicates are an error.
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.shape != cols.shape:
            raise ValueError("rows and cols must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= n_rows:
                raise ValueError("row index out of range")
            if cols.min() < 0 or cols.max() >= n_cols:
                raise ValueError("column index out of range")
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        if values is None:
            vals = np.ones(rows.shape[0], dtype=np.float64)
        else:
            vals = np.asarray(values, dtype=np.float64)[order]
        if rows.size:
            dup = np.zeros(rows.shape[0], dtype=bool)
            dup[1:] = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if dup.any():
                if not dedup or values is not None:
                    raise ValueError("duplicate (row, col) entries")
                rows, cols, vals = rows[~dup], cols[~dup], vals[~dup]
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=offsets[1:])
        return cls(n_rows, n_cols, offsets, cols, vals, validate=False)

    @classmethod
    def identity(cls, n) -> "SparseMatrix":
        idx = np.arange(n, dtype=np.int64)
        offsets = np.arange(n + 1, dtype=np.int64)
        return cls(n, n, offsets, idx, np.ones(n), validate=False)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols), dtype=np.float64)
        rows = self._expand_rows()
        out[rows, self.col_indices] = self.values
        return out

    def _expand_rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self.row_offsets))

    def transpose(self) -> "SparseMatrix":
        rows = self._expand_rows()
        order = np.lexsort((rows, self.col_indices))
        offsets = np.zeros(self.n_cols + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.col_indices, minlength=self.n_cols), out=offsets[1:])
        return SparseMatrix(
            self.n_cols, self.n_rows, offsets, rows[order], self.values[order], validate=False
        )

    def row(self, i) -> tuple[np.ndarray, np.ndarray]:
        """(column indices, values) of row i."""
        s, e = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[s:e], self.values[s:e]

    def __repr__(self):
        return f"SparseMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz})"


def row_normalize(a: SparseMatrix) -> SparseMatrix:
    """Scale each row to sum to 1; rows summing to zero are left as-is.

    The sparsity pattern is unchanged.
    """
    vals = _impl().row_normalize_values(a.row_offsets, a.values)
    return SparseMatrix(a.n_rows, a.n_cols, a.row_offsets, a.col_indices, vals, validate=False)


def spmm(a: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """Sparse-dense product a @ x with fixed per-row accumulation order."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or a.n_cols != x.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {x.shape}")
    out = np.zeros((a.n_rows, x.shape[1]), dtype=np.float64)
    _impl().spmm(a.row_offsets, a.col_indices, a.values, x, out)
    return out


def sparse_matmul(a: SparseMatrix, b: SparseMatrix) -> SparseMatrix:
    """Sparse-sparse product a @ b in canonical form."""
    if a.n_cols != b.n_rows:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    off, cols, vals = _impl().spgemm(
        a.row_offsets, a.col_indices, a.values,
        b.row_offsets, b.col_indices, b.values,
        a.n_rows, b.n_cols,
    )
    # kernels emit columns in first-visit order; sort each row's entries
    rows = np.repeat(np.arange(a.n_rows, dtype=np.int64), np.diff(off))
    order = np.lexsort((cols, rows))
    return SparseMatrix(a.n_rows, b.n_cols, off, cols[order], vals[order], validate=False)


def rm_diag(a: SparseMatrix) -> SparseMatrix:
    """Drop all (i, i) entries from the pattern; everything else untouched."""
    if a.n_rows != a.n_cols:
        raise ValueError(f"rm_diag requires a square matrix, got {a.shape}")
    rows = a._expand_rows()
    keep = rows != a.col_indices
    offsets = np.zeros(a.n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows[keep], minlength=a.n_rows), out=offsets[1:])
    return SparseMatrix(
        a.n_rows, a.n_cols, offsets, a.col_indices[keep], a.values[keep], validate=False
    )


def merge_binary(mats: list[SparseMatrix]) -> SparseMatrix:
    """Binary union of same-shaped matrices (duplicate positions collapse to 1)."""
    first = mats[0]
    if len(mats) == 1:
        return first
    if any(m.shape != first.shape for m in mats):
        raise ValueError("merge_binary requires matching shapes")
    rows = np.concatenate([m._expand_rows() for m in mats])
    cols = np.concatenate([m.col_indices for m in mats])
    return SparseMatrix.from_coo(first.n_rows, first.n_cols, rows, cols, dedup=True)
