"""Pure-Python CSR kernels.

Fallback twin of the compiled module ``sehgnn._kernels``. Both backends use
the same accumulation orders (per output row: ascending position within the
row, i.e. ascending column index on canonical input) so their results are
bitwise identical. Keep the two files in sync.
"""

import numpy as np


def row_normalize_values(offsets, values):
    """Divide each row's values by that row's sum (sequential, in index order).

    Rows whose sum is exactly zero are left untouched.
    """
    out = values.copy()
    off = offsets.tolist()
    vals = values.tolist()
    for i in range(len(off) - 1):
        s = 0.0
        for k in range(off[i], off[i + 1]):
            s += vals[k]
        if s != 0.0:
            for k in range(off[i], off[i + 1]):
                out[k] = vals[k] / s
    return out


def spmm(offsets, cols, vals, x, out):
    """out += A @ x for CSR A; accumulates row entries in ascending index order."""
    off = offsets.tolist()
    for i in range(out.shape[0]):
        start, end = off[i], off[i + 1]
        if start == end:
            continue
        row = out[i]
        for k in range(start, end):
            row += vals[k] * x[cols[k]]


def spgemm(a_off, a_cols, a_vals, b_off, b_cols, b_vals, n_rows, n_cols):
    """CSR product A @ B.

    Returns (offsets, cols, vals) with columns in first-visit order within
    each row; the caller sorts them into canonical form. Accumulation order
    per output entry: ascending k over A's row, then B's row order.
    """
    ao = a_off.tolist()
    c_off = np.zeros(n_rows + 1, dtype=np.int64)
    cols_out: list[int] = []
    vals_out: list[float] = []
    for i in range(n_rows):
        acc: dict[int, float] = {}
        for k in range(ao[i], ao[i + 1]):
            r = a_cols[k]
            av = a_vals[k]
            bs, be = b_off[r], b_off[r + 1]
            if bs == be:
                continue
            prods = av * b_vals[bs:be]
            for j, p in zip(b_cols[bs:be].tolist(), prods.tolist()):
                acc[j] = acc.get(j, 0.0) + p
        c_off[i + 1] = c_off[i] + len(acc)
        cols_out.extend(acc.keys())
        vals_out.extend(acc.values())
    return (
        c_off,
        np.array(cols_out, dtype=np.int64),
        np.array(vals_out, dtype=np.float64),
    )
