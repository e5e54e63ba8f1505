# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled CSR kernels.

Twin of ``sehgnn._kernels_py``: same signatures, same accumulation orders,
bitwise-identical results (the build disables FP contraction). Keep the two
files in sync.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def row_normalize_values(const cnp.int64_t[::1] offsets not None,
                         const cnp.float64_t[::1] values not None):
    """Divide each row's values by that row's sum (sequential, in index order)."""
    cdef Py_ssize_t n_rows = offsets.shape[0] - 1
    out_arr = np.empty(values.shape[0], dtype=np.float64)
    cdef cnp.float64_t[::1] out = out_arr
    cdef Py_ssize_t i, k
    cdef double s
    with nogil:
        for i in range(n_rows):
            s = 0.0
            for k in range(offsets[i], offsets[i + 1]):
                s += values[k]
            if s != 0.0:
                for k in range(offsets[i], offsets[i + 1]):
                    out[k] = values[k] / s
            else:
                for k in range(offsets[i], offsets[i + 1]):
                    out[k] = values[k]
    return out_arr


def spmm(const cnp.int64_t[::1] offsets not None,
         const cnp.int64_t[::1] cols not None,
         const cnp.float64_t[::1] vals not None,
         const cnp.float64_t[:, ::1] x not None,
         cnp.float64_t[:, ::1] out not None):
    """out += A @ x for CSR A; accumulates row entries in ascending index order."""
    cdef Py_ssize_t n_rows = out.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t i, k, j, c
    cdef double v
    with nogil:
        for i in range(n_rows):
            for k in range(offsets[i], offsets[i + 1]):
                v = vals[k]
                c = cols[k]
                for j in range(d):
                    out[i, j] += v * x[c, j]


def spgemm(const cnp.int64_t[::1] a_off not None,
           const cnp.int64_t[::1] a_cols not None,
           const cnp.float64_t[::1] a_vals not None,
           const cnp.int64_t[::1] b_off not None,
           const cnp.int64_t[::1] b_cols not None,
           const cnp.float64_t[::1] b_vals not None,
           Py_ssize_t n_rows, Py_ssize_t n_cols):
    """CSR product A @ B (Gustavson; dense accumulator with visit markers).

    Returns (offsets, cols, vals) with columns in first-visit order within
    each row; the caller sorts them into canonical form.
    """
    cdef cnp.int64_t[::1] marker = np.full(n_cols, -1, dtype=np.int64)
    c_off_arr = np.zeros(n_rows + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] c_off = c_off_arr
    cdef Py_ssize_t i, k, kk, r, j
    cdef cnp.int64_t nnz = 0

    # symbolic pass: count distinct output columns per row
    with nogil:
        for i in range(n_rows):
            for k in range(a_off[i], a_off[i + 1]):
                r = a_cols[k]
                for kk in range(b_off[r], b_off[r + 1]):
                    j = b_cols[kk]
                    if marker[j] != i:
                        marker[j] = i
                        nnz += 1
            c_off[i + 1] = nnz

    c_cols_arr = np.empty(nnz, dtype=np.int64)
    c_vals_arr = np.empty(nnz, dtype=np.float64)
    cdef cnp.int64_t[::1] c_cols = c_cols_arr
    cdef cnp.float64_t[::1] c_vals = c_vals_arr
    cdef cnp.float64_t[::1] acc = np.zeros(n_cols, dtype=np.float64)
    cdef Py_ssize_t head
    cdef double av

    # numeric pass: scatter-accumulate, emit in first-visit order
    with nogil:
        for i in range(n_cols):
            marker[i] = -1
        for i in range(n_rows):
            head = c_off[i]
            for k in range(a_off[i], a_off[i + 1]):
                r = a_cols[k]
                av = a_vals[k]
                for kk in range(b_off[r], b_off[r + 1]):
                    j = b_cols[kk]
                    if marker[j] != i:
                        marker[j] = i
                        acc[j] = 0.0
                        c_cols[head] = j
                        head += 1
                    acc[j] += av * b_vals[kk]
            for k in range(c_off[i], c_off[i + 1]):
                c_vals[k] = acc[c_cols[k]]
    return c_off_arr, c_cols_arr, c_vals_arr
