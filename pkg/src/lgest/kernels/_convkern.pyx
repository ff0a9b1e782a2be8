# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled patch gather/scatter kernels.

Must stay bit-identical to lgest.kernels.fallback: same layout, and col2im
accumulates in the same (i, j) order per target cell.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def im2col(object xp_obj, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t ho, Py_ssize_t wo):
    cdef double[:, :, :, ::1] xp = np.ascontiguousarray(xp_obj, dtype=np.float64)
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    out_arr = np.empty((n, c * k * k, ho * wo), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, y, x, row, ybase
    for b in range(n):
        for ch in range(c):
            for i in range(k):
                for j in range(k):
                    row = (ch * k + i) * k + j
                    for y in range(ho):
                        ybase = y * wo
                        for x in range(wo):
                            out[b, row, ybase + x] = xp[b, ch, y * stride + i, x * stride + j]
    return out_arr


def col2im(object cols_obj, Py_ssize_t c, Py_ssize_t hp, Py_ssize_t wp,
           Py_ssize_t k, Py_ssize_t stride, Py_ssize_t ho, Py_ssize_t wo):
    cdef double[:, :, ::1] cols = np.ascontiguousarray(cols_obj, dtype=np.float64)
    cdef Py_ssize_t n = cols.shape[0]
    out_arr = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, y, x, row, ybase
    # (i, j) loops outermost: accumulation order per output cell matches the
    # numpy fallback, keeping both backends bitwise interchangeable.
    for i in range(k):
        for j in range(k):
            for b in range(n):
                for ch in range(c):
                    row = (ch * k + i) * k + j
                    for y in range(ho):
                        ybase = y * wo
                        for x in range(wo):
                            out[b, ch, y * stride + i, x * stride + j] += cols[b, row, ybase + x]
    return out_arr
