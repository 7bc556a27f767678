# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im for the conv layers.

col2im accumulates into each element in the same order as the numpy
fallback, so both backends give bit-identical results.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, :, ::1] xp, int k, int stride, int ho, int wo):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    out = np.empty((n, ho, wo, c, k, k), dtype=np.float64)
    cdef double[:, :, :, :, :, ::1] cols = out
    cdef Py_ssize_t b, y, x, ch, i, j, yy
    with nogil:
        for b in range(n):
            for y in range(ho):
                for x in range(wo):
                    for ch in range(c):
                        for i in range(k):
                            yy = y * stride + i
                            for j in range(k):
                                cols[b, y, x, ch, i, j] = xp[b, ch, yy, x * stride + j]
    return out


def col2im(cols_in, shape, int k, int stride):
    cdef const double[:, :, :, :, :, ::1] cols = np.ascontiguousarray(cols_in, dtype=np.float64)
    out = np.zeros(shape, dtype=np.float64)
    cdef double[:, :, :, ::1] dst = out
    cdef Py_ssize_t n = cols.shape[0], ho = cols.shape[1], wo = cols.shape[2], c = cols.shape[3]
    cdef Py_ssize_t b, y, x, ch, i, j, yy
    # Walking (y, x) backwards visits each target element in (i, j) ascending
    # order, which is the order the numpy fallback accumulates in.
    with nogil:
        for b in range(n):
            for y in range(ho - 1, -1, -1):
                for x in range(wo - 1, -1, -1):
                    for ch in range(c):
                        for i in range(k):
                            yy = y * stride + i
                            for j in range(k):
                                dst[b, ch, yy, x * stride + j] += cols[b, y, x, ch, i, j]
    return out
