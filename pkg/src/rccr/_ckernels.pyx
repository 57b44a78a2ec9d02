# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled windowed kernels. Same contracts as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy, memset

cnp.import_array()

NAME = "cython"


def im2col(double[:, :, ::1] x, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], length = x.shape[1], c = x.shape[2]
    cdef Py_ssize_t lout = (length + 2 * pad - k) // stride + 1
    out_arr = np.empty((n, lout, k, c))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t i, t, start, lo, hi
    # each window is one contiguous run of x, clipped at the padded edges
    with nogil:
        for i in range(n):
            for t in range(lout):
                start = t * stride - pad
                lo = -start if start < 0 else 0
                hi = length - start if start + k > length else k
                if lo > k:
                    lo = k
                if hi < lo:
                    hi = lo
                if lo > 0:
                    memset(&out[i, t, 0, 0], 0, lo * c * sizeof(double))
                if hi > lo:
                    memcpy(&out[i, t, lo, 0], &x[i, start + lo, 0], (hi - lo) * c * sizeof(double))
                if hi < k:
                    memset(&out[i, t, hi, 0], 0, (k - hi) * c * sizeof(double))
    return out_arr


def col2im(double[:, :, :, ::1] cols, Py_ssize_t length, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = cols.shape[0], lout = cols.shape[1]
    cdef Py_ssize_t k = cols.shape[2], c = cols.shape[3]
    out_arr = np.zeros((n, length, c))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, t, j, ch, dst
    # j-outer order matches the numpy fallback's accumulation order
    with nogil:
        for i in range(n):
            for j in range(k):
                for t in range(lout):
                    dst = t * stride + j - pad
                    if dst < 0 or dst >= length:
                        continue
                    for ch in range(c):
                        out[i, dst, ch] += cols[i, t, j, ch]
    return out_arr


def maxpool_forward(double[:, :, ::1] x, Py_ssize_t p):
    cdef Py_ssize_t n = x.shape[0], length = x.shape[1], c = x.shape[2]
    cdef Py_ssize_t lo = length // p
    out_arr = np.empty((n, lo, c))
    idx_arr = np.empty((n, lo, c), dtype=np.int64)
    cdef double[:, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, ::1] idx = idx_arr
    cdef Py_ssize_t i, t, j, ch, best_pos, pos
    cdef double best
    with nogil:
        for i in range(n):
            for t in range(lo):
                for ch in range(c):
                    best_pos = t * p
                    best = x[i, best_pos, ch]
                    for j in range(1, p):
                        pos = t * p + j
                        if x[i, pos, ch] > best:
                            best = x[i, pos, ch]
                            best_pos = pos
                    out[i, t, ch] = best
                    idx[i, t, ch] = best_pos
    return out_arr, idx_arr


def maxpool_backward(double[:, :, ::1] g, cnp.int64_t[:, :, ::1] idx, Py_ssize_t length):
    cdef Py_ssize_t n = g.shape[0], lo = g.shape[1], c = g.shape[2]
    out_arr = np.zeros((n, length, c))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, t, ch
    with nogil:
        for i in range(n):
            for t in range(lo):
                for ch in range(c):
                    out[i, idx[i, t, ch], ch] += g[i, t, ch]
    return out_arr
