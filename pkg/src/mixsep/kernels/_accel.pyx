# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the hot array kernels.

Same contracts as `mixsep.kernels._numpy`; see that module for the shape
conventions. Loops are ordered so the innermost index walks the contiguous
channel axis.
"""

import numpy as np

cimport cython

ctypedef fused real:
    float
    double


cdef inline object _empty_like_dtype(real[:, :, ::1] x, shape):
    if real is float:
        return np.zeros(shape, dtype=np.float32)
    return np.zeros(shape, dtype=np.float64)


def frame(real[:, ::1] x, Py_ssize_t length, Py_ssize_t hop):
    cdef Py_ssize_t B = x.shape[0]
    cdef Py_ssize_t T = x.shape[1]
    if T < length:
        raise ValueError(f"signal length {T} shorter than window {length}")
    cdef Py_ssize_t F = 1 + (T - length) // hop
    if real is float:
        out_arr = np.empty((B, F, length), dtype=np.float32)
    else:
        out_arr = np.empty((B, F, length), dtype=np.float64)
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, f, i, start
    with nogil:
        for b in range(B):
            for f in range(F):
                start = f * hop
                for i in range(length):
                    out[b, f, i] = x[b, start + i]
    return out_arr


def overlap_add(real[:, :, ::1] frames, Py_ssize_t hop, Py_ssize_t out_len):
    cdef Py_ssize_t B = frames.shape[0]
    cdef Py_ssize_t F = frames.shape[1]
    cdef Py_ssize_t L = frames.shape[2]
    if L % hop != 0:
        raise ValueError(f"window {L} not a multiple of hop {hop}")
    if out_len < (F - 1) * hop + L:
        raise ValueError("output buffer shorter than the overlap-add span")
    if real is float:
        out_arr = np.zeros((B, out_len), dtype=np.float32)
    else:
        out_arr = np.zeros((B, out_len), dtype=np.float64)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t b, f, i, start
    with nogil:
        for b in range(B):
            for f in range(F):
                start = f * hop
                for i in range(L):
                    out[b, start + i] += frames[b, f, i]
    return out_arr


def depthwise_forward(real[:, :, ::1] x, real[:, ::1] w, Py_ssize_t dilation):
    cdef Py_ssize_t B = x.shape[0]
    cdef Py_ssize_t F = x.shape[1]
    cdef Py_ssize_t C = x.shape[2]
    cdef Py_ssize_t k = w.shape[0]
    cdef Py_ssize_t c0 = (k - 1) // 2
    out_arr = _empty_like_dtype(x, (B, F, C))
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, j, f, c, off, lo, hi
    with nogil:
        for b in range(B):
            for j in range(k):
                off = (j - c0) * dilation
                lo = -off if off < 0 else 0
                hi = F - off if off > 0 else F
                for f in range(lo, hi):
                    for c in range(C):
                        out[b, f, c] += x[b, f + off, c] * w[j, c]
    return out_arr


def depthwise_grad_input(real[:, :, ::1] dy, real[:, ::1] w, Py_ssize_t dilation):
    cdef Py_ssize_t B = dy.shape[0]
    cdef Py_ssize_t F = dy.shape[1]
    cdef Py_ssize_t C = dy.shape[2]
    cdef Py_ssize_t k = w.shape[0]
    cdef Py_ssize_t c0 = (k - 1) // 2
    dx_arr = _empty_like_dtype(dy, (B, F, C))
    cdef real[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, j, f, c, off, lo, hi
    with nogil:
        for b in range(B):
            for j in range(k):
                off = -(j - c0) * dilation
                lo = -off if off < 0 else 0
                hi = F - off if off > 0 else F
                for f in range(lo, hi):
                    for c in range(C):
                        dx[b, f, c] += dy[b, f + off, c] * w[j, c]
    return dx_arr


def depthwise_grad_weight(real[:, :, ::1] dy, real[:, :, ::1] x,
                          Py_ssize_t dilation, Py_ssize_t k):
    cdef Py_ssize_t B = x.shape[0]
    cdef Py_ssize_t F = x.shape[1]
    cdef Py_ssize_t C = x.shape[2]
    cdef Py_ssize_t c0 = (k - 1) // 2
    if real is float:
        dw_arr = np.zeros((k, C), dtype=np.float32)
    else:
        dw_arr = np.zeros((k, C), dtype=np.float64)
    cdef real[:, ::1] dw = dw_arr
    cdef Py_ssize_t b, j, f, c, off, lo, hi
    with nogil:
        for b in range(B):
            for j in range(k):
                off = (j - c0) * dilation
                lo = -off if off < 0 else 0
                hi = F - off if off > 0 else F
                for f in range(lo, hi):
                    for c in range(C):
                        dw[j, c] += dy[b, f, c] * x[b, f + off, c]
    return dw_arr
