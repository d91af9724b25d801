# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled conv2d kernels: direct loops over typed memoryviews."""

import numpy as np
cimport cython

ctypedef fused real:
    float
    double


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wi = x.shape[3]
    cdef Py_ssize_t f = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (wi + 2 * pad - kw) // stride + 1
    out_np = np.zeros((n, f, ho, wo), dtype=np.asarray(x).dtype)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t b, o, ci, i, j, p, q, ih, iw
    cdef real acc
    for b in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = 0
                    for ci in range(c):
                        for p in range(kh):
                            ih = i * stride + p - pad
                            if ih < 0 or ih >= h:
                                continue
                            for q in range(kw):
                                iw = j * stride + q - pad
                                if iw < 0 or iw >= wi:
                                    continue
                                acc += x[b, ci, ih, iw] * w[o, ci, p, q]
                    out[b, o, i, j] = acc
    return out_np


def conv2d_backward_w(real[:, :, :, ::1] x, w_shape, real[:, :, :, ::1] gout,
                      int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wi = x.shape[3]
    cdef Py_ssize_t f = w_shape[0], kh = w_shape[2], kw = w_shape[3]
    cdef Py_ssize_t ho = gout.shape[2], wo = gout.shape[3]
    dw_np = np.zeros(tuple(w_shape), dtype=np.asarray(x).dtype)
    cdef real[:, :, :, ::1] dw = dw_np
    cdef Py_ssize_t b, o, ci, i, j, p, q, ih, iw
    cdef real g
    for b in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    g = gout[b, o, i, j]
                    for ci in range(c):
                        for p in range(kh):
                            ih = i * stride + p - pad
                            if ih < 0 or ih >= h:
                                continue
                            for q in range(kw):
                                iw = j * stride + q - pad
                                if iw < 0 or iw >= wi:
                                    continue
                                dw[o, ci, p, q] += x[b, ci, ih, iw] * g
    return dw_np


def conv2d_backward_x(x_shape, real[:, :, :, ::1] w, real[:, :, :, ::1] gout,
                      int stride, int pad):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], wi = x_shape[3]
    cdef Py_ssize_t f = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = gout.shape[2], wo = gout.shape[3]
    dx_np = np.zeros(tuple(x_shape), dtype=np.asarray(gout).dtype)
    cdef real[:, :, :, ::1] dx = dx_np
    cdef Py_ssize_t b, o, ci, i, j, p, q, ih, iw
    cdef real g
    for b in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    g = gout[b, o, i, j]
                    for ci in range(c):
                        for p in range(kh):
                            ih = i * stride + p - pad
                            if ih < 0 or ih >= h:
                                continue
                            for q in range(kw):
                                iw = j * stride + q - pad
                                if iw < 0 or iw >= wi:
                                    continue
                                dx[b, ci, ih, iw] += w[o, ci, p, q] * g
    return dx_np
