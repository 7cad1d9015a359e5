# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled single-threaded implementations of the hot training kernels.

Same contracts as numpy_backend; float32 and float64 supported. The inner
loops run over the length axis of contiguous buffers so the C compiler can
vectorize them.
"""

import numpy as np

cimport cython

ctypedef fused real:
    float
    double


cdef void _conv_fwd(const real[:, :, ::1] x, const real[:, :, ::1] w,
                    const real[::1] b, real[:, :, ::1] y) noexcept nogil:
    # Output channels processed four at a time so each loaded input sample
    # feeds four fused multiply-adds.
    cdef Py_ssize_t N = x.shape[0], Ci = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t Co = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t pad = (K - 1) // 2
    cdef Py_ssize_t n, co, ci, k, l, lo, hi, off
    cdef Py_ssize_t co4 = Co - (Co % 4)
    cdef real w0, w1, w2, w3, xv
    for n in range(N):
        for co in range(Co):
            for l in range(L):
                y[n, co, l] = b[co]
        for co in range(0, co4, 4):
            for ci in range(Ci):
                for k in range(K):
                    off = k - pad
                    lo = -off if off < 0 else 0
                    hi = L - off if off > 0 else L
                    w0 = w[co, ci, k]
                    w1 = w[co + 1, ci, k]
                    w2 = w[co + 2, ci, k]
                    w3 = w[co + 3, ci, k]
                    for l in range(lo, hi):
                        xv = x[n, ci, l + off]
                        y[n, co, l] += w0 * xv
                        y[n, co + 1, l] += w1 * xv
                        y[n, co + 2, l] += w2 * xv
                        y[n, co + 3, l] += w3 * xv
        for co in range(co4, Co):
            for ci in range(Ci):
                for k in range(K):
                    off = k - pad
                    lo = -off if off < 0 else 0
                    hi = L - off if off > 0 else L
                    w0 = w[co, ci, k]
                    for l in range(lo, hi):
                        y[n, co, l] += w0 * x[n, ci, l + off]


cdef void _conv_bwd_x(const real[:, :, ::1] g, const real[:, :, ::1] w,
                      real[:, :, ::1] dx) noexcept nogil:
    # Input channels processed four at a time; each loaded gradient sample
    # feeds four accumulator rows.
    cdef Py_ssize_t N = g.shape[0], Co = g.shape[1], L = g.shape[2]
    cdef Py_ssize_t Ci = w.shape[1], K = w.shape[2]
    cdef Py_ssize_t pad = (K - 1) // 2
    cdef Py_ssize_t n, co, ci, k, i, lo, hi, off
    cdef Py_ssize_t ci4 = Ci - (Ci % 4)
    cdef real w0, w1, w2, w3, gv
    for n in range(N):
        for ci in range(Ci):
            for i in range(L):
                dx[n, ci, i] = 0
        for co in range(Co):
            for ci in range(0, ci4, 4):
                for k in range(K):
                    off = k - pad
                    lo = off if off > 0 else 0
                    hi = L + off if off < 0 else L
                    w0 = w[co, ci, k]
                    w1 = w[co, ci + 1, k]
                    w2 = w[co, ci + 2, k]
                    w3 = w[co, ci + 3, k]
                    for i in range(lo, hi):
                        gv = g[n, co, i - off]
                        dx[n, ci, i] += w0 * gv
                        dx[n, ci + 1, i] += w1 * gv
                        dx[n, ci + 2, i] += w2 * gv
                        dx[n, ci + 3, i] += w3 * gv
            for ci in range(ci4, Ci):
                for k in range(K):
                    off = k - pad
                    lo = off if off > 0 else 0
                    hi = L + off if off < 0 else L
                    w0 = w[co, ci, k]
                    for i in range(lo, hi):
                        dx[n, ci, i] += w0 * g[n, co, i - off]


cdef void _conv_bwd_w(const real[:, :, ::1] g, const real[:, :, ::1] x,
                      real[:, :, ::1] dw, real[::1] db) noexcept nogil:
    cdef Py_ssize_t N = g.shape[0], Co = g.shape[1], L = g.shape[2]
    cdef Py_ssize_t Ci = x.shape[1], K = dw.shape[2]
    cdef Py_ssize_t pad = (K - 1) // 2
    cdef Py_ssize_t n, co, ci, k, l, lo, hi, off
    cdef real acc, bacc
    for co in range(Co):
        db[co] = 0
        for ci in range(Ci):
            for k in range(K):
                dw[co, ci, k] = 0
    for n in range(N):
        for co in range(Co):
            bacc = 0
            for l in range(L):
                bacc += g[n, co, l]
            db[co] += bacc
            for ci in range(Ci):
                for k in range(K):
                    off = k - pad
                    lo = -off if off < 0 else 0
                    hi = L - off if off > 0 else L
                    acc = 0
                    for l in range(lo, hi):
                        acc += g[n, co, l] * x[n, ci, l + off]
                    dw[co, ci, k] += acc


cdef void _pool_fwd(const real[:, :, ::1] x, Py_ssize_t p,
                    real[:, :, ::1] y, long long[:, :, ::1] idx) noexcept nogil:
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t Lo = L // p
    cdef Py_ssize_t n, c, j, t, base, arg
    cdef real best, v
    for n in range(N):
        for c in range(C):
            for j in range(Lo):
                base = j * p
                best = x[n, c, base]
                arg = 0
                for t in range(1, p):
                    v = x[n, c, base + t]
                    if v > best:
                        best = v
                        arg = t
                y[n, c, j] = best
                idx[n, c, j] = arg


cdef void _pool_bwd(const real[:, :, ::1] g, const long long[:, :, ::1] idx,
                    Py_ssize_t p, real[:, :, ::1] dx) noexcept nogil:
    cdef Py_ssize_t N = g.shape[0], C = g.shape[1], Lo = g.shape[2]
    cdef Py_ssize_t n, c, j, i
    for n in range(N):
        for c in range(C):
            for i in range(Lo * p):
                dx[n, c, i] = 0
            for j in range(Lo):
                dx[n, c, j * p + idx[n, c, j]] = g[n, c, j]


def _as_c(arr, dtype):
    return np.ascontiguousarray(arr, dtype=dtype)


def conv1d_forward(x, w, b):
    dt = x.dtype
    x = _as_c(x, dt); w = _as_c(w, dt); b = _as_c(b, dt)
    y = np.empty((x.shape[0], w.shape[0], x.shape[2]), dtype=dt)
    if dt == np.float32:
        _conv_fwd[float](x, w, b, y)
    elif dt == np.float64:
        _conv_fwd[double](x, w, b, y)
    else:
        raise TypeError(f"unsupported dtype {dt}")
    return y


def conv1d_backward_input(grad, w):
    dt = grad.dtype
    grad = _as_c(grad, dt); w = _as_c(w, dt)
    dx = np.empty((grad.shape[0], w.shape[1], grad.shape[2]), dtype=dt)
    if dt == np.float32:
        _conv_bwd_x[float](grad, w, dx)
    elif dt == np.float64:
        _conv_bwd_x[double](grad, w, dx)
    else:
        raise TypeError(f"unsupported dtype {dt}")
    return dx


def conv1d_backward_weights(grad, x, k):
    dt = grad.dtype
    grad = _as_c(grad, dt); x = _as_c(x, dt)
    dw = np.empty((grad.shape[1], x.shape[1], k), dtype=dt)
    db = np.empty(grad.shape[1], dtype=dt)
    if dt == np.float32:
        _conv_bwd_w[float](grad, x, dw, db)
    elif dt == np.float64:
        _conv_bwd_w[double](grad, x, dw, db)
    else:
        raise TypeError(f"unsupported dtype {dt}")
    return dw, db


def maxpool1d_forward(x, p):
    dt = x.dtype
    x = _as_c(x, dt)
    n, c, length = x.shape
    y = np.empty((n, c, length // p), dtype=dt)
    idx = np.empty((n, c, length // p), dtype=np.int64)
    if dt == np.float32:
        _pool_fwd[float](x, p, y, idx)
    elif dt == np.float64:
        _pool_fwd[double](x, p, y, idx)
    else:
        raise TypeError(f"unsupported dtype {dt}")
    return y, idx


def maxpool1d_backward(grad, idx, p):
    dt = grad.dtype
    grad = _as_c(grad, dt)
    idx = _as_c(idx, np.int64)
    n, c, lout = grad.shape
    dx = np.empty((n, c, lout * p), dtype=dt)
    if dt == np.float32:
        _pool_bwd[float](grad, idx, p, dx)
    elif dt == np.float64:
        _pool_bwd[double](grad, idx, p, dx)
    else:
        raise TypeError(f"unsupported dtype {dt}")
    return dx
