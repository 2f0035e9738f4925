# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled convolution kernels (hot path backend).

Same contracts as the numpy fallback in `_convnp`: NCHW inputs, OIHW
kernels, channel groups, zero padding. Loops are ordered so the inner
trip runs along contiguous rows, which the C compiler vectorizes.
Single-threaded, so results are reproducible run to run.
"""

import numpy as np

ctypedef fused floating:
    float
    double


cdef inline Py_ssize_t _ceil_div(Py_ssize_t a, Py_ssize_t b) nogil:
    # b > 0; correct under C truncating division
    if a >= 0:
        return (a + b - 1) // b
    return -((-a) // b)


def conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                   int stride=1, int padding=0, int groups=1):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = w.shape[0], cg = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (h + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * padding - kw) // stride + 1
    cdef Py_ssize_t og = o // groups

    if floating is float:
        y_arr = np.zeros((n, o, ho, wo), dtype=np.float32)
    else:
        y_arr = np.zeros((n, o, ho, wo), dtype=np.float64)
    cdef floating[:, :, :, ::1] y = y_arr

    cdef Py_ssize_t b, oc, ci, ki, kj, i, j, hi, ch, j0, j1
    cdef floating wv
    with nogil:
        for b in range(n):
            for oc in range(o):
                for ci in range(cg):
                    ch = (oc // og) * cg + ci
                    for ki in range(kh):
                        for kj in range(kw):
                            wv = w[oc, ci, ki, kj]
                            # valid j range: 0 <= j*stride - padding + kj < wd
                            j0 = max(0, _ceil_div(padding - kj, stride))
                            j1 = min(wo, _ceil_div(wd + padding - kj, stride))
                            if stride == 1:
                                for i in range(ho):
                                    hi = i - padding + ki
                                    if hi < 0 or hi >= h:
                                        continue
                                    for j in range(j0, j1):
                                        y[b, oc, i, j] += wv * x[b, ch, hi, j + kj - padding]
                            else:
                                for i in range(ho):
                                    hi = i * stride - padding + ki
                                    if hi < 0 or hi >= h:
                                        continue
                                    for j in range(j0, j1):
                                        y[b, oc, i, j] += wv * x[b, ch, hi, j * stride - padding + kj]
    return y_arr


def conv2d_grad_kernel(floating[:, :, :, ::1] gy, floating[:, :, :, ::1] x,
                       w_shape, int stride=1, int padding=0, int groups=1):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = w_shape[0], cg = w_shape[1], kh = w_shape[2], kw = w_shape[3]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t og = o // groups

    if floating is float:
        gw_arr = np.zeros((o, cg, kh, kw), dtype=np.float32)
    else:
        gw_arr = np.zeros((o, cg, kh, kw), dtype=np.float64)
    cdef floating[:, :, :, ::1] gw = gw_arr

    cdef Py_ssize_t b, oc, ci, ki, kj, i, j, hi, ch, j0, j1
    cdef floating acc
    with nogil:
        for oc in range(o):
            for ci in range(cg):
                ch = (oc // og) * cg + ci
                for ki in range(kh):
                    for kj in range(kw):
                        acc = 0
                        j0 = max(0, _ceil_div(padding - kj, stride))
                        j1 = min(wo, _ceil_div(wd + padding - kj, stride))
                        if stride == 1:
                            for b in range(n):
                                for i in range(ho):
                                    hi = i - padding + ki
                                    if hi < 0 or hi >= h:
                                        continue
                                    for j in range(j0, j1):
                                        acc += gy[b, oc, i, j] * x[b, ch, hi, j + kj - padding]
                        else:
                            for b in range(n):
                                for i in range(ho):
                                    hi = i * stride - padding + ki
                                    if hi < 0 or hi >= h:
                                        continue
                                    for j in range(j0, j1):
                                        acc += gy[b, oc, i, j] * x[b, ch, hi, j * stride - padding + kj]
                        gw[oc, ci, ki, kj] = acc
    return gw_arr


def conv2d_grad_input(floating[:, :, :, ::1] gy, floating[:, :, :, ::1] w,
                      x_shape, int stride=1, int padding=0, int groups=1):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], wd = x_shape[3]
    cdef Py_ssize_t o = w.shape[0], cg = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t og = o // groups

    if floating is float:
        gx_arr = np.zeros((n, c, h, wd), dtype=np.float32)
    else:
        gx_arr = np.zeros((n, c, h, wd), dtype=np.float64)
    cdef floating[:, :, :, ::1] gx = gx_arr

    cdef Py_ssize_t b, oc, ci, ki, kj, i, j, hi, ch, j0, j1
    cdef floating wv
    with nogil:
        for b in range(n):
            for oc in range(o):
                for ci in range(cg):
                    ch = (oc // og) * cg + ci
                    for ki in range(kh):
                        for kj in range(kw):
                            wv = w[oc, ci, ki, kj]
                            j0 = max(0, _ceil_div(padding - kj, stride))
                            j1 = min(wo, _ceil_div(wd + padding - kj, stride))
                            if stride == 1:
                                for i in range(ho):
                                    hi = i - padding + ki
                                    if hi < 0 or hi >= h:
                                        continue
                                    for j in range(j0, j1):
                                        gx[b, ch, hi, j + kj - padding] += wv * gy[b, oc, i, j]
                            else:
                                for i in range(ho):
                                    hi = i * stride - padding + ki
                                    if hi < 0 or hi >= h:
                                        continue
                                    for j in range(j0, j1):
                                        gx[b, ch, hi, j * stride - padding + kj] += wv * gy[b, oc, i, j]
    return gx_arr
