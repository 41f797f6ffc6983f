# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled conv2d kernels (direct loops).

Same contract as kernels_numpy: forward and backward for grouped 2-D
convolution with symmetric zero padding and square kernels. Accumulation
order is fixed, so results are deterministic.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "compiled"

ctypedef fused real:
    float
    double


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                   int stride, int pad, int groups):
    cdef Py_ssize_t b = x.shape[0], cin = x.shape[1], h = x.shape[2], width = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], cing = w.shape[1], k = w.shape[2]
    cdef Py_ssize_t ho = (h - k + 2 * pad) // stride + 1
    cdef Py_ssize_t wo = (width - k + 2 * pad) // stride + 1
    cdef Py_ssize_t cog = cout // groups

    if real is float:
        y_arr = np.zeros((b, cout, ho, wo), dtype=np.float32)
    else:
        y_arr = np.zeros((b, cout, ho, wo), dtype=np.float64)
    cdef real[:, :, :, ::1] y = y_arr

    cdef Py_ssize_t bi, g, co, oh, ow, ci, kh, kw, ih, iw
    cdef real acc
    for bi in range(b):
        for g in range(groups):
            for co in range(g * cog, (g + 1) * cog):
                for oh in range(ho):
                    for ow in range(wo):
                        acc = 0
                        for ci in range(cing):
                            for kh in range(k):
                                ih = oh * stride + kh - pad
                                if ih < 0 or ih >= h:
                                    continue
                                for kw in range(k):
                                    iw = ow * stride + kw - pad
                                    if iw < 0 or iw >= width:
                                        continue
                                    acc += x[bi, g * cing + ci, ih, iw] * w[co, ci, kh, kw]
                        y[bi, co, oh, ow] = acc
    return y_arr


def conv2d_backward(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                    real[:, :, :, ::1] gy, int stride, int pad, int groups):
    cdef Py_ssize_t b = x.shape[0], cin = x.shape[1], h = x.shape[2], width = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], cing = w.shape[1], k = w.shape[2]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t cog = cout // groups

    if real is float:
        gx_arr = np.zeros((b, cin, h, width), dtype=np.float32)
        gw_arr = np.zeros((cout, cing, k, k), dtype=np.float32)
    else:
        gx_arr = np.zeros((b, cin, h, width), dtype=np.float64)
        gw_arr = np.zeros((cout, cing, k, k), dtype=np.float64)
    cdef real[:, :, :, ::1] gx = gx_arr
    cdef real[:, :, :, ::1] gw = gw_arr

    cdef Py_ssize_t bi, g, co, oh, ow, ci, kh, kw, ih, iw
    cdef real gval
    for bi in range(b):
        for g in range(groups):
            for co in range(g * cog, (g + 1) * cog):
                for oh in range(ho):
                    for ow in range(wo):
                        gval = gy[bi, co, oh, ow]
                        if gval == 0:
                            continue
                        for ci in range(cing):
                            for kh in range(k):
                                ih = oh * stride + kh - pad
                                if ih < 0 or ih >= h:
                                    continue
                                for kw in range(k):
                                    iw = ow * stride + kw - pad
                                    if iw < 0 or iw >= width:
                                        continue
                                    gx[bi, g * cing + ci, ih, iw] += gval * w[co, ci, kh, kw]
                                    gw[co, ci, kh, kw] += gval * x[bi, g * cing + ci, ih, iw]
    return gx_arr, gw_arr
