"""Numpy conv2d kernels: strided-window gather + BLAS contraction.

Shared contract with the compiled kernels in `_kernels.pyx`:
    conv2d_forward(x[B,Ci,H,W], w[Co,Ci/g,k,k], stride, pad, groups) -> y[B,Co,Ho,Wo]
    conv2d_backward(x, w, gy, stride, pad, groups) -> (gx, gw)
Inputs are validated by the ops layer; dtype (f32/f64) is preserved.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND_NAME = "numpy"


def _windows(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """[B,C,H,W] -> [B,C,Ho,Wo,k,k] view of sliding k-windows at `stride`."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x, w, stride, pad, groups):
    cout, cing, k, _ = w.shape
    b, cin, _, _ = x.shape
    win = _windows(x, k, stride, pad)
    if groups == 1:
        y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
        y = y.transpose(0, 3, 1, 2)
    elif groups == cin and cout == cin:
        y = np.einsum("bchwkl,ckl->bchw", win, w[:, 0], optimize=True)
    else:
        ho, wo = win.shape[2], win.shape[3]
        wing = win.reshape(b, groups, cin // groups, ho, wo, k, k)
        wg = w.reshape(groups, cout // groups, cing, k, k)
        y = np.einsum("bgihwkl,goikl->bgohw", wing, wg, optimize=True)
        y = y.reshape(b, cout, ho, wo)
    return np.ascontiguousarray(y)


def conv2d_backward(x, w, gy, stride, pad, groups):
    b, cin, h, width = x.shape
    cout, cing, k, _ = w.shape
    ho, wo = gy.shape[2], gy.shape[3]

    win = _windows(x, k, stride, pad)
    if groups == 1:
        gw = np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3]))
    elif groups == cin and cout == cin:
        gw = np.einsum("bchw,bchwkl->ckl", gy, win, optimize=True)[:, None]
    else:
        wing = win.reshape(b, groups, cin // groups, ho, wo, k, k)
        gyg = gy.reshape(b, groups, cout // groups, ho, wo)
        gw = np.einsum("bgohw,bgihwkl->goikl", gyg, wing, optimize=True)
        gw = gw.reshape(cout, cing, k, k)

    # gx: transposed conv = full correlation of the stride-dilated gy with
    # the 180-degree-rotated kernel, channel roles swapped, then crop pad.
    hp, wp = h + 2 * pad, width + 2 * pad
    hd, wd = (ho - 1) * stride + 1, (wo - 1) * stride + 1
    gyd = np.zeros((b, cout, hd + k - 1 + hp - hd, wd + k - 1 + wp - wd), dtype=gy.dtype)
    gyd[:, :, k - 1:k - 1 + hd:stride, k - 1:k - 1 + wd:stride] = gy
    wflip = w[:, :, ::-1, ::-1]
    win2 = sliding_window_view(gyd, (k, k), axis=(2, 3))  # [B,Co,hp,wp,k,k]
    if groups == 1:
        gxp = np.tensordot(win2, wflip, axes=([1, 4, 5], [0, 2, 3]))
        gxp = gxp.transpose(0, 3, 1, 2)
    elif groups == cin and cout == cin:
        gxp = np.einsum("bchwkl,ckl->bchw", win2, wflip[:, 0], optimize=True)
    else:
        win2g = win2.reshape(b, groups, cout // groups, hp, wp, k, k)
        wfg = wflip.reshape(groups, cout // groups, cing, k, k)
        gxp = np.einsum("bgohwkl,goikl->bgihw", win2g, wfg, optimize=True)
        gxp = gxp.reshape(b, cin, hp, wp)
    gx = gxp[:, :, pad:pad + h, pad:pad + width]
    return np.ascontiguousarray(gx), np.ascontiguousarray(gw)
