"""Vectorized numpy convolution kernels (fallback backend).

All three routines operate on contiguous float32/float64 arrays in NCHW
layout with OIHW kernels. `groups` partitions channels; depthwise
convolution is groups == C with one input channel per filter.
"""

import numpy as np


def _patches(x, kh, kw, stride, padding):
    """Extract sliding windows -> (N, C, Ho, Wo, kh, kw)."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x, w, stride=1, padding=0, groups=1):
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    pt = _patches(x, kh, kw, stride, padding)  # (N, C, Ho, Wo, kh, kw)
    if groups == 1:
        cols = pt.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
        y = cols @ w.reshape(o, -1).T
        return np.ascontiguousarray(
            y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
        )
    og = o // groups
    y = np.empty((n, o, ho, wo), dtype=x.dtype)
    for g in range(groups):
        pg = pt[:, g * cg : (g + 1) * cg]
        cols = pg.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cg * kh * kw)
        yg = cols @ w[g * og : (g + 1) * og].reshape(og, -1).T
        y[:, g * og : (g + 1) * og] = yg.reshape(n, ho, wo, og).transpose(0, 3, 1, 2)
    return y


def conv2d_grad_kernel(gy, x, w_shape, stride=1, padding=0, groups=1):
    o, cg, kh, kw = w_shape
    n, _, ho, wo = gy.shape
    pt = _patches(x, kh, kw, stride, padding)
    if groups == 1:
        cols = pt.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, -1)
        g = gy.transpose(1, 0, 2, 3).reshape(o, -1)
        return (g @ cols).reshape(w_shape)
    og = o // groups
    gw = np.empty(w_shape, dtype=x.dtype)
    for g in range(groups):
        pg = pt[:, g * cg : (g + 1) * cg]
        cols = pg.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, -1)
        gg = gy[:, g * og : (g + 1) * og].transpose(1, 0, 2, 3).reshape(og, -1)
        gw[g * og : (g + 1) * og] = (gg @ cols).reshape(og, cg, kh, kw)
    return gw


def conv2d_grad_input(gy, w, x_shape, stride=1, padding=0, groups=1):
    n, c, h, wd = x_shape
    o, cg, kh, kw = w.shape
    _, _, ho, wo = gy.shape
    hp, wp = h + 2 * padding, wd + 2 * padding
    gxp = np.zeros((n, c, hp, wp), dtype=gy.dtype)
    og = o // groups
    for g in range(groups):
        gg = gy[:, g * og : (g + 1) * og].transpose(0, 2, 3, 1).reshape(n * ho * wo, og)
        # columns of input gradient: (N*Ho*Wo, cg*kh*kw)
        gcols = gg @ w[g * og : (g + 1) * og].reshape(og, -1)
        gcols = gcols.reshape(n, ho, wo, cg, kh, kw)
        tgt = gxp[:, g * cg : (g + 1) * cg]
        for i in range(kh):
            for j in range(kw):
                tgt[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += (
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
    if padding:
        return np.ascontiguousarray(gxp[:, :, padding:-padding, padding:-padding])
    return gxp
