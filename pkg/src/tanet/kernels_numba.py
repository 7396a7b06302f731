"""Numba-compiled convolution gather/scatter kernels.

The im2col gather fuses zero padding (no intermediate padded copy) and
the col2im scatter-add accumulates in kernel-position-major order to
match kernels_numpy bitwise.  benchmarks/bench_kernels.py compares both
backends on the current machine.
"""

import numpy as np
from numba import njit

NAME = "numba"


def out_dims(h, w, kh, kw, stride, ph, pw):
    oh = (h + 2 * ph - kh) // stride + 1
    ow = (w + 2 * pw - kw) // stride + 1
    return oh, ow


@njit(cache=True)
def _gather(x, kh, kw, stride, ph, pw, oh, ow):
    b, h, w, c = x.shape
    cols = np.zeros((b * oh * ow, kh * kw * c), dtype=x.dtype)
    for bb in range(b):
        for i in range(oh):
            ih0 = i * stride - ph
            for j in range(ow):
                iw0 = j * stride - pw
                r = (bb * oh + i) * ow + j
                for ki in range(kh):
                    ih = ih0 + ki
                    if ih < 0 or ih >= h:
                        continue
                    for kj in range(kw):
                        iw = iw0 + kj
                        if iw < 0 or iw >= w:
                            continue
                        off = (ki * kw + kj) * c
                        cols[r, off:off + c] = x[bb, ih, iw, :]
    return cols


@njit(cache=True)
def _scatter(dcols, b, h, w, c, kh, kw, stride, ph, pw, oh, ow):
    dx = np.zeros((b, h, w, c), dtype=dcols.dtype)
    # kernel-position-major accumulation matches the numpy backend bitwise
    for ki in range(kh):
        for kj in range(kw):
            off = (ki * kw + kj) * c
            for bb in range(b):
                for i in range(oh):
                    ih = i * stride - ph + ki
                    if ih < 0 or ih >= h:
                        continue
                    for j in range(ow):
                        iw = j * stride - pw + kj
                        if iw < 0 or iw >= w:
                            continue
                        r = (bb * oh + i) * ow + j
                        dx[bb, ih, iw, :] += dcols[r, off:off + c]
    return dx


def im2col(x, kh, kw, stride, ph, pw):
    """Gather conv patches of NHWC input into a (B*OH*OW, kh*kw*C) matrix."""
    oh, ow = out_dims(x.shape[1], x.shape[2], kh, kw, stride, ph, pw)
    return _gather(x, kh, kw, stride, ph, pw, oh, ow)


def col2im(dcols, b, h, w, c, kh, kw, stride, ph, pw):
    """Scatter-add a column-gradient matrix back onto the NHWC input shape."""
    oh, ow = out_dims(h, w, kh, kw, stride, ph, pw)
    return _scatter(dcols, b, h, w, c, kh, kw, stride, ph, pw, oh, ow)
