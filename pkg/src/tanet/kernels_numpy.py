"""Pure-numpy convolution gather/scatter kernels.

Default backend.  The column layout is
``cols[(b*OH + oh)*OW + ow, (kh*KW + kw)*C + c]`` and the scatter adds in
kernel-position-major order; both properties are shared with the numba
implementation so the two backends agree bitwise.  Padding is never
materialized: each kernel position copies only its in-bounds block.
"""

import numpy as np

NAME = "numpy"


def out_dims(h, w, kh, kw, stride, ph, pw):
    oh = (h + 2 * ph - kh) // stride + 1
    ow = (w + 2 * pw - kw) // stride + 1
    return oh, ow


def _valid(k, pad, size, stride, out_size):
    """Output index range [lo, hi) whose input index k - pad + stride*o is in bounds."""
    lo = max(0, -(-(pad - k) // stride))  # ceil((pad - k) / stride)
    hi = min(out_size, (size - 1 + pad - k) // stride + 1)
    return lo, max(hi, lo)


def im2col(x, kh, kw, stride, ph, pw):
    """Gather conv patches of NHWC input into a (B*OH*OW, kh*kw*C) matrix."""
    b, h, w, c = x.shape
    oh, ow = out_dims(h, w, kh, kw, stride, ph, pw)
    cols = np.zeros((b, oh, ow, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        ylo, yhi = _valid(i, ph, h, stride, oh)
        iy = ylo * stride + i - ph
        for j in range(kw):
            xlo, xhi = _valid(j, pw, w, stride, ow)
            ix = xlo * stride + j - pw
            cols[:, ylo:yhi, xlo:xhi, i, j, :] = x[
                :, iy:iy + (yhi - ylo) * stride:stride,
                ix:ix + (xhi - xlo) * stride:stride, :,
            ]
    return cols.reshape(b * oh * ow, kh * kw * c)


def col2im(dcols, b, h, w, c, kh, kw, stride, ph, pw):
    """Scatter-add a column-gradient matrix back onto the NHWC input shape."""
    oh, ow = out_dims(h, w, kh, kw, stride, ph, pw)
    dcols = dcols.reshape(b, oh, ow, kh, kw, c)
    dx = np.zeros((b, h, w, c), dtype=dcols.dtype)
    for i in range(kh):
        ylo, yhi = _valid(i, ph, h, stride, oh)
        iy = ylo * stride + i - ph
        for j in range(kw):
            xlo, xhi = _valid(j, pw, w, stride, ow)
            ix = xlo * stride + j - pw
            dx[
                :, iy:iy + (yhi - ylo) * stride:stride,
                ix:ix + (xhi - xlo) * stride:stride, :,
            ] += dcols[:, ylo:yhi, xlo:xhi, i, j, :]
    return dx
