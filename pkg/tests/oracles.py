"""Independent reference implementations used to verify the library.

Everything here is deliberately written as plain loops or direct
formula transcriptions with no reliance on the package's kernel layer,
so failures localize to the implementation under test.
"""

import numpy as np

from tanet.tensor import backward, no_grad


def conv2d_naive(x, w, b, stride=1, padding=(0, 0)):
    """Quadruple-loop direct convolution over NHWC input."""
    ph, pw = padding
    B, H, W, Cin = x.shape
    KH, KW, _, Cout = w.shape
    xp = np.zeros((B, H + 2 * ph, W + 2 * pw, Cin), dtype=np.float64)
    xp[:, ph:ph + H, pw:pw + W, :] = x
    OH = (H + 2 * ph - KH) // stride + 1
    OW = (W + 2 * pw - KW) // stride + 1
    y = np.zeros((B, OH, OW, Cout), dtype=np.float64)
    for bb in range(B):
        for oh in range(OH):
            for ow in range(OW):
                for co in range(Cout):
                    acc = b[co]
                    for kh in range(KH):
                        for kw in range(KW):
                            for ci in range(Cin):
                                acc += xp[bb, oh * stride + kh, ow * stride + kw, ci] * w[kh, kw, ci, co]
                    y[bb, oh, ow, co] = acc
    return y


def dft2d_naive(plane):
    """O(N^2) direct 2-D DFT of one H x W plane, unnormalized forward."""
    H, W = plane.shape
    out = np.zeros((H, W), dtype=np.complex128)
    for u in range(H):
        for v in range(W):
            acc = 0.0 + 0.0j
            for i in range(H):
                for j in range(W):
                    ang = -2.0 * np.pi * (u * i / H + v * j / W)
                    acc += plane[i, j] * (np.cos(ang) + 1j * np.sin(ang))
            out[u, v] = acc
    return out


def strip_means_naive(x):
    """Column means (1,W,C) and row means (H,1,C) per sample, by loops."""
    B, H, W, C = x.shape
    col = np.zeros((B, 1, W, C))
    row = np.zeros((B, H, 1, C))
    for bb in range(B):
        for c in range(C):
            for j in range(W):
                col[bb, 0, j, c] = sum(x[bb, i, j, c] for i in range(H)) / H
            for i in range(H):
                row[bb, i, 0, c] = sum(x[bb, i, j, c] for j in range(W)) / W
    return col, row


def fd_gradients(loss_fn, targets, h=1e-5, max_entries=None, rng=None):
    """Central finite differences of a scalar loss w.r.t. target tensors.

    loss_fn must rebuild the forward graph from the targets' current
    .data; gradients are probed by perturbing entries in place.  Returns
    {name: list of (flat_index, fd_value)}.
    """
    out = {}
    for name, t in targets:
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, size=max_entries, replace=False)
            idx.sort()
        entries = []
        for i in idx:
            saved = flat[i]
            flat[i] = saved + h
            with no_grad():
                up = loss_fn().item()
            flat[i] = saved - h
            with no_grad():
                down = loss_fn().item()
            flat[i] = saved
            entries.append((int(i), (up - down) / (2.0 * h)))
        out[name] = entries
    return out


def check_gradients(loss_fn, targets, h=1e-5, rtol=1e-4, atol=1e-8,
                    max_entries=None, rng=None):
    """Compare analytic gradients against central differences.

    Returns {name: worst_abs_excess} where a non-positive value means the
    group passed: |analytic - fd| <= max(rtol * max(|a|,|fd|), atol).
    """
    for _, t in targets:
        t.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = {name: t.grad.reshape(-1).copy() if t.grad is not None else np.zeros(t.data.size)
                for name, t in targets}
    fd = fd_gradients(loss_fn, targets, h=h, max_entries=max_entries, rng=rng)
    report = {}
    for name, entries in fd.items():
        worst = -np.inf
        for i, fd_val in entries:
            a = analytic[name][i]
            tol = max(rtol * max(abs(a), abs(fd_val)), atol)
            worst = max(worst, abs(a - fd_val) - tol)
        report[name] = worst
    return report


def assert_gradients_close(loss_fn, targets, **kwargs):
    report = check_gradients(loss_fn, targets, **kwargs)
    bad = {k: v for k, v in report.items() if v > 0}
    assert not bad, f"finite-difference mismatch in groups: {bad}"
