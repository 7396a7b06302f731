"""Rank-4 NHWC tensors with reverse-mode autodiff.

Every value is a dense (batch, height, width, channels) array of float32
or float64 scalars.  Primitive ops build a tape of ``TapeNode`` records;
``backward(loss)`` walks the tape once in reverse topological order and
accumulates gradients into every tensor that requires them.

Gradient conventions worth knowing:

* channel max pooling routes its gradient to the first maximal channel,
* strip pooling distributes 1/H (resp. 1/W) uniformly along the pooled
  axis,
* sigmoid outputs are clamped into the open interval (0, 1) so the range
  invariant holds even for saturating inputs.
"""

import contextlib
from dataclasses import dataclass

import numpy as np

from tanet import backend


class ShapeError(ValueError):
    """Raised when operand shapes violate an op contract."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the context (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class TapeNode:
    """One recorded primitive application: op id, input refs, backward rule."""

    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op, inputs, backward):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tensor:
    """Dense rank-4 array (batch, height, width, channels), NHWC row-major."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.ascontiguousarray(data)
        if arr.dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
            arr = arr.astype(backend.default_dtype())
        if arr.ndim != 4:
            raise ShapeError(f"tensors are rank-4 NHWC, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ShapeError(f"all dimensions must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"


def as_tensor(data, requires_grad=False):
    """Wrap an array-like as a Tensor (no copy when already conforming)."""
    if isinstance(data, Tensor):
        return data
    return Tensor(np.asarray(data, dtype=backend.default_dtype()), requires_grad)


def scalar(value, dtype=None):
    """A (1,1,1,1) tensor holding one number."""
    dt = dtype or backend.default_dtype()
    return Tensor(np.full((1, 1, 1, 1), value, dtype=dt))


def _record(op, inputs, out, backward_fn):
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = TapeNode(op, tuple(inputs), backward_fn)
    return out


def _accumulate(t, g, owned=False):
    """Add g into t.grad; owned=True hands over a freshly allocated array."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if owned else g.copy()
    else:
        t.grad += g


class GradTape:
    """Topologically ordered record of the ops reaching one output tensor."""

    def __init__(self, order):
        self.order = order  # inputs of every node precede the node itself

    @classmethod
    def trace(cls, root):
        order = []
        seen = set()
        stack = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen or t._node is None:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for parent in t._node.inputs:
                stack.append((parent, False))
        return cls(order)

    def run(self, root):
        # visit each node exactly once, consumers before producers
        root.grad = np.ones_like(root.data)
        for t in reversed(self.order):
            t._node.backward(t.grad)


def backward(loss):
    """Accumulate d(loss)/d(leaf) into .grad of every requires_grad leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        if not loss.requires_grad:
            return  # constant graph: nothing depends on any leaf
        loss.grad = np.ones_like(loss.data)
        return
    GradTape.trace(loss).run(loss)


# ---------------------------------------------------------------------------
# convolution


def conv2d(x, weight, bias, stride=1, padding=(0, 0)):
    """2-D cross-correlation of NHWC input with a (kh, kw, c_in, c_out) kernel."""
    if isinstance(padding, int):
        padding = (padding, padding)
    ph, pw = padding
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    b, h, w, cin = x.shape
    kh, kw, wcin, cout = weight.shape
    if cin != wcin:
        raise ShapeError(f"input has {cin} channels but kernel expects {wcin}")
    if bias.shape != (1, 1, 1, cout):
        raise ShapeError(f"bias shape {bias.shape} does not match {cout} output channels")
    K = backend.kernels()
    oh, ow = K.out_dims(h, w, kh, kw, stride, ph, pw)
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv output would be {oh}x{ow} for input {h}x{w}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}"
        )

    pointwise = kh == 1 and kw == 1 and stride == 1 and ph == 0 and pw == 0
    if pointwise:
        cols = x.data.reshape(b * h * w, cin)  # a view; no gather needed
    else:
        cols = K.im2col(x.data, kh, kw, stride, ph, pw)
    w2 = weight.data.reshape(kh * kw * cin, cout)
    y = cols @ w2
    y += bias.data.reshape(cout)
    out = Tensor(y.reshape(b, oh, ow, cout))

    def bwd(dout):
        # cols stays captured from the forward pass; recomputing the gather
        # would cost ~15% of step time for ~200 MB less live memory
        dy2 = dout.reshape(b * oh * ow, cout)
        if weight.requires_grad:
            _accumulate(weight, (cols.T @ dy2).reshape(weight.shape), owned=True)
        if bias.requires_grad:
            _accumulate(bias, dy2.sum(axis=0).reshape(1, 1, 1, cout), owned=True)
        if x.requires_grad:
            dcols = dy2 @ w2.T
            if pointwise:
                _accumulate(x, dcols.reshape(x.shape), owned=True)
            else:
                _accumulate(
                    x, K.col2im(dcols, b, h, w, cin, kh, kw, stride, ph, pw), owned=True
                )

    return _record("conv2d", (x, weight, bias), out, bwd)


# ---------------------------------------------------------------------------
# pooling and expansion


def channel_avg_pool(x):
    """Mean over the channel axis, keeping a 1-channel map."""
    c = x.shape[3]
    out = Tensor(x.data.mean(axis=3, keepdims=True))

    def bwd(dout):
        _accumulate(x, np.broadcast_to(dout / c, x.shape))

    return _record("channel_avg_pool", (x,), out, bwd)


def channel_max_pool(x):
    """Max over the channel axis; gradient routes to the first argmax."""
    idx = x.data.argmax(axis=3, keepdims=True)
    out = Tensor(np.take_along_axis(x.data, idx, axis=3))

    def bwd(dout):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, idx, dout, axis=3)
        _accumulate(x, dx, owned=True)

    return _record("channel_max_pool", (x,), out, bwd)


def strip_pool_h(x):
    """Column means: average over the height axis to a (1, W, C) strip."""
    h = x.shape[1]
    out = Tensor(x.data.mean(axis=1, keepdims=True))

    def bwd(dout):
        _accumulate(x, np.broadcast_to(dout / h, x.shape))

    return _record("strip_pool_h", (x,), out, bwd)


def strip_pool_v(x):
    """Row means: average over the width axis to an (H, 1, C) strip."""
    w = x.shape[2]
    out = Tensor(x.data.mean(axis=2, keepdims=True))

    def bwd(dout):
        _accumulate(x, np.broadcast_to(dout / w, x.shape))

    return _record("strip_pool_v", (x,), out, bwd)


def expand(strip, target_h, target_w):
    """Copy a pooled strip back to full spatial size along its unit axes."""
    b, h, w, c = strip.shape
    if h != 1 and w != 1:
        raise ShapeError(f"expand needs a strip with a unit spatial dim, got {strip.shape}")
    if h != 1 and h != target_h:
        raise ShapeError(f"strip height {h} does not match target {target_h}")
    if w != 1 and w != target_w:
        raise ShapeError(f"strip width {w} does not match target {target_w}")
    out = Tensor(np.broadcast_to(strip.data, (b, target_h, target_w, c)))

    def bwd(dout):
        g = dout
        if h == 1:
            g = g.sum(axis=1, keepdims=True)
        if w == 1:
            g = g.sum(axis=2, keepdims=True)
        _accumulate(strip, g, owned=True)

    return _record("expand", (strip,), out, bwd)


# ---------------------------------------------------------------------------
# normalization and activations


def instance_norm(x, gamma, beta, eps=1e-5):
    """Per-sample, per-channel standardization over spatial positions.

    Population variance over the H*W positions; gamma and beta are
    (1,1,1,C) learnable affine parameters shared across the batch.
    """
    if eps <= 0:
        raise ValueError(f"instance_norm eps must be > 0, got {eps}")
    c = x.shape[3]
    if gamma.shape != (1, 1, 1, c) or beta.shape != (1, 1, 1, c):
        raise ShapeError(
            f"gamma/beta must be (1,1,1,{c}), got {gamma.shape} and {beta.shape}"
        )
    mu = x.data.mean(axis=(1, 2), keepdims=True)
    var = x.data.var(axis=(1, 2), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = (x.data - mu) * inv_std
    out = Tensor(gamma.data * xhat + beta.data)

    def bwd(dout):
        if gamma.requires_grad:
            _accumulate(gamma, (dout * xhat).sum(axis=(0, 1, 2), keepdims=True), owned=True)
        if beta.requires_grad:
            _accumulate(beta, dout.sum(axis=(0, 1, 2), keepdims=True), owned=True)
        if x.requires_grad:
            dxhat = dout * gamma.data
            m1 = dxhat.mean(axis=(1, 2), keepdims=True)
            m2 = (dxhat * xhat).mean(axis=(1, 2), keepdims=True)
            _accumulate(x, inv_std * (dxhat - m1 - xhat * m2), owned=True)

    return _record("instance_norm", (x, gamma, beta), out, bwd)


def sigmoid(x):
    """Logistic function, clamped into the open interval (0, 1)."""
    d = x.data
    s = np.empty_like(d)
    pos = d >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    s[~pos] = e / (1.0 + e)
    one = d.dtype.type(1)
    zero = d.dtype.type(0)
    np.clip(s, np.nextafter(zero, one), np.nextafter(one, zero), out=s)
    out = Tensor(s)

    def bwd(dout):
        _accumulate(x, dout * s * (1.0 - s), owned=True)

    return _record("sigmoid", (x,), out, bwd)


def relu(x):
    out = Tensor(np.maximum(x.data, 0))

    def bwd(dout):
        _accumulate(x, dout * (x.data > 0), owned=True)

    return _record("relu", (x,), out, bwd)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _broadcast_ok(sa, sb):
    if sa == sb:
        return True
    # the single supported broadcast: an (B,H,W,1) map against (B,H,W,C)
    return sa[:3] == sb[:3] and (sa[3] == 1 or sb[3] == 1)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return g.sum(axis=3, keepdims=True)


def add(a, b):
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")
    out = Tensor(a.data + b.data)

    def bwd(dout):
        _accumulate(a, _unbroadcast(dout, a.shape))
        _accumulate(b, _unbroadcast(dout, b.shape))

    return _record("add", (a, b), out, bwd)


def sub(a, b):
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"cannot subtract shapes {a.shape} and {b.shape}")
    out = Tensor(a.data - b.data)

    def bwd(dout):
        _accumulate(a, _unbroadcast(dout, a.shape))
        _accumulate(b, _unbroadcast(-dout, b.shape))

    return _record("sub", (a, b), out, bwd)


def mul(a, b):
    if not _broadcast_ok(a.shape, b.shape):
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    out = Tensor(a.data * b.data)

    def bwd(dout):
        _accumulate(a, _unbroadcast(dout * b.data, a.shape), owned=True)
        _accumulate(b, _unbroadcast(dout * a.data, b.shape), owned=True)

    return _record("mul", (a, b), out, bwd)


def scale(x, const):
    const = float(const)
    out = Tensor(x.data * x.dtype.type(const))

    def bwd(dout):
        _accumulate(x, dout * x.dtype.type(const), owned=True)

    return _record("scale", (x,), out, bwd)


# ---------------------------------------------------------------------------
# channel concat / split


def concat_channels(tensors):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    lead = tensors[0].shape[:3]
    for t in tensors[1:]:
        if t.shape[:3] != lead:
            raise ShapeError(
                f"concat_channels spatial/batch mismatch: {t.shape} vs {tensors[0].shape}"
            )
    out = Tensor(np.concatenate([t.data for t in tensors], axis=3))
    offsets = np.cumsum([0] + [t.shape[3] for t in tensors])

    def bwd(dout):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            _accumulate(t, np.ascontiguousarray(dout[:, :, :, lo:hi]), owned=True)

    return _record("concat_channels", tuple(tensors), out, bwd)


def narrow_channels(x, start, length):
    """Slice a contiguous channel range [start, start+length)."""
    c = x.shape[3]
    if not (0 <= start and length > 0 and start + length <= c):
        raise ShapeError(f"bad channel slice [{start}, {start + length}) of {c}")
    out = Tensor(np.ascontiguousarray(x.data[:, :, :, start:start + length]))

    def bwd(dout):
        dx = np.zeros_like(x.data)
        dx[:, :, :, start:start + length] = dout
        _accumulate(x, dx, owned=True)

    return _record("narrow_channels", (x,), out, bwd)


def split_channels(x, c1):
    """Split along channels at c1; inverse of concat_channels at the boundary."""
    c = x.shape[3]
    if not 0 < c1 < c:
        raise ShapeError(f"split boundary must satisfy 0 < c1 < {c}, got {c1}")
    return narrow_channels(x, 0, c1), narrow_channels(x, c1, c - c1)


# ---------------------------------------------------------------------------
# resampling and reductions


def upsample_nearest2x(x):
    """Nearest-neighbour 2x spatial upsampling."""
    out = Tensor(x.data.repeat(2, axis=1).repeat(2, axis=2))
    b, h, w, c = x.shape

    def bwd(dout):
        _accumulate(x, dout.reshape(b, h, 2, w, 2, c).sum(axis=(2, 4)), owned=True)

    return _record("upsample_nearest2x", (x,), out, bwd)


def mean_all(x):
    """Mean over every element, as a scalar tensor."""
    n = x.data.size
    out = Tensor(np.full((1, 1, 1, 1), x.data.mean(), dtype=x.dtype))

    def bwd(dout):
        _accumulate(x, np.broadcast_to(dout / n, x.shape).astype(x.dtype, copy=False))

    return _record("mean_all", (x,), out, bwd)


def sum_all(x):
    out = Tensor(np.full((1, 1, 1, 1), x.data.sum(), dtype=x.dtype))

    def bwd(dout):
        _accumulate(x, np.broadcast_to(dout, x.shape).astype(x.dtype, copy=False))

    return _record("sum_all", (x,), out, bwd)


def clamp01(x):
    """Inference-only clamp to [0, 1]; never recorded on the tape."""
    return Tensor(np.clip(x.data, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Fourier transform


@dataclass
class ComplexGrid:
    """Complex spectrum of a rank-4 tensor, stored as separate re/im buffers."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ShapeError(
                f"re/im shapes differ: {self.re.shape} vs {self.im.shape}"
            )

    @property
    def shape(self):
        return self.re.shape

    def to_complex(self):
        return self.re + 1j * self.im


def data_of(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def fft2d(x):
    """Unnormalized forward 2-D DFT over the H, W plane per sample/channel."""
    z = np.fft.fft2(data_of(x), axes=(1, 2))
    return ComplexGrid(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag))


def ifft2d(grid):
    """Inverse 2-D DFT; ifft2d(fft2d(x)).re reproduces x."""
    z = np.fft.ifft2(grid.to_complex(), axes=(1, 2))
    return ComplexGrid(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag))
