"""Triplet-attention restoration network.

The network is an encoder-decoder: a head convolution, two downscaling
feature embedding layers (stride-2 conv doubling channels + three
residual blocks), a stack of triplet attention blocks (TAB), two
upscaling embedding layers (nearest 2x + conv halving channels + three
residual blocks), and a zero-initialized tail convolution feeding a
global residual connection.  With the default initialization the whole
model is exactly the identity map.

Each TAB runs three parallel branches over a shared entry convolution:

* a local gate built from channel-wise average/max pooling (LPA),
* a global gate built from horizontal/vertical strip pooling with 1x3 /
  3x1 fusion convolutions and copy expansion (GSA),
* a plain convolution stack,

fuses them with a 3C->C convolution and a residual, then applies a
distribution block (GDA) that instance-normalizes half the channels and
passes the other half through a convolution, with two further residual
connections.

Ablation variants Net1..Net5 swap the attention modules for strictly
smaller stand-ins (identity for LPA, 1x1 conv for GSA, 3x3 conv for GDA)
so that parameter counts grow monotonically as components are restored;
Net5 shares Net4's architecture and differs only in enabling the
frequency-domain loss term.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from tanet import backend
from tanet import tensor as T
from tanet.tensor import Tensor

VARIANTS = ("Net1", "Net2", "Net3", "Net4", "Net5")

# variant -> (use_lpa, use_gsa, use_gda, fft_loss_enabled)
_VARIANT_FLAGS = {
    "Net1": (False, False, False, False),
    "Net2": (True, False, False, False),
    "Net3": (True, True, False, False),
    "Net4": (True, True, True, False),
    "Net5": (True, True, True, True),
}


def variant_flags(variant):
    if variant not in _VARIANT_FLAGS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    return _VARIANT_FLAGS[variant]


@dataclass
class NetworkConfig:
    """Architecture hyperparameters; the parameter count is a pure function of these."""

    base_channels: int = 16
    num_tabs: int = 2
    downscale_stages: int = 2
    in_channels: int = 3
    out_channels: int = 3
    use_global_residual: bool = True
    seed: int = 0
    variant: str = "Net5"

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.num_tabs < 1:
            raise ValueError(f"num_tabs must be >= 1, got {self.num_tabs}")
        if self.downscale_stages != 2:
            raise ValueError("the architecture is fixed at 2 downscale stages")
        variant_flags(self.variant)

    @property
    def tab_channels(self):
        return self.base_channels * 4


def desk_config(**overrides):
    """The small CPU-budget configuration used by the end-to-end tests."""
    return NetworkConfig(**{"base_channels": 16, "num_tabs": 2, **overrides})


def paper_scale_config(**overrides):
    """Configuration sized to land near 9M parameters.

    Depth and width are otherwise unconstrained; this pairing was picked
    by a small search over (base_channels, num_tabs).
    """
    return NetworkConfig(**{"base_channels": 40, "num_tabs": 2, **overrides})


class Module:
    """Minimal parameter container with recursive named_params()."""

    def named_params(self, prefix=""):
        for attr, value in self.__dict__.items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_params(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{name}.{i}.")

    def params(self):
        return [t for _, t in self.named_params()]

    def zero_grad(self):
        for _, t in self.named_params():
            t.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param_count(module):
    return sum(t.data.size for _, t in module.named_params())


class Conv2d(Module):
    """Convolution layer: fan-in-scaled uniform weights, zero biases."""

    def __init__(self, c_in, c_out, kh, kw, rng, stride=1, padding=(0, 0), zero_init=False):
        dt = backend.default_dtype()
        if zero_init:
            w = np.zeros((kh, kw, c_in, c_out), dtype=dt)
        else:
            limit = 1.0 / np.sqrt(kh * kw * c_in)
            w = rng.uniform(-limit, limit, size=(kh, kw, c_in, c_out)).astype(dt)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros((1, 1, 1, c_out), dtype=dt), requires_grad=True)
        self.stride = stride
        self.padding = padding if isinstance(padding, tuple) else (padding, padding)

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


def _conv3x3(c_in, c_out, rng, stride=1, zero_init=False):
    return Conv2d(c_in, c_out, 3, 3, rng, stride=stride, padding=(1, 1), zero_init=zero_init)


class LPAModule(Module):
    """Local pixel-wise gate from channel-axis average and max pooling."""

    def __init__(self, rng):
        self.fuse = Conv2d(2, 1, 7, 7, rng, padding=(3, 3))

    def forward(self, f):
        pooled = T.concat_channels([T.channel_avg_pool(f), T.channel_max_pool(f)])
        gate = T.sigmoid(self.fuse(pooled))
        return T.mul(gate, f)


class GSAModule(Module):
    """Global strip-wise gate from horizontal/vertical strip pooling."""

    def __init__(self, channels, rng):
        self.h_conv = Conv2d(channels, channels, 1, 3, rng, padding=(0, 1))
        self.v_conv = Conv2d(channels, channels, 3, 1, rng, padding=(1, 0))
        self.fuse = Conv2d(channels, channels, 1, 1, rng)

    def forward(self, f):
        _, h, w, _ = f.shape
        eh = T.expand(self.h_conv(T.strip_pool_h(f)), h, w)
        ev = T.expand(self.v_conv(T.strip_pool_v(f)), h, w)
        gate = T.sigmoid(self.fuse(eh + ev))
        return T.mul(gate, f)


class GDAModule(Module):
    """Distribution block: half the channels instance-normalized, half conv-bypassed."""

    IN_EPS = 1e-5  # stabilizes zero-variance channels

    def __init__(self, channels, rng):
        if channels % 2 != 0:
            raise ValueError(f"GDA needs an even channel count, got {channels}")
        half = channels // 2
        dt = backend.default_dtype()
        self.pre = _conv3x3(channels, channels, rng)
        self.gamma = Tensor(np.ones((1, 1, 1, half), dtype=dt), requires_grad=True)
        self.beta = Tensor(np.zeros((1, 1, 1, half), dtype=dt), requires_grad=True)
        self.bypass = _conv3x3(half, half, rng)
        self.post = _conv3x3(channels, channels, rng)

    def forward(self, f):
        half = f.shape[3] // 2
        f1, f2 = T.split_channels(self.pre(f), half)
        normed = T.instance_norm(f1, self.gamma, self.beta, self.IN_EPS)
        fused = self.post(T.concat_channels([normed, self.bypass(f2)]))
        return fused + f


class ResidualBlock(Module):
    def __init__(self, channels, rng):
        self.conv1 = _conv3x3(channels, channels, rng)
        self.conv2 = _conv3x3(channels, channels, rng)

    def forward(self, x):
        return x + self.conv2(T.relu(self.conv1(x)))


class FELDown(Module):
    """Downscaling feature embedding: stride-2 conv doubling channels + 3 residual blocks."""

    def __init__(self, c_in, rng):
        c_out = c_in * 2
        self.conv = _conv3x3(c_in, c_out, rng, stride=2)
        self.res = [ResidualBlock(c_out, rng) for _ in range(3)]

    def forward(self, x):
        x = self.conv(x)
        for block in self.res:
            x = block(x)
        return x


class FELUp(Module):
    """Upscaling feature embedding: nearest 2x + conv halving channels + 3 residual blocks."""

    def __init__(self, c_in, rng):
        c_out = c_in // 2
        self.conv = _conv3x3(c_in, c_out, rng)
        self.res = [ResidualBlock(c_out, rng) for _ in range(3)]

    def forward(self, x):
        x = self.conv(T.upsample_nearest2x(x))
        for block in self.res:
            x = block(x)
        return x


class TABlock(Module):
    """Triplet attention block; preserves its input shape."""

    def __init__(self, channels, rng, use_lpa=True, use_gsa=True, use_gda=True):
        c = channels
        self.entry = _conv3x3(c, c, rng)
        self.bl_conv1 = _conv3x3(c, c, rng)
        self.bl_conv2 = _conv3x3(c, c, rng)
        # LPA stand-in is the identity: any conv of matched width would
        # outweigh the gate itself and break ablation monotonicity
        self.lpa = LPAModule(rng) if use_lpa else None
        self.bg_conv1 = _conv3x3(c, c, rng)
        self.bg_conv2 = _conv3x3(c, c, rng)
        self.gsa = GSAModule(c, rng) if use_gsa else Conv2d(c, c, 1, 1, rng)
        self.bc_conv1 = _conv3x3(c, c, rng)
        self.bc_conv2 = _conv3x3(c, c, rng)
        self.bc_conv3 = _conv3x3(c, c, rng)
        self.fusion = _conv3x3(3 * c, c, rng)
        self.residual_conv = _conv3x3(c, c, rng)
        self.gda = GDAModule(c, rng) if use_gda else _conv3x3(c, c, rng)

    def forward(self, f):
        e = self.entry(f)
        local = self.bl_conv2(T.relu(self.bl_conv1(e)))
        if self.lpa is not None:
            local = self.lpa(local)
        striped = self.gsa(self.bg_conv2(T.relu(self.bg_conv1(e))))
        plain = self.bc_conv3(T.relu(self.bc_conv2(T.relu(self.bc_conv1(e)))))
        fused = self.fusion(T.concat_channels([local, striped, plain])) + f
        return self.gda(fused) + self.residual_conv(f) + fused


class TANetModel(Module):
    """Encoder-decoder with TAB stack and global residual."""

    def __init__(self, config=None):
        config = config or NetworkConfig()
        rng = np.random.default_rng(config.seed)
        base = config.base_channels
        use_lpa, use_gsa, use_gda, _ = variant_flags(config.variant)

        self.head = _conv3x3(config.in_channels, base, rng)
        self.down1 = FELDown(base, rng)
        self.down2 = FELDown(base * 2, rng)
        self.tabs = [
            TABlock(config.tab_channels, rng, use_lpa, use_gsa, use_gda)
            for _ in range(config.num_tabs)
        ]
        self.up1 = FELUp(config.tab_channels, rng)
        self.up2 = FELUp(base * 2, rng)
        self.tail = _conv3x3(base, config.out_channels, rng, zero_init=True)
        self.config = config

    def forward(self, image, clamp=False):
        _, h, w, c = image.shape
        if c != self.config.in_channels:
            raise T.ShapeError(
                f"expected {self.config.in_channels}-channel input, got {c}"
            )
        if h % 4 != 0 or w % 4 != 0:
            raise T.ShapeError(
                f"input {h}x{w} must have spatial dims divisible by 4; "
                "pad (e.g. by reflection) and crop back"
            )
        e0 = self.head(image)
        e1 = self.down1(e0)
        e2 = self.down2(e1)
        t = e2
        for tab in self.tabs:
            t = tab(t)
        u1 = self.up1(t + e2)
        u2 = self.up2(u1 + e1)
        out = self.tail(u2)
        if self.config.use_global_residual:
            out = image + out
        if clamp:
            out = T.clamp01(out)
        return out


def build_ablation_variant(config, variant):
    """Model for one ablation row; Net5 shares Net4's architecture."""
    variant_flags(variant)
    return TANetModel(dataclasses.replace(config, variant=variant))
