"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic   4 bytes  "TANT"
    version u32      currently 1
    config  u32 base_channels, u32 num_tabs, u32 downscale_stages,
            u32 in_channels, u32 out_channels, u8 use_global_residual,
            i64 seed, u16 variant length + UTF-8 variant
    params  u32 count, then per record:
            u16 name length, UTF-8 name, u8 rank, u32 dims[rank],
            float32 payload (row-major)
    digest  8 bytes  BLAKE2b-64 of every preceding byte

Parameters are stored as float32 regardless of the training precision;
save -> load -> save therefore reproduces the file byte for byte.
"""

import hashlib
import io
import struct
from pathlib import Path

import numpy as np

from tanet import backend

MAGIC = b"TANT"
VERSION = 1


class CheckpointError(Exception):
    """Malformed, truncated, or corrupt checkpoint file."""


def _digest(data):
    return hashlib.blake2b(data, digest_size=8).digest()


def save_checkpoint(path, config, named_params):
    """Write a checkpoint for `config` and (name, array) parameter pairs."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack(
        "<IIIII", config.base_channels, config.num_tabs, config.downscale_stages,
        config.in_channels, config.out_channels,
    ))
    buf.write(struct.pack("<Bq", int(config.use_global_residual), config.seed))
    variant = config.variant.encode()
    buf.write(struct.pack("<H", len(variant)))
    buf.write(variant)

    records = [(name, np.asarray(p.data if hasattr(p, "data") else p)) for name, p in named_params]
    buf.write(struct.pack("<I", len(records)))
    for name, arr in records:
        encoded = name.encode()
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    payload = buf.getvalue()
    Path(path).write_bytes(payload + _digest(payload))


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Read a checkpoint; returns (NetworkConfig, {name: float32 ndarray})."""
    from tanet.blocks import NetworkConfig

    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 8:
        raise CheckpointError(f"{path}: too short to be a checkpoint")
    payload, digest = raw[:-8], raw[-8:]
    if digest != _digest(payload):
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")

    r = _Reader(payload, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    base, tabs, stages, cin, cout = r.unpack("<IIIII")
    flag, seed = r.unpack("<Bq")
    (vlen,) = r.unpack("<H")
    variant = r.take(vlen).decode()
    config = NetworkConfig(
        base_channels=base, num_tabs=tabs, downscale_stages=stages,
        in_channels=cin, out_channels=cout, use_global_residual=bool(flag),
        seed=seed, variant=variant,
    )

    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims)
        params[name] = arr
    if r.pos != len(payload):
        raise CheckpointError(f"{path}: trailing bytes after parameter records")
    return config, params


def save_model(path, model):
    save_checkpoint(path, model.config, model.named_params())


def load_model(path):
    """Rebuild the model a checkpoint was saved from."""
    from tanet.blocks import TANetModel

    config, params = load_checkpoint(path)
    model = TANetModel(config)
    expected = dict(model.named_params())
    missing = expected.keys() - params.keys()
    extra = params.keys() - expected.keys()
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter names do not match the architecture "
            f"(missing {sorted(missing)[:3]}..., extra {sorted(extra)[:3]}...)"
            if len(missing) + len(extra) > 6 else
            f"{path}: parameter names do not match (missing {sorted(missing)}, extra {sorted(extra)})"
        )
    dt = backend.default_dtype()
    for name, tensor in expected.items():
        arr = params[name]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"{path}: {name} has shape {arr.shape}, expected {tuple(tensor.shape)}"
            )
        tensor.data = np.ascontiguousarray(arr, dtype=dt)
    return model
