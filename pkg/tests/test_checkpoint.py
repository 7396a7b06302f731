"""Checkpoint binary format: round-trips, corruption detection, output identity."""

import numpy as np
import pytest

from tanet.blocks import NetworkConfig, TANetModel
from tanet.checkpoint import (
    CheckpointError,
    load_checkpoint,
    load_model,
    save_checkpoint,
    save_model,
)
from tanet.tensor import Tensor, no_grad


@pytest.fixture
def model():
    m = TANetModel(NetworkConfig(base_channels=4, num_tabs=1, seed=13, variant="Net5"))
    m.tail.weight.data[...] = 0.02  # exercise the whole network, not the identity
    return m


class TestRoundTrip:
    def test_save_load_save_is_byte_identical(self, tmp_path, model):
        p1, p2 = tmp_path / "a.tant", tmp_path / "b.tant"
        save_model(p1, model)
        save_model(p2, load_model(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_config_restored(self, tmp_path, model):
        path = tmp_path / "m.tant"
        save_model(path, model)
        config, params = load_checkpoint(path)
        assert config == model.config
        assert all(arr.dtype == np.float32 for arr in params.values())
        assert set(params) == {name for name, _ in model.named_params()}

    def test_loaded_model_outputs_bitwise_stable(self, tmp_path, model, rng):
        path = tmp_path / "m.tant"
        save_model(path, model)
        x = rng.random((1, 8, 8, 3))
        with no_grad():
            a = load_model(path)(Tensor(x.copy())).data
            b = load_model(path)(Tensor(x.copy())).data
        assert (a == b).all()

    def test_variant_architecture_restored(self, tmp_path):
        src = TANetModel(NetworkConfig(base_channels=4, num_tabs=1, variant="Net1"))
        path = tmp_path / "net1.tant"
        save_model(path, src)
        back = load_model(path)
        assert back.config.variant == "Net1"
        names = [n for n, _ in back.named_params()]
        assert not any("gamma" in n for n in names)


class TestCorruption:
    def test_flipped_byte_detected(self, tmp_path, model):
        path = tmp_path / "m.tant"
        save_model(path, model)
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(path)

    def test_truncation_detected(self, tmp_path, model):
        path = tmp_path / "m.tant"
        save_model(path, model)
        path.write_bytes(path.read_bytes()[:50])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_bad_magic_detected(self, tmp_path, model):
        path = tmp_path / "m.tant"
        save_model(path, model)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        # keep the digest consistent so the magic check itself fires
        import hashlib
        payload = bytes(raw[:-8])
        path.write_bytes(payload + hashlib.blake2b(payload, digest_size=8).digest())
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nope.tant")

    def test_name_mismatch_detected(self, tmp_path, model):
        path = tmp_path / "m.tant"
        params = [(f"renamed.{i}", t) for i, (_, t) in enumerate(model.named_params())]
        save_checkpoint(path, model.config, params)
        with pytest.raises(CheckpointError, match="parameter names"):
            load_model(path)
