import struct
import sys
from pathlib import Path

import numpy as np
import pytest

from fpan.checkpoint import CheckpointError, decode, encode, load_checkpoint, model_tensors, save_checkpoint
from fpan.model import FPAN, ModelConfig, preset
from fpan.tensor import Tensor, sum_all
from fpan.training import adam_step

DATA = Path(__file__).parent / "data"
GOLDEN = DATA / "golden_tiny.ckpt"

sys.path.insert(0, str(DATA))
from make_golden import golden_model  # noqa: E402


def random_model(cfg=None, seed=0):
    model = FPAN(cfg or preset("tiny"), seed=seed)
    rng = np.random.default_rng(seed)
    for _, p in model.store.items():
        p.data = rng.normal(0, 0.2, p.shape).astype(np.float32)
    return model


class TestRoundTrip:
    @pytest.mark.parametrize("ablation", ["P0", "P1", "P2", "P3", "P4"])
    def test_bitwise(self, tmp_path, ablation):
        cfg = ModelConfig(scale=3, channels=8, num_blocks=2, stage_depth=2, reduction=2).with_ablation(ablation)
        model = random_model(cfg)
        save_checkpoint(model, tmp_path / "m.ckpt")
        back = load_checkpoint(tmp_path / "m.ckpt")
        assert back.cfg == model.cfg
        assert back.store.names() == model.store.names()
        for name, p in model.store.items():
            assert back.store[name].data.tobytes() == p.data.tobytes()

    def test_forward_invariant(self, tmp_path, rng):
        model = random_model()
        x = rng.random((1, 3, 9, 7)).astype(np.float32)
        before = model.predict(x[0])
        save_checkpoint(model, tmp_path / "m.ckpt")
        after = load_checkpoint(tmp_path / "m.ckpt").predict(x[0])
        assert before.tobytes() == after.tobytes()

    def test_optimizer_state(self, tmp_path, rng):
        model = random_model()
        sum_all(model(Tensor(rng.random((1, 3, 8, 8))))).backward()
        adam_step(model.store, 1e-3, 1)
        save_checkpoint(model, tmp_path / "m.ckpt", with_optimizer=True)
        back = load_checkpoint(tmp_path / "m.ckpt")
        assert back.store.step == 1
        for name in model.store:
            assert back.store.m[name].tobytes() == model.store.m[name].tobytes()
            assert back.store.v[name].tobytes() == model.store.v[name].tobytes()

    def test_no_tmp_left_behind(self, tmp_path):
        save_checkpoint(random_model(), tmp_path / "m.ckpt")
        assert [p.name for p in tmp_path.iterdir()] == ["m.ckpt"]


class TestCorruption:
    def data(self):
        model = random_model()
        return encode(model.cfg, model_tensors(model))

    def test_flipped_magic(self):
        data = bytearray(self.data())
        data[0] ^= 0xFF
        with pytest.raises(CheckpointError, match="magic"):
            decode(bytes(data))

    def test_version(self):
        data = bytearray(self.data())
        data[4:8] = struct.pack("<I", 2)
        with pytest.raises(CheckpointError, match="version 2.*offset 4"):
            decode(bytes(data))

    @pytest.mark.parametrize("cut", [3, 10, 60, 1000, -1])
    def test_truncation(self, cut):
        data = self.data()
        with pytest.raises(CheckpointError, match=r"byte offset \d+"):
            decode(data[:cut])

    def test_trailing_bytes(self):
        with pytest.raises(CheckpointError, match="trailing"):
            decode(self.data() + b"\0")

    def test_load_names_path(self, tmp_path):
        (tmp_path / "bad.ckpt").write_bytes(b"NOPE")
        with pytest.raises(CheckpointError, match="bad.ckpt"):
            load_checkpoint(tmp_path / "bad.ckpt")

    def test_missing_tensor(self, tmp_path):
        model = random_model()
        tensors = model_tensors(model)
        tensors.pop("head.bias")
        (tmp_path / "m.ckpt").write_bytes(encode(model.cfg, tensors))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "m.ckpt")


class TestGolden:
    def test_header_bytes(self):
        data = GOLDEN.read_bytes()
        header = b"FPAN" + struct.pack("<I", 1)
        header += struct.pack("<5I", 2, 8, 1, 2, 2)  # scale, channels, blocks, depth, reduction
        header += struct.pack("<4I", 3, 1, 2, 4)  # pyramid scales
        header += bytes([1, 1, 2])  # skips on, attention = pnlb
        assert data[: len(header)] == header
        (count,) = struct.unpack_from("<I", data, len(header))
        assert count == len(FPAN(preset("tiny")).store)
        (nlen,) = struct.unpack_from("<H", data, len(header) + 4)
        assert data[len(header) + 6 : len(header) + 6 + nlen] == b"head.weight"

    def test_values(self):
        model = load_checkpoint(GOLDEN)
        assert model.cfg == preset("tiny")
        flat = np.concatenate([p.data.reshape(-1) for p in model.store.values()])
        idx = np.arange(flat.size)
        np.testing.assert_array_equal(flat, ((idx % 97) / 97.0 - 0.5).astype(np.float32))

    def test_reencode_matches_fixture(self):
        model = golden_model()
        assert encode(model.cfg, model_tensors(model)) == GOLDEN.read_bytes()
