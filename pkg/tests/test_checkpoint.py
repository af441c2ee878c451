import numpy as np
import pytest

from softlid.checkpoint import (
    Checkpoint,
    CheckpointError,
    hash_arrays,
    load_checkpoint,
    save_checkpoint,
)


def sample_checkpoint():
    rng = np.random.default_rng(0)
    tensors = {
        "enc.w": rng.normal(size=(4, 3)).astype(np.float32).astype(np.float64),
        "enc.b": rng.normal(size=(4,)).astype(np.float32).astype(np.float64),
    }
    meta = {"kind": "transducer", "seed": 1, "steps": 10}
    return Checkpoint(tensors=tensors, meta=meta)


class TestRoundtrip:
    def test_tensors_byte_identical(self, tmp_path):
        ckpt = sample_checkpoint()
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, ckpt)
        loaded = load_checkpoint(path)
        assert list(loaded.tensors) == list(ckpt.tensors)
        for name in ckpt.tensors:
            assert loaded.tensors[name].tobytes() == ckpt.tensors[name].tobytes()
        assert loaded.meta["seed"] == 1 and loaded.meta["steps"] == 10

    def test_save_is_deterministic(self, tmp_path):
        ckpt = sample_checkpoint()
        save_checkpoint(tmp_path / "a.ckpt", ckpt)
        save_checkpoint(tmp_path / "b.ckpt", ckpt)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_double_roundtrip_identity_at_f32(self, tmp_path):
        # f64 values get narrowed once; after that save/load is lossless
        rng = np.random.default_rng(1)
        ckpt = Checkpoint(tensors={"w": rng.normal(size=(5, 5))}, meta={})
        save_checkpoint(tmp_path / "a.ckpt", ckpt)
        first = load_checkpoint(tmp_path / "a.ckpt")
        save_checkpoint(tmp_path / "b.ckpt", first)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_param_hash_stable_across_roundtrip(self, tmp_path):
        ckpt = sample_checkpoint()
        save_checkpoint(tmp_path / "m.ckpt", ckpt)
        assert load_checkpoint(tmp_path / "m.ckpt").param_hash == ckpt.param_hash


class TestCorruption:
    def test_flipped_payload_byte_fails_hash(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, sample_checkpoint())
        raw = bytearray(path.read_bytes())
        raw[-40] ^= 0x01  # inside the last tensor payload
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="hash"):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"XXXX" + b"\x00" * 60)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, sample_checkpoint())
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncation(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, sample_checkpoint())
        clipped = tmp_path / "c.ckpt"
        clipped.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(CheckpointError):
            load_checkpoint(clipped)


def test_hash_arrays_orders_and_narrows():
    a = {"x": np.ones((2, 2)), "y": np.zeros((2,))}
    b = {"y": np.zeros((2,)), "x": np.ones((2, 2))}
    assert hash_arrays(a) != hash_arrays(b)  # order matters
    assert hash_arrays(a) == hash_arrays({"x": np.ones((2, 2), dtype=np.float32), "y": np.zeros((2,))})
