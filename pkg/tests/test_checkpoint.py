import struct

import numpy as np
import pytest

from gradw import checkpoint
from gradw.autodiff import Tensor
from gradw.checkpoint import MAGIC, CheckpointError
from gradw.enhance import UNet

from conftest import TINY_SPK, TINY_UNET


def test_layout(tmp_path):
    path = checkpoint.save(tmp_path / "a.gwckpt", {"w": np.arange(6.0).reshape(2, 3)}, {"seed": 3})
    buf = path.read_bytes()
    assert buf[:8] == MAGIC
    (n,) = struct.unpack("<I", buf[8:12])
    header = buf[12:12 + n].decode()
    assert "tensor.w=2x3;0" in header and "seed=3" in header
    assert np.array_equal(np.frombuffer(buf[12 + n:], "<f4"), np.arange(6.0, dtype=np.float32))


def test_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"NOTACKPT" + bytes(8))
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint.load(tmp_path / "x")


def test_speaker_round_trip(tmp_path, tiny_speaker, feature_pair):
    checkpoint.save_model(tmp_path / "s.gwckpt", tiny_speaker, "speaker", 1, {"frozen": True})
    back = checkpoint.load_speaker(tmp_path / "s.gwckpt")
    assert back.frozen and back.config == TINY_SPK
    x = feature_pair[0][:1, None]
    assert np.array_equal(back(Tensor(x)).logits.data, tiny_speaker(Tensor(x)).logits.data)


def test_unet_round_trip_bytes(tmp_path, tiny_unet):
    p1 = checkpoint.save_model(tmp_path / "u1.gwckpt", tiny_unet, "unet", 2)
    back = checkpoint.load_unet(p1)
    assert back.config == TINY_UNET
    p2 = checkpoint.save_model(tmp_path / "u2.gwckpt", back, "unet", 2)
    assert p1.read_bytes() == p2.read_bytes()


def test_kind_checked(tmp_path, tiny_unet):
    checkpoint.save_model(tmp_path / "u.gwckpt", tiny_unet, "unet", 0)
    with pytest.raises(CheckpointError):
        checkpoint.load_speaker(tmp_path / "u.gwckpt")


def test_state_mismatch_rejected(tmp_path, tiny_unet):
    state = tiny_unet.state()
    state.pop(next(iter(state)))
    with pytest.raises((KeyError, ValueError)):
        UNet(TINY_UNET).load_state(state)
