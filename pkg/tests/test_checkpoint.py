import struct

import numpy as np
import pytest

from voxelfill.checkpoint import load_checkpoint, save_checkpoint
from voxelfill.errors import CorruptCheckpoint, FormatError
from voxelfill.training import Checkpoint, TrainConfig
from voxelfill.unet import build_unet

CFG = TrainConfig(base_channels=2, levels=2, patch_dims=(16, 16, 16))


def random_params(cfg, seed=0):
    rng = np.random.default_rng(seed)
    return {k: rng.standard_normal(p.data.shape).astype(np.float32).astype(np.float64)
            for k, p in build_unet(cfg.unet_config(), 0).items()}


def test_roundtrip_bit_exact(tmp_path):
    ckpt = Checkpoint(CFG, 17, 0.123456789, random_params(CFG))
    path = tmp_path / "a.unck"
    save_checkpoint(path, ckpt)
    back = load_checkpoint(path)
    assert back.config == CFG and back.epoch == 17 and back.val_loss == 0.123456789
    assert list(back.params) == list(ckpt.params)
    for k in ckpt.params:
        assert back.params[k].tobytes() == ckpt.params[k].tobytes()
    first = path.read_bytes()
    save_checkpoint(path, back)
    assert path.read_bytes() == first


def test_header_layout(tmp_path):
    path = tmp_path / "a.unck"
    save_checkpoint(path, Checkpoint(CFG, 3, 1.5, random_params(CFG)))
    raw = path.read_bytes()
    assert raw[:4] == b"UNCK"
    version, cfg_len = struct.unpack_from("<II", raw, 4)
    assert version == 1
    epoch, loss, count = struct.unpack_from("<IdI", raw, 12 + cfg_len)
    assert (epoch, loss, count) == (3, 1.5, len(random_params(CFG)))


def test_truncated(tmp_path):
    path = tmp_path / "a.unck"
    save_checkpoint(path, Checkpoint(CFG, 1, 0.5, random_params(CFG)))
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "a.unck"
    path.write_bytes(b"NOPE" + bytes(32))
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_config_mismatch(tmp_path):
    path = tmp_path / "a.unck"
    save_checkpoint(path, Checkpoint(CFG, 1, 0.5, random_params(CFG)))
    other = TrainConfig(base_channels=4, levels=2, patch_dims=(16, 16, 16))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path, expected=other)
