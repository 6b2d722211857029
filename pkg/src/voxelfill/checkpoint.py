"""UNCK checkpoint files.

Layout (little-endian): b"UNCK", u32 version, u32 config length + config
text, u32 epoch, f64 validation loss, u32 tensor count, then per tensor
u32 name length, name, u32 rank, u32 dims, float32 payload.
"""
from __future__ import annotations

import math
import struct

import numpy as np

from .errors import ConfigError, CorruptCheckpoint, FormatError, TruncatedFile
from .training import Checkpoint, TrainConfig
from .unet import param_shapes

MAGIC = b"UNCK"
VERSION = 1


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    if not math.isfinite(ckpt.val_loss):
        raise ValueError("validation loss must be finite")
    config = ckpt.config.to_text().encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(config)), config,
             struct.pack("<IdI", ckpt.epoch, ckpt.val_loss, len(ckpt.params))]
    for name, value in ckpt.params.items():
        arr = np.asarray(getattr(value, "data", value))
        encoded = name.encode("utf-8")
        parts.append(struct.pack(f"<I{len(encoded)}sI", len(encoded), encoded, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"checkpoint ends at byte {len(self.data)}, needed {self.pos + n}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected: TrainConfig | None = None) -> Checkpoint:
    """Read a checkpoint and check its tensors against the architecture.

    The architecture comes from ``expected`` when given, else from the
    config stored in the file.
    """
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    version, cfg_len = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    try:
        stored = TrainConfig.from_text(r.take(cfg_len).decode("utf-8"))
    except (UnicodeDecodeError, ConfigError) as exc:
        raise FormatError(f"{path}: unreadable config block ({exc})") from None
    epoch, val_loss, count = r.unpack("<IdI")
    params = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}I")
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).astype(np.float64)
        params[name] = arr
    if r.pos != len(r.data):
        raise FormatError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    config = expected if expected is not None else stored
    shapes = param_shapes(config.unet_config())
    if len(shapes) != len(params):
        raise CorruptCheckpoint(f"{path}: {len(params)} tensors, config expects {len(shapes)}")
    for (name, shape), (got_name, arr) in zip(shapes, params.items()):
        if name != got_name or tuple(shape) != arr.shape:
            raise CorruptCheckpoint(f"{path}: tensor {got_name} {arr.shape} != {name} {tuple(shape)}")
    if not math.isfinite(val_loss) or not all(np.all(np.isfinite(a)) for a in params.values()):
        raise CorruptCheckpoint(f"{path}: non-finite values")
    return Checkpoint(stored, epoch, val_loss, params)
