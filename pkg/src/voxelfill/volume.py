"""Volume and label-mask types, intensity normalization, and VOL1 file I/O.

Arrays are indexed ``[x, y, z]``. On disk the payload is written x-fastest,
which is Fortran order for an ``(nx, ny, nz)`` array.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateNormalizer,
    DimMismatch,
    EmptyMask,
    FormatError,
    InvalidVolume,
    MaskOverlap,
    RangeMismatch,
    TruncatedFile,
)

RAW, UNIT, SIGNED = "raw", "unit", "signed"
RANGE_TAGS = (RAW, UNIT, SIGNED)

BACKGROUND, HEALTHY, UNHEALTHY = 0, 1, 2

VOL_MAGIC = b"VOL1"
DTYPE_F32 = 1
DTYPE_U8 = 2
_HEADER = struct.Struct("<4sB3xIII")


@dataclass(frozen=True, eq=False)
class Volume:
    """Dense 3D grid of float64 voxels with a value-range annotation."""

    voxels: np.ndarray
    range_tag: str = RAW
    spacing: tuple = field(default=(1.0, 1.0, 1.0))

    def __post_init__(self):
        arr = np.array(self.voxels, dtype=np.float64)
        if arr.ndim != 3 or 0 in arr.shape:
            raise InvalidVolume(f"expected a non-empty 3D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidVolume("volume contains non-finite voxels")
        if self.range_tag not in RANGE_TAGS:
            raise InvalidVolume(f"unknown range tag {self.range_tag!r}")
        if self.range_tag == UNIT and (arr.min() < 0.0 or arr.max() > 1.0):
            raise InvalidVolume("unit-tagged volume has voxels outside [0, 1]")
        if self.range_tag == SIGNED and (arr.min() < -1.0 or arr.max() > 1.0):
            raise InvalidVolume("signed-tagged volume has voxels outside [-1, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "voxels", arr)

    @property
    def dims(self) -> tuple:
        return tuple(self.voxels.shape)

    def with_voxels(self, voxels, range_tag=None) -> "Volume":
        return Volume(voxels, self.range_tag if range_tag is None else range_tag, self.spacing)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return self.range_tag == other.range_tag and np.array_equal(self.voxels, other.voxels)


@dataclass(frozen=True, eq=False)
class LabelMask:
    """3D grid over {0 background, 1 healthy, 2 unhealthy}."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.labels)
        if arr.ndim != 3 or 0 in arr.shape:
            raise InvalidVolume(f"expected a non-empty 3D grid, got shape {arr.shape}")
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        if arr.size and (arr.min() < 0 or arr.max() > UNHEALTHY or not np.all(arr == np.round(arr))):
            raise InvalidVolume("labels must be in {0, 1, 2}")
        arr = arr.astype(np.uint8)
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    @property
    def dims(self) -> tuple:
        return tuple(self.labels.shape)

    @property
    def healthy(self) -> np.ndarray:
        return self.labels == HEALTHY

    @property
    def unhealthy(self) -> np.ndarray:
        return self.labels == UNHEALTHY

    @property
    def masked(self) -> np.ndarray:
        """Voxels labeled healthy or unhealthy."""
        return self.labels != BACKGROUND

    @classmethod
    def from_bool(cls, region, label: int = HEALTHY) -> "LabelMask":
        return cls(np.where(np.asarray(region, dtype=bool), label, BACKGROUND).astype(np.uint8))

    def __eq__(self, other):
        if not isinstance(other, LabelMask):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)


def _check_dims(a, b):
    if tuple(a.dims) != tuple(b.dims):
        raise DimMismatch(f"dims {a.dims} != {b.dims}")


def combine_masks(healthy: LabelMask, unhealthy: LabelMask) -> LabelMask:
    """Merge a healthy and an unhealthy mask into one combined label grid."""
    _check_dims(healthy, unhealthy)
    h = healthy.masked
    u = unhealthy.masked
    if np.any(h & u):
        raise MaskOverlap("healthy and unhealthy masks overlap")
    labels = np.zeros(healthy.dims, dtype=np.uint8)
    labels[h] = HEALTHY
    labels[u] = UNHEALTHY
    return LabelMask(labels)


def normalize_unit(v: Volume) -> Volume:
    """Divide by the volume maximum; all-zero volumes pass through unchanged."""
    vox = np.asarray(v.voxels, dtype=np.float64)
    if not np.all(np.isfinite(vox)):
        raise InvalidVolume("non-finite input")
    peak = vox.max()
    if peak == 0.0:
        return v.with_voxels(vox, UNIT)
    if peak < 0.0:
        raise InvalidVolume("volume maximum is negative")
    return v.with_voxels(vox / peak, UNIT)


def rescale_signed(v: Volume) -> Volume:
    if v.range_tag != UNIT:
        raise RangeMismatch(f"expected a unit-range volume, got {v.range_tag!r}")
    return v.with_voxels(2.0 * v.voxels - 1.0, SIGNED)


def unscale_signed(v: Volume) -> Volume:
    """Inverse of :func:`rescale_signed`."""
    if v.range_tag != SIGNED:
        raise RangeMismatch(f"expected a signed-range volume, got {v.range_tag!r}")
    return v.with_voxels(np.clip((v.voxels + 1.0) / 2.0, 0.0, 1.0), UNIT)


def normalize_validation(gt: Volume, mask: LabelMask) -> Volume:
    """Scale ``gt`` by its maximum over the healthy and unhealthy voxels.

    Only the masked region is guaranteed to land in [0, 1], so the result
    keeps the raw tag.
    """
    return gt.with_voxels(gt.voxels / validation_scale(gt, mask), RAW)


def validation_scale(gt: Volume, mask: LabelMask) -> float:
    _check_dims(gt, mask)
    region = mask.masked
    if not region.any():
        raise EmptyMask("mask has no healthy or unhealthy voxels")
    peak = float(gt.voxels[region].max())
    if peak <= 0.0:
        raise DegenerateNormalizer(f"masked maximum is {peak}")
    return peak


def void_image(t1n: Volume, mask: LabelMask, fill: float = 0.0) -> Volume:
    _check_dims(t1n, mask)
    out = np.array(t1n.voxels)
    out[mask.masked] = fill
    return t1n.with_voxels(out)


# -- VOL1 files ---------------------------------------------------------------

def _write(path, code: int, dims, payload: bytes):
    nx, ny, nz = (int(d) for d in dims)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(VOL_MAGIC, code, nx, ny, nz))
        fh.write(payload)


def _read(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedFile(f"{path}: header is {len(data)} bytes")
    magic, code, nx, ny, nz = _HEADER.unpack_from(data)
    if magic != VOL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if code == DTYPE_F32:
        dtype = np.dtype("<f4")
    elif code == DTYPE_U8:
        dtype = np.dtype("u1")
    else:
        raise FormatError(f"{path}: unknown dtype code {code}")
    count = nx * ny * nz
    need = count * dtype.itemsize
    payload = data[_HEADER.size:]
    if len(payload) < need:
        raise TruncatedFile(f"{path}: payload has {len(payload)} bytes, header needs {need}")
    if len(payload) > need:
        raise FormatError(f"{path}: {len(payload) - need} trailing bytes")
    arr = np.frombuffer(payload, dtype=dtype, count=count).reshape((nx, ny, nz), order="F")
    return code, arr


def write_vol(path, v: Volume) -> None:
    payload = np.asarray(v.voxels, dtype="<f4").tobytes(order="F")
    _write(path, DTYPE_F32, v.dims, payload)


def read_vol(path, range_tag: str = RAW) -> Volume:
    code, arr = _read(path)
    if code != DTYPE_F32:
        raise FormatError(f"{path}: expected a scalar volume, found dtype code {code}")
    return Volume(arr.astype(np.float64), range_tag)


def write_mask(path, m: LabelMask) -> None:
    _write(path, DTYPE_U8, m.dims, np.asarray(m.labels, dtype=np.uint8).tobytes(order="F"))


def read_mask(path) -> LabelMask:
    code, arr = _read(path)
    if code != DTYPE_U8:
        raise FormatError(f"{path}: expected a label mask, found dtype code {code}")
    if arr.max(initial=0) > UNHEALTHY:
        raise FormatError(f"{path}: label values outside {{0, 1, 2}}")
    return LabelMask(arr)
