"""Brain-covering patch crop, training-pair assembly and stitching."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BrainTooLarge, ConfigError, DimMismatch
from .tensor import Tensor
from .volume import (
    LabelMask,
    Volume,
    combine_masks,
    normalize_unit,
    rescale_signed,
    void_image,
)

FULL_PATCH = (128, 128, 96)


@dataclass(frozen=True)
class PatchSpec:
    dims: tuple
    offset: tuple

    @property
    def slices(self) -> tuple:
        return tuple(slice(o, o + d) for o, d in zip(self.offset, self.dims))


def _support_box(arr: np.ndarray):
    nz = np.argwhere(arr != 0)
    if len(nz) == 0:
        return None
    return nz.min(axis=0), nz.max(axis=0) + 1


def place_patch(volume_dims, support_box, patch_dims) -> PatchSpec:
    """Centre the patch on the support box, rounding toward lower indices, then clamp."""
    volume_dims = tuple(int(d) for d in volume_dims)
    patch_dims = tuple(int(d) for d in patch_dims)
    if len(patch_dims) != 3 or any(p < 1 for p in patch_dims):
        raise ConfigError(f"invalid patch dims {patch_dims}")
    if any(p > n for p, n in zip(patch_dims, volume_dims)):
        raise DimMismatch(f"patch {patch_dims} larger than volume {volume_dims}")
    offset = []
    for axis, (n, p) in enumerate(zip(volume_dims, patch_dims)):
        if support_box is None:
            o = (n - p) // 2
        else:
            lo, hi = int(support_box[0][axis]), int(support_box[1][axis])
            if hi - lo > p:
                raise BrainTooLarge(f"support spans {hi - lo} voxels on axis {axis}, patch has {p}")
            o = lo - (p - (hi - lo) + 1) // 2
        offset.append(min(max(o, 0), n - p))
    return PatchSpec(patch_dims, tuple(offset))


def crop_to_patch(v: Volume, m: LabelMask, dims=FULL_PATCH):
    if v.dims != m.dims:
        raise DimMismatch(f"volume {v.dims} vs mask {m.dims}")
    spec = place_patch(v.dims, _support_box(v.voxels), dims)
    sl = spec.slices
    return v.with_voxels(v.voxels[sl]), LabelMask(m.labels[sl]), spec


def denormalize(pred: np.ndarray, scale: float) -> np.ndarray:
    """Map signed-range predictions back to raw intensities."""
    return (np.clip(pred, -1.0, 1.0) + 1.0) / 2.0 * scale


def stitch(original: Volume, prediction, spec: PatchSpec, mask: LabelMask,
           scale: float | None = None) -> Volume:
    """Insert the patch prediction into ``original`` at masked voxels only.

    With ``scale`` the prediction is taken to be in signed [-1, 1] space and
    is mapped back through the normalization chain; without it the
    prediction is already in the original's intensity space.
    """
    pred = np.asarray(getattr(prediction, "voxels", getattr(prediction, "data", prediction)),
                      dtype=np.float64)
    if pred.ndim == 4 and pred.shape[0] == 1:
        pred = pred[0]
    if pred.shape != tuple(spec.dims):
        raise DimMismatch(f"prediction {pred.shape} vs patch dims {spec.dims}")
    if mask.dims != original.dims:
        raise DimMismatch(f"mask {mask.dims} vs volume {original.dims}")
    if any(o < 0 or o + d > n for o, d, n in zip(spec.offset, spec.dims, original.dims)):
        raise DimMismatch(f"patch {spec} does not fit volume {original.dims}")
    if scale is not None:
        pred = denormalize(pred, scale)
    out = np.array(original.voxels)
    sl = spec.slices
    region = mask.masked[sl]
    out[sl][region] = pred[region]
    return original.with_voxels(out)


def normalize_patch(v: Volume) -> tuple:
    """Unit then signed scaling; returns the signed volume and the divisor used."""
    unit = normalize_unit(v)
    peak = float(v.voxels.max())
    return rescale_signed(unit), (peak if peak > 0 else 1.0)


def make_training_pair(t1n: Volume, healthy: LabelMask, unhealthy: LabelMask, dims=FULL_PATCH):
    """Network input [voided image, combined mask], target and healthy patch mask."""
    combined = combine_masks(healthy, unhealthy)
    patch, mpatch, _ = crop_to_patch(t1n, combined, dims)
    signed, _ = normalize_patch(patch)
    voided = void_image(signed, mpatch)
    x = np.stack([voided.voxels, mpatch.masked.astype(np.float64)])
    target = signed.voxels[None]
    return Tensor(x), Tensor(target), LabelMask.from_bool(mpatch.healthy)


def make_inference_input(voided: Volume, mask: LabelMask, dims=FULL_PATCH):
    """Crop a voided scan and build the network input; returns (input, spec, scale)."""
    patch, mpatch, spec = crop_to_patch(voided, mask, dims)
    signed, scale = normalize_patch(patch)
    revoided = void_image(signed, mpatch)
    x = np.stack([revoided.voxels, mpatch.masked.astype(np.float64)])
    return Tensor(x), spec, scale
