"""Healthy-mask generation and mirror/rotation augmentation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .errors import ConfigError, DimMismatch, MaskGenFailure
from .rng import stream
from .volume import HEALTHY, LabelMask, Volume

NEAREST, TRILINEAR = "nearest", "trilinear"


@dataclass(frozen=True)
class MaskGenParams:
    fmin: float = 0.005
    fmax: float = 0.05
    min_blobs: int = 1
    max_blobs: int = 3
    safety_radius: float = 3.0
    max_attempts: int = 100

    def __post_init__(self):
        if not 0.0 < self.fmin < self.fmax < 1.0:
            raise ConfigError(f"need 0 < fmin < fmax < 1, got {self.fmin}, {self.fmax}")
        if self.safety_radius < 0:
            raise ConfigError("safety radius must be >= 0")
        if not 1 <= self.min_blobs <= self.max_blobs:
            raise ConfigError("need 1 <= min_blobs <= max_blobs")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")


@dataclass(frozen=True)
class AugmentSpec:
    mirror: tuple = (False, False, False)
    theta_xy: float = 0.0
    theta_yz: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mirror", tuple(bool(f) for f in self.mirror))
        object.__setattr__(self, "theta_xy", float(self.theta_xy) % 360.0)
        object.__setattr__(self, "theta_yz", float(self.theta_yz) % 360.0)


def forbidden_zone(unhealthy, radius: float) -> np.ndarray:
    """Voxels within Euclidean distance ``radius`` of any unhealthy voxel."""
    tumor = np.asarray(getattr(unhealthy, "masked", unhealthy), dtype=bool)
    if not tumor.any():
        return np.zeros(tumor.shape, dtype=bool)
    return ndimage.distance_transform_edt(~tumor) <= radius


def _ellipsoid(shape, center, semi_axes, rotation) -> np.ndarray:
    grid = np.indices(shape, dtype=np.float64).reshape(3, -1).T - center
    local = grid @ rotation  # coordinates in the ellipsoid frame
    return (np.sum((local / semi_axes) ** 2, axis=1) <= 1.0).reshape(shape)


def generate_healthy_mask(brain, unhealthy, params: MaskGenParams = MaskGenParams(),
                          rng: np.random.Generator | None = None) -> LabelMask:
    """Union of random ellipsoids inside the brain, kept clear of the tumor.

    Each attempt draws a target volume fraction, 1-3 blobs with random
    orientation and aspect, clips to the brain, and is rejected if it
    touches the dilated tumor or misses the fraction bounds.
    """
    support = np.asarray(getattr(brain, "masked", brain), dtype=bool)
    tumor_mask = np.asarray(getattr(unhealthy, "masked", unhealthy), dtype=bool)
    if support.shape != tumor_mask.shape:
        raise DimMismatch(f"brain {support.shape} vs unhealthy {tumor_mask.shape}")
    if not support.any():
        raise ConfigError("brain support is empty")
    rng = rng if rng is not None else stream(0, "maskgen")
    allowed = support & ~forbidden_zone(tumor_mask, params.safety_radius)
    centers = np.argwhere(allowed)
    n_brain = int(support.sum())
    if len(centers) == 0 or len(centers) < params.fmin * n_brain:
        raise MaskGenFailure("no brain tissue left outside the tumor safety margin")
    for _ in range(params.max_attempts):
        fraction = rng.uniform(params.fmin, params.fmax)
        n_blobs = int(rng.integers(params.min_blobs, params.max_blobs + 1))
        blob_volume = fraction * n_brain / n_blobs
        region = np.zeros(support.shape, dtype=bool)
        for _ in range(n_blobs):
            aspect = rng.uniform(0.6, 1.4, size=3)
            scale = (3.0 * blob_volume / (4.0 * np.pi * np.prod(aspect))) ** (1.0 / 3.0)
            center = centers[rng.integers(len(centers))].astype(np.float64)
            rot = Rotation.random(random_state=rng).as_matrix()
            region |= _ellipsoid(support.shape, center, scale * aspect, rot)
        region &= support
        got = region.sum() / n_brain
        if region.any() and not (region & ~allowed).any() and params.fmin <= got <= params.fmax:
            return LabelMask.from_bool(region, HEALTHY)
    raise MaskGenFailure(f"no valid mask after {params.max_attempts} attempts")


def sample_augment(rng: np.random.Generator) -> AugmentSpec:
    flags = rng.random(3) < 0.5
    angles = rng.uniform(0.0, 360.0, size=2)
    return AugmentSpec(tuple(flags), angles[0], angles[1])


def _grid(v):
    if isinstance(v, Volume):
        return v.voxels
    if isinstance(v, LabelMask):
        return v.labels
    return np.asarray(v)


def _rewrap(v, arr):
    if isinstance(v, Volume):
        return v.with_voxels(arr)
    if isinstance(v, LabelMask):
        return LabelMask(arr)
    return arr


def apply_mirror(v, flags):
    arr = _grid(v)
    axes = tuple(i for i, f in enumerate(flags) if f)
    return _rewrap(v, np.flip(arr, axis=axes).copy() if axes else arr)


def _plane_rotation(theta_deg: float, a: int, b: int) -> np.ndarray:
    t = np.deg2rad(theta_deg)
    c, s = np.cos(t), np.sin(t)
    # exact values at quarter turns keep 90-degree nearest rotations integral
    quarter = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}
    if theta_deg in quarter:
        c, s = quarter[theta_deg]
    r = np.eye(3)
    r[a, a], r[a, b], r[b, a], r[b, b] = c, -s, s, c
    return r


def rotation_matrix(theta_xy: float, theta_yz: float) -> np.ndarray:
    """X-Y rotation followed by Y-Z rotation (angles in degrees)."""
    return _plane_rotation(theta_yz % 360.0, 1, 2) @ _plane_rotation(theta_xy % 360.0, 0, 1)


def apply_rotation(v, theta_xy: float, theta_yz: float, interpolation: str = NEAREST):
    """Rotate about the grid centre; samples from outside the grid read as 0."""
    if interpolation not in (NEAREST, TRILINEAR):
        raise ConfigError(f"unknown interpolation {interpolation!r}")
    theta_xy %= 360.0
    theta_yz %= 360.0
    arr = _grid(v)
    if theta_xy == 0.0 and theta_yz == 0.0:
        return _rewrap(v, arr)
    rot = rotation_matrix(theta_xy, theta_yz)
    center = (np.asarray(arr.shape, dtype=np.float64) - 1.0) / 2.0
    out_coords = np.indices(arr.shape, dtype=np.float64).reshape(3, -1) - center[:, None]
    src = rot.T @ out_coords + center[:, None]
    if interpolation == NEAREST:
        idx = np.rint(src).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.asarray(arr.shape)[:, None]), axis=0)
        flat = np.zeros(idx.shape[1], dtype=arr.dtype)
        flat[inside] = arr[tuple(idx[:, inside])]
        out = flat.reshape(arr.shape)
    else:
        out = ndimage.map_coordinates(np.asarray(arr, dtype=np.float64), src, order=1,
                                      mode="constant", cval=0.0).reshape(arr.shape)
    return _rewrap(v, out)


def augment(v, spec: AugmentSpec, interpolation: str | None = None):
    """Mirror then rotate; masks default to nearest, images to trilinear."""
    if interpolation is None:
        interpolation = NEAREST if isinstance(v, LabelMask) else TRILINEAR
    return apply_rotation(apply_mirror(v, spec.mirror), spec.theta_xy, spec.theta_yz, interpolation)


def build_augmented_set(brain, unhealthy, n_masks: int = 5, params: MaskGenParams = MaskGenParams(),
                        seed: int = 0, scan_index: int = 0) -> list:
    """``n_masks`` pairwise-distinct healthy masks, each with its own AugmentSpec."""
    out = []
    for k in range(n_masks):
        rng = stream(seed, "maskgen", scan_index, k)
        for _ in range(params.max_attempts):
            mask = generate_healthy_mask(brain, unhealthy, params, rng)
            if all(mask != prev for prev, _ in out):
                break
        else:
            raise MaskGenFailure(f"could not draw a distinct mask #{k}")
        out.append((mask, sample_augment(stream(seed, "augment-spec", scan_index, k))))
    return out
