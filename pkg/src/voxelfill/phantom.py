"""Synthetic brain-like phantoms that stand in for clinical scans."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .rng import stream
from .volume import BACKGROUND, HEALTHY, UNHEALTHY, LabelMask, Volume


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (32, 32, 32)
    shells: int = 3
    noise: float = 0.05
    tumor: bool = True
    seed: int = 0

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 16 for d in self.dims):
            raise ConfigError(f"phantom dims must be >= 16 per axis, got {self.dims}")
        if self.noise < 0:
            raise ConfigError("noise amplitude must be >= 0")
        if self.shells < 1:
            raise ConfigError("need at least one shell")


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def synth_phantom(spec: PhantomSpec, index: int = 0):
    """Return (t1n, brain support, unhealthy mask) for phantom number ``index``.

    The brain is an ellipsoid filled with concentric shells of smoothly
    varying intensity plus smoothed texture noise; the optional tumor is a
    bright ellipsoidal blob in the interior.
    """
    rng = stream(spec.seed, "phantom", index)
    dims = tuple(int(d) for d in spec.dims)
    center = (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0
    center += rng.uniform(-1.0, 1.0, size=3)
    semi = np.asarray(dims, dtype=np.float64) * rng.uniform(0.34, 0.40, size=3)
    coords = np.indices(dims, dtype=np.float64)
    rho = np.sqrt(sum(((coords[i] - center[i]) / semi[i]) ** 2 for i in range(3)))
    brain = rho <= 1.0

    levels = rng.uniform(0.35, 1.0, size=spec.shells)
    edges = np.linspace(0.0, 1.0, spec.shells + 1)[1:-1]
    intensity = np.full(dims, levels[0])
    width = 0.5 / spec.shells
    for k, edge in enumerate(edges):
        intensity += (levels[k + 1] - levels[k]) * _smoothstep((rho - edge) / width + 0.5)
    if spec.noise > 0:
        texture = ndimage.gaussian_filter(rng.standard_normal(dims), sigma=1.0)
        texture /= max(texture.std(), 1e-12)
        intensity = intensity * (1.0 + spec.noise * texture)

    labels = np.full(dims, BACKGROUND, dtype=np.uint8)
    if spec.tumor:
        t_center = center + rng.uniform(-0.35, 0.35, size=3) * semi
        t_semi = semi * rng.uniform(0.18, 0.28, size=3)
        t_rho = np.sqrt(sum(((coords[i] - t_center[i]) / t_semi[i]) ** 2 for i in range(3)))
        tumor = (t_rho <= 1.0) & brain
        intensity = np.where(tumor, intensity * 1.2 + 0.3 * (1.0 - np.clip(t_rho, 0, 1)), intensity)
        labels[tumor] = UNHEALTHY

    raw = np.where(brain, np.maximum(intensity, 0.05) * 1000.0, 0.0)
    support = LabelMask.from_bool(brain, HEALTHY)
    return Volume(raw), support, LabelMask(labels)
