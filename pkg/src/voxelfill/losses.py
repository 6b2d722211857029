"""Training losses: masked MAE, SSIM and their weighted combination."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyMask, ShapeError, WindowTooLarge
from .tensor import Tensor, as_tensor, ops

GLOBAL, WINDOWED = "global", "windowed"


@dataclass(frozen=True)
class LossConfig:
    lambda_mae: float = 1.0
    lambda_ssim: float = 1.0
    ssim_variant: str = GLOBAL
    window: int = 7
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 2.0

    def __post_init__(self):
        if self.lambda_mae < 0 or self.lambda_ssim < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.window < 3 or self.window % 2 == 0:
            raise ConfigError(f"SSIM window must be odd and >= 3, got {self.window}")
        if self.data_range <= 0:
            raise ConfigError("data_range must be positive")
        if self.ssim_variant not in (GLOBAL, WINDOWED):
            raise ConfigError(f"unknown ssim variant {self.ssim_variant!r}")

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2


def _region(healthy, shape) -> np.ndarray:
    region = healthy.healthy if hasattr(healthy, "healthy") else healthy
    region = np.asarray(region, dtype=bool)
    try:
        return np.broadcast_to(region, shape)
    except ValueError as exc:
        raise ShapeError(f"mask shape {region.shape} does not match {shape}") from exc


def masked_mae(pred, gt, healthy) -> Tensor:
    """Mean |gt - pred| over healthy voxels; other voxels get zero gradient.

    ``healthy`` is a LabelMask (label 1 is used) or a boolean array.
    """
    pred, gt = as_tensor(pred), as_tensor(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} and gt {gt.shape} differ")
    region = _region(healthy, pred.shape)
    m = int(region.sum())
    if m == 0:
        raise EmptyMask("healthy mask is empty")
    diff = ops.abs(ops.sub(gt, pred))
    return ops.mul(ops.sum_all(ops.mul(diff, region.astype(np.float64))), 1.0 / m)


def _ssim_from_moments(mx, my, vx, vy, cxy, c1, c2):
    num = (2.0 * mx * my + c1) * (2.0 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return num / den


def ssim(x, y, cfg: LossConfig = LossConfig()) -> Tensor:
    """Differentiable SSIM with biased moments.

    ``global``: one evaluation over all voxels. ``windowed``: mean over
    every valid uniform window^3 position of the last three axes.
    """
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise ShapeError(f"ssim operands differ: {x.shape} vs {y.shape}")
    if cfg.ssim_variant == GLOBAL:
        mx, my = ops.mean_all(x), ops.mean_all(y)
        dx, dy = x - mx, y - my
        vx = ops.mean_all(ops.square(dx))
        vy = ops.mean_all(ops.square(dy))
        cxy = ops.mean_all(dx * dy)
        return _ssim_from_moments(mx, my, vx, vy, cxy, cfg.c1, cfg.c2)
    if x.ndim < 3 or any(d < cfg.window for d in x.shape[-3:]):
        raise WindowTooLarge(f"window {cfg.window} does not fit {x.shape[-3:]}")
    w = cfg.window
    mx, my = ops.box_mean(x, w), ops.box_mean(y, w)
    vx = ops.box_mean(ops.square(x), w) - ops.square(mx)
    vy = ops.box_mean(ops.square(y), w) - ops.square(my)
    cxy = ops.box_mean(x * y, w) - mx * my
    return ops.mean_all(_ssim_from_moments(mx, my, vx, vy, cxy, cfg.c1, cfg.c2))


def combined_loss(pred, gt, healthy, cfg: LossConfig = LossConfig()) -> Tensor:
    """lambda_mae * masked MAE + lambda_ssim * (1 - SSIM)."""
    loss = ops.mul(masked_mae(pred, gt, healthy), cfg.lambda_mae)
    if cfg.lambda_ssim:
        loss = loss + ops.mul(1.0 - ssim(pred, gt, cfg), cfg.lambda_ssim)
    return loss
