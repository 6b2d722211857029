"""Three-stage U-Net for volumetric inpainting.

Down block i:  [conv3 -> IN -> PReLU] x2, then 2x max pool
Bridge:        [conv3 -> IN -> ReLU -> dropout] x2
Up block i:    NN upsample -> concat skip -> [conv3 -> IN -> PReLU -> dropout] x2
Head:          1x1x1 conv (optionally tanh)
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .rng import stream
from .tensor import Tensor, ops

HALVED, MATCHED = "halved", "matched"


@dataclass(frozen=True)
class UNetConfig:
    base_channels: int = 32
    levels: int = 3
    in_channels: int = 2
    out_channels: int = 1
    dropout_rate: float = 0.2
    up_channel_rule: str = HALVED
    final_activation: str = "none"
    norm_eps: float = 1e-5
    prelu_init: float = 0.25

    def __post_init__(self):
        if self.levels < 1 or self.base_channels < 1:
            raise ConfigError("levels and base_channels must be >= 1")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate {self.dropout_rate} outside [0, 1)")
        if self.up_channel_rule not in (HALVED, MATCHED):
            raise ConfigError(f"unknown up_channel_rule {self.up_channel_rule!r}")
        if self.final_activation not in ("none", "tanh"):
            raise ConfigError(f"unknown final_activation {self.final_activation!r}")

    def down_channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    @property
    def bridge_channels(self) -> int:
        return self.base_channels * 2 ** self.levels

    def up_channels(self, level: int) -> int:
        c = self.down_channels(level)
        return max(1, c // 2) if self.up_channel_rule == HALVED else c

    def to_dict(self) -> dict:
        return asdict(self)


def layer_plan(config: UNetConfig) -> list:
    """Ordered (block name, in channels, out channels) for every conv stage pair."""
    plan = []
    cin = config.in_channels
    for i in range(config.levels):
        plan.append((f"down{i}", cin, config.down_channels(i)))
        cin = config.down_channels(i)
    plan.append(("bridge", cin, config.bridge_channels))
    prev = config.bridge_channels
    for i in reversed(range(config.levels)):
        out = config.up_channels(i)
        plan.append((f"up{i}", prev + config.down_channels(i), out))
        prev = out
    return plan


def param_shapes(config: UNetConfig) -> list:
    """(name, shape) in declaration order; checkpoints depend on this order."""
    shapes = []
    for block, cin, cout in layer_plan(config):
        for j in (1, 2):
            shapes.append((f"{block}.conv{j}.weight", (cout, cin, 3, 3, 3)))
            shapes.append((f"{block}.conv{j}.bias", (cout,)))
            shapes.append((f"{block}.norm{j}.gamma", (cout,)))
            shapes.append((f"{block}.norm{j}.beta", (cout,)))
            if block != "bridge":
                shapes.append((f"{block}.act{j}.slope", (cout,)))
            cin = cout
    last = layer_plan(config)[-1][2]
    shapes.append(("head.weight", (config.out_channels, last, 1, 1, 1)))
    shapes.append(("head.bias", (config.out_channels,)))
    return shapes


def count_params(config: UNetConfig) -> int:
    total = 0
    for block, cin, cout in layer_plan(config):
        per_conv_extra = 3 * cout if block != "bridge" else 2 * cout  # IN gamma/beta (+ PReLU)
        total += cout * cin * 27 + cout + per_conv_extra
        total += cout * cout * 27 + cout + per_conv_extra
    last = layer_plan(config)[-1][2]
    total += config.out_channels * last + config.out_channels
    return total


def build_unet(config: UNetConfig, init_seed: int = 0) -> dict:
    """Fresh parameters: He-normal kernels (fan-in), zero biases, unit IN scale."""
    rng = stream(init_seed, "unet-init")
    params = {}
    for name, shape in param_shapes(config):
        kind = name.rsplit(".", 1)[1]
        if kind == "weight":
            fan_in = int(np.prod(shape[1:]))
            data = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        elif kind == "gamma":
            data = np.ones(shape)
        elif kind == "slope":
            data = np.full(shape, config.prelu_init)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def check_patch_dims(config: UNetConfig, dims) -> None:
    step = 2 ** config.levels
    if any(int(d) % step for d in dims):
        raise ShapeError(f"patch dims {tuple(dims)} must each be divisible by {step}")


def _stage(params, x, prefix, j, act, config, train, rng):
    x = ops.conv3d(x, params[f"{prefix}.conv{j}.weight"], params[f"{prefix}.conv{j}.bias"], padding=1)
    x = ops.instance_norm(x, params[f"{prefix}.norm{j}.gamma"], params[f"{prefix}.norm{j}.beta"],
                          config.norm_eps)
    if act == "relu":
        x = ops.relu(x)
    else:
        x = ops.prelu(x, params[f"{prefix}.act{j}.slope"])
    return x


def forward(params: dict, config: UNetConfig, patch, train: bool = False,
            rng: np.random.Generator | None = None) -> Tensor:
    """Map a ``[in_channels, X, Y, Z]`` patch to ``[out_channels, X, Y, Z]``.

    In train mode ``rng`` drives dropout; masks are drawn in a fixed layer
    order, so replaying the same stream reproduces the pass exactly.
    """
    x = patch if isinstance(patch, Tensor) else Tensor(patch)
    if x.ndim != 4 or x.shape[0] != config.in_channels:
        raise ShapeError(f"expected [{config.in_channels}, X, Y, Z] input, got {x.shape}")
    check_patch_dims(config, x.shape[1:])
    drop = config.dropout_rate if train else 0.0
    skips = []
    for i in range(config.levels):
        for j in (1, 2):
            x = _stage(params, x, f"down{i}", j, "prelu", config, train, rng)
        skips.append(x)
        x = ops.maxpool3d(x, 2)
    for j in (1, 2):
        x = _stage(params, x, "bridge", j, "relu", config, train, rng)
        x = ops.dropout(x, drop, train, rng)
    for i in reversed(range(config.levels)):
        x = ops.upsample_nn(x, 2)
        x = ops.concat_channels([x, skips[i]])
        for j in (1, 2):
            x = _stage(params, x, f"up{i}", j, "prelu", config, train, rng)
            x = ops.dropout(x, drop, train, rng)
    x = ops.conv3d(x, params["head.weight"], params["head.bias"], padding=0)
    if config.final_activation == "tanh":
        x = ops.tanh(x)
    return x
