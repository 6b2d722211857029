"""Cross-validation splits, the training loop and best-checkpoint retention."""
from __future__ import annotations

import configparser
import logging
import math
import zlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .augment import augment, sample_augment
from .errors import ConfigError, DivergenceError, SplitError
from .losses import LossConfig, combined_loss
from .patches import make_training_pair
from .rng import stream
from .tensor import AdamState, adam_step, backward
from .unet import UNetConfig, build_unet, check_patch_dims, forward
from .volume import HEALTHY, LabelMask

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    folds: int = 5
    n_best: int = 5
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_mae: float = 1.0
    lambda_ssim: float = 1.0
    batch_size: int = 1
    seed: int = 0
    augment: bool = True
    patch_dims: tuple = (128, 128, 96)
    base_channels: int = 32
    levels: int = 3
    dropout: float = 0.2
    up_channel_rule: str = "halved"
    final_activation: str = "none"

    def __post_init__(self):
        if self.folds < 2:
            raise ConfigError("need k >= 2 folds")
        if self.n_best < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("n_best, epochs and batch_size must be >= 1")
        object.__setattr__(self, "patch_dims", tuple(int(d) for d in self.patch_dims))
        check_patch_dims(self.unet_config(), self.patch_dims)

    def unet_config(self) -> UNetConfig:
        return UNetConfig(base_channels=self.base_channels, levels=self.levels,
                          dropout_rate=self.dropout, up_channel_rule=self.up_channel_rule,
                          final_activation=self.final_activation)

    def loss_config(self) -> LossConfig:
        return LossConfig(lambda_mae=self.lambda_mae, lambda_ssim=self.lambda_ssim)

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        try:
            parser.read_string("[train]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"bad config file: {exc}") from None
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, raw in parser["train"].items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            default = getattr(cls, key)
            try:
                if isinstance(default, bool):
                    values[key] = parser["train"].getboolean(key)
                elif isinstance(default, tuple):
                    values[key] = tuple(int(v) for v in raw.replace("x", ",").split(","))
                else:
                    values[key] = type(default)(raw)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {raw!r}") from None
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class ScanRecord:
    scan_id: str
    t1n: object
    brain: LabelMask
    unhealthy: LabelMask
    healthy_masks: list = field(default_factory=list)


@dataclass
class Checkpoint:
    config: TrainConfig
    epoch: int
    val_loss: float
    params: dict  # name -> ndarray


@dataclass
class TrainResult:
    checkpoints: list
    history: list  # one dict per epoch: epoch, train_loss, val_loss
    params: dict


def kfold_split(scan_ids, k: int, seed: int) -> list:
    """Shuffled k-fold partition; the first len % k folds get one extra id."""
    ids = list(scan_ids)
    if k < 2:
        raise SplitError("k must be >= 2")
    if len(ids) < k:
        raise SplitError(f"{len(ids)} scans cannot fill {k} folds")
    order = stream(seed, "kfold").permutation(len(ids))
    shuffled = [ids[i] for i in order]
    base, extra = divmod(len(ids), k)
    folds, start = [], 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        val = shuffled[start:start + size]
        start += size
        val_set = set(val)
        folds.append(([i for i in shuffled if i not in val_set], val))
    return folds


def select_best(val_losses, n_best: int) -> list:
    """1-based epochs of the ``n_best`` lowest losses; equal losses keep the earlier epoch."""
    ranked = sorted(range(len(val_losses)), key=lambda i: (val_losses[i], i))
    return [i + 1 for i in ranked[:n_best]]


def _augmented_mask(record: ScanRecord, mask: LabelMask, seed: int, epoch: int, k: int) -> LabelMask:
    rng = stream(seed, "train-augment", hash_id(record.scan_id), epoch, k)
    moved = augment(mask, sample_augment(rng))
    region = moved.healthy & record.brain.masked & ~record.unhealthy.masked
    return LabelMask.from_bool(region, HEALTHY) if region.any() else mask


def hash_id(scan_id: str) -> int:
    return zlib.crc32(scan_id.encode("utf-8"))


def training_triples(record: ScanRecord, config: TrainConfig, epoch: int | None = None):
    """(input, target, healthy) for every healthy mask of a scan.

    ``epoch`` switches on the per-epoch mask augmentation; ``None`` gives
    the unaugmented triples used for validation.
    """
    for k, mask in enumerate(record.healthy_masks):
        if epoch is not None and config.augment:
            mask = _augmented_mask(record, mask, config.seed, epoch, k)
        yield make_training_pair(record.t1n, mask, record.unhealthy, config.patch_dims)


def train_step(params, unet_cfg, loss_cfg, batch, state: AdamState, rng) -> float:
    """One Adam update on the mean loss of ``batch`` (a list of triples).

    Returns the mean loss; a non-finite loss skips the update.
    """
    for p in params.values():
        p.zero_grad()
    values = []
    for x, target, healthy in batch:
        pred = forward(params, unet_cfg, x, train=True, rng=rng)
        loss = combined_loss(pred, target, healthy, loss_cfg)
        values.append(loss.item())
        if not math.isfinite(values[-1]):
            return values[-1]
        backward(loss)
    n = len(batch)
    grads = {k: None if p.grad is None else p.grad / n for k, p in params.items()}
    adam_step(params, grads, state)
    return float(np.mean(values))


def evaluate_loss(params, unet_cfg, loss_cfg, triples) -> float:
    losses = [combined_loss(forward(params, unet_cfg, x), t, h, loss_cfg).item()
              for x, t, h in triples]
    return float(np.mean(losses))


def train_loop(dataset, fold, config: TrainConfig, init_params: dict | None = None,
               progress=None) -> TrainResult:
    """Train on ``fold = (train_ids, val_ids)`` and keep the n_best checkpoints.

    Triples are taken in scan order and grouped into batches of
    ``config.batch_size``; the optimizer steps once per batch.
    """
    records = {r.scan_id: r for r in dataset}
    train_ids, val_ids = fold
    unet_cfg, loss_cfg = config.unet_config(), config.loss_config()
    params = init_params if init_params is not None else build_unet(unet_cfg, config.seed)
    state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    val_triples = [t for sid in val_ids for t in training_triples(records[sid], config)]
    history, kept = [], []
    for epoch in range(1, config.epochs + 1):
        losses = []
        triples = [t for sid in train_ids for t in training_triples(records[sid], config, epoch)]
        for b, start in enumerate(range(0, len(triples), config.batch_size)):
            rng = stream(config.seed, "dropout", epoch, b)
            losses.append(train_step(params, unet_cfg, loss_cfg,
                                     triples[start:start + config.batch_size], state, rng))
            if not math.isfinite(losses[-1]):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}", history)
        val = evaluate_loss(params, unet_cfg, loss_cfg, val_triples) if val_triples else float(np.mean(losses))
        if not math.isfinite(val):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", history)
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else float("nan"),
                  "val_loss": val}
        history.append(record)
        kept = _retain(kept, Checkpoint(config, epoch, val, {k: p.data.copy() for k, p in params.items()}),
                       config.n_best)
        log.info("epoch %d train %.6f val %.6f", epoch, record["train_loss"], val)
        if progress is not None:
            progress(record)
    return TrainResult(kept, history, params)


def _retain(kept: list, ckpt: Checkpoint, n_best: int) -> list:
    kept = sorted(kept + [ckpt], key=lambda c: (c.val_loss, c.epoch))
    return kept[:n_best]
