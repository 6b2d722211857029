"""``voxelfill`` command-line entry point.

Exit status: 0 success, 1 usage error, 2 runtime error. Diagnostics go to
stderr; results go to files or stdout.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .augment import MaskGenParams, augment, build_augmented_set, sample_augment
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import VoxelfillError
from .metrics import (
    aggregate_report,
    eval_metrics,
    format_report,
    format_scan_row,
    read_scan_metrics,
    write_scan_metrics,
)
from .patches import make_inference_input, stitch
from .phantom import PhantomSpec, synth_phantom
from .rng import stream
from .tensor import Tensor
from .training import ScanRecord, TrainConfig, kfold_split, train_loop
from .unet import forward
from .volume import (
    LabelMask,
    Volume,
    combine_masks,
    read_mask,
    read_vol,
    validation_scale,
    void_image,
    write_mask,
    write_vol,
)

log = logging.getLogger("voxelfill")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dims(text: str) -> tuple:
    try:
        dims = tuple(int(v) for v in text.replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y,Z, got {text!r}") from None
    if len(dims) != 3:
        raise argparse.ArgumentTypeError(f"expected three dims, got {text!r}")
    return dims


def _global_flags(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default if suppress else 0)
    parser.add_argument("--threads", type=int, default=default if suppress else 1)
    parser.add_argument("--quiet", action="store_true", default=default if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="voxelfill", description="3D brain-volume inpainting toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth-data", help="write synthetic phantom scans")
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--dims", type=_dims, default=(32, 32, 32))
    p.add_argument("--shells", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--no-tumor", action="store_true")

    p = sub.add_parser("gen-masks", help="generate healthy masks for one scan or a data dir")
    p.add_argument("--brain", type=Path)
    p.add_argument("--unhealthy", type=Path)
    p.add_argument("--data-dir", type=Path, help="process every <scan>_brain.vol found here")
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--scan", help="scan id used in output names")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--fmin", type=float, default=0.005)
    p.add_argument("--fmax", type=float, default=0.05)
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--max-attempts", type=int, default=100)
    p.add_argument("--with-voided", action="store_true",
                   help="also write <scan>_mask_<k>.vol and <scan>_voided_<k>.vol")

    p = sub.add_parser("augment", help="apply a sampled mirror/rotation to a mask or volume")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--kind", choices=("mask", "volume"), default="mask")

    p = sub.add_parser("train", help="train one cross-validation fold")
    p.add_argument("--data-dir", required=True, type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--out-dir", required=True, type=Path)

    p = sub.add_parser("infer", help="infill a voided scan with a checkpoint")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--voided", required=True, type=Path)
    p.add_argument("--mask", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--patch-dims", type=_dims)

    p = sub.add_parser("eval", help="masked MSE/PSNR/SSIM of one prediction")
    p.add_argument("--pred", required=True, type=Path)
    p.add_argument("--gt", required=True, type=Path)
    p.add_argument("--mask", required=True, type=Path)
    p.add_argument("--scan", default="")
    p.add_argument("--out", type=Path, help="write a per-scan metrics file")

    p = sub.add_parser("report", help="aggregate per-scan metric files")
    p.add_argument("--metrics-dir", required=True, type=Path)
    p.add_argument("--out", type=Path)

    for action in sub.choices.values():
        _global_flags(action, suppress=True)
    return parser


# -- subcommands --------------------------------------------------------------

def cmd_synth_data(args) -> int:
    args.out_dir.mkdir(parents=True, exist_ok=True)
    spec = PhantomSpec(dims=args.dims, shells=args.shells, noise=args.noise,
                       tumor=not args.no_tumor, seed=args.seed)
    for i in range(args.count):
        t1n, brain, unhealthy = synth_phantom(spec, i)
        scan = f"phantom_{i:03d}"
        write_vol(args.out_dir / f"{scan}_t1n.vol", t1n)
        write_mask(args.out_dir / f"{scan}_brain.vol", brain)
        write_mask(args.out_dir / f"{scan}_unhealthy.vol", unhealthy)
        log.info("wrote %s", scan)
    return 0


def _mask_job(scan, index, brain_path, unhealthy_path, out_dir, args):
    brain = read_mask(brain_path)
    unhealthy = read_mask(unhealthy_path)
    params = MaskGenParams(fmin=args.fmin, fmax=args.fmax, safety_radius=args.radius,
                           max_attempts=args.max_attempts)
    masks = build_augmented_set(brain, unhealthy, args.count, params, args.seed, index)
    t1n_path = brain_path.with_name(f"{scan}_t1n.vol")
    t1n = read_vol(t1n_path) if args.with_voided else None
    for k, (mask, _) in enumerate(masks):
        write_mask(out_dir / f"{scan}_healthy_{k}.vol", mask)
        if t1n is not None:
            combined = combine_masks(mask, unhealthy)
            write_mask(out_dir / f"{scan}_mask_{k}.vol", combined)
            write_vol(out_dir / f"{scan}_voided_{k}.vol", void_image(t1n, combined))
    return scan


def _scan_name(brain_path: Path) -> str:
    stem = brain_path.name[:-len(".vol")] if brain_path.name.endswith(".vol") else brain_path.stem
    return stem[:-len("_brain")] if stem.endswith("_brain") else stem


def cmd_gen_masks(args) -> int:
    jobs = []
    if args.data_dir is not None:
        out_dir = args.out_dir or args.data_dir
        for i, brain_path in enumerate(sorted(args.data_dir.glob("*_brain.vol"))):
            scan = _scan_name(brain_path)
            jobs.append((scan, i, brain_path, brain_path.with_name(f"{scan}_unhealthy.vol")))
        if not jobs:
            raise VoxelfillError(f"no *_brain.vol files in {args.data_dir}")
    elif args.brain is not None and args.unhealthy is not None:
        out_dir = args.out_dir or args.brain.parent
        jobs.append((args.scan or _scan_name(args.brain), 0, args.brain, args.unhealthy))
    else:
        raise UsageError("gen-masks needs --data-dir or both --brain and --unhealthy")
    out_dir.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        futures = [pool.submit(_mask_job, *job, out_dir, args) for job in jobs]
        for fut in futures:
            log.info("masks written for %s", fut.result())
    return 0


def cmd_augment(args) -> int:
    spec = sample_augment(stream(args.seed, "augment-cli", args.index))
    if args.kind == "mask":
        write_mask(args.out, augment(read_mask(args.input), spec))
    else:
        write_vol(args.out, augment(read_vol(args.input), spec))
    print(f"mirror={','.join(str(int(f)) for f in spec.mirror)} "
          f"theta_xy={spec.theta_xy!r} theta_yz={spec.theta_yz!r}")
    return 0


def load_dataset(data_dir: Path) -> list:
    records = []
    for t1n_path in sorted(data_dir.glob("*_t1n.vol")):
        scan = t1n_path.name[:-len("_t1n.vol")]
        healthy = [read_mask(p) for p in sorted(data_dir.glob(f"{scan}_healthy_*.vol"),
                                                key=lambda p: int(p.stem.rsplit("_", 1)[1]))]
        if not healthy:
            raise VoxelfillError(f"{scan}: no healthy masks (run gen-masks first)")
        records.append(ScanRecord(scan, read_vol(t1n_path), read_mask(data_dir / f"{scan}_brain.vol"),
                                  read_mask(data_dir / f"{scan}_unhealthy.vol"), healthy))
    if not records:
        raise VoxelfillError(f"no *_t1n.vol files in {data_dir}")
    return records


def cmd_train(args) -> int:
    text = args.config.read_text() if args.config is not None else ""
    config = TrainConfig.from_text(text, seed=args.seed)
    dataset = load_dataset(args.data_dir)
    folds = kfold_split([r.scan_id for r in dataset], config.folds, config.seed)
    if not 0 <= args.fold < len(folds):
        raise UsageError(f"--fold must be in [0, {len(folds) - 1}]")
    result = train_loop(dataset, folds[args.fold], config)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["epoch\ttrain_loss\tval_loss"]
    lines += [f"{h['epoch']}\t{h['train_loss']!r}\t{h['val_loss']!r}" for h in result.history]
    (args.out_dir / f"fold{args.fold}_history.tsv").write_text("\n".join(lines) + "\n")
    ranking = []
    for rank, ckpt in enumerate(result.checkpoints):
        name = f"fold{args.fold}_epoch{ckpt.epoch:04d}.unck"
        save_checkpoint(args.out_dir / name, ckpt)
        ranking.append(f"{rank}\t{name}\t{ckpt.val_loss!r}")
    (args.out_dir / f"fold{args.fold}_checkpoints.tsv").write_text("\n".join(ranking) + "\n")
    print(args.out_dir / ranking[0].split("\t")[1])
    return 0


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    config = ckpt.config
    unet_cfg = config.unet_config()
    voided = read_vol(args.voided)
    mask = read_mask(args.mask)
    dims = args.patch_dims or config.patch_dims
    x, spec, scale = make_inference_input(voided, mask, dims)
    params = {k: Tensor(v) for k, v in ckpt.params.items()}
    pred = forward(params, unet_cfg, x, train=False)
    write_vol(args.out, stitch(voided, pred.data[0], spec, mask, scale=scale))
    return 0


def cmd_eval(args) -> int:
    pred, gt, mask = read_vol(args.pred), read_vol(args.gt), read_mask(args.mask)
    scale = validation_scale(gt, mask)
    metrics = eval_metrics(Volume(pred.voxels / scale), Volume(gt.voxels / scale), mask,
                           scan_id=args.scan)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        write_scan_metrics(args.out, metrics)
    print(format_scan_row(metrics))
    return 0


def cmd_report(args) -> int:
    files = sorted(args.metrics_dir.glob("*.metrics"))
    report = aggregate_report(read_scan_metrics(p) for p in files)
    text = format_report(report)
    if args.out is not None:
        args.out.write_text(text)
    sys.stdout.write(text)
    return 0


COMMANDS = {
    "synth-data": cmd_synth_data,
    "gen-masks": cmd_gen_masks,
    "augment": cmd_augment,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "report": cmd_report,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
    except UsageError as exc:
        print(exc, file=sys.stderr)
        if "usage:" not in str(exc):
            print(parser.format_usage().strip(), file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        # BLAS stays single-threaded so results never depend on --threads
        with threadpool_limits(limits=1):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"voxelfill {args.command}: {exc}", file=sys.stderr)
        return 1
    except (VoxelfillError, OSError, ValueError) as exc:
        print(f"voxelfill {args.command}: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())
