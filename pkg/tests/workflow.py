"""A small end-to-end CLI run shared by the CLI and acceptance tests."""
from pathlib import Path

from voxelfill.cli import dispatch

TINY_CONFIG = """\
epochs = 5
folds = 2
n_best = 2
lr = 0.001
base_channels = 2
levels = 2
patch_dims = 32,32,32
dropout = 0.0
"""


def run(*argv) -> int:
    code = dispatch(["--quiet", *map(str, argv)])
    assert code == 0, f"voxelfill {' '.join(map(str, argv))} exited {code}"
    return code


def smoke(root: Path, threads: int, seed: int = 0) -> dict:
    """Synthesize, mask, train, infer, evaluate and report. Returns output paths."""
    data, runs, out = root / "data", root / "runs", root / "out"
    run("--seed", seed, "--threads", threads, "synth-data", "--out-dir", data, "--count", 4)
    run("--seed", seed, "--threads", threads, "gen-masks", "--data-dir", data,
        "--count", 2, "--with-voided")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_CONFIG)
    run("--seed", seed, "--threads", threads, "train", "--data-dir", data,
        "--config", cfg, "--out-dir", runs)
    ckpt = runs / (runs / "fold0_checkpoints.tsv").read_text().splitlines()[0].split("\t")[1]
    out.mkdir(parents=True, exist_ok=True)
    for i in range(4):
        scan = f"phantom_{i:03d}"
        run("infer", "--checkpoint", ckpt, "--voided", data / f"{scan}_voided_0.vol",
            "--mask", data / f"{scan}_mask_0.vol", "--out", out / f"{scan}_pred.vol")
        run("eval", "--pred", out / f"{scan}_pred.vol", "--gt", data / f"{scan}_t1n.vol",
            "--mask", data / f"{scan}_mask_0.vol", "--scan", scan,
            "--out", out / f"{scan}.metrics")
    run("report", "--metrics-dir", out, "--out", out / "report.txt")
    return {"checkpoints": sorted(runs.glob("*.unck")),
            "predictions": sorted(out.glob("*_pred.vol")),
            "report": out / "report.txt"}
