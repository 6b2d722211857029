"""Masked evaluation metrics (MSE, PSNR, SSIM) and aggregate reports."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimMismatch, EmptyMask, EmptyReport, FormatError, WindowTooLarge
from .tensor.ops import _box_sum_valid

PSNR_CAP = 99.0
METRICS = ("mse", "psnr", "ssim")
STATISTICS = ("mean", "std", "q25", "median", "q75")
ROW_LABELS = {
    "mean": "Mean",
    "std": "Standard deviation",
    "q25": "25 quantile",
    "median": "Median",
    "q75": "75 quantile",
}


@dataclass(frozen=True)
class ScanMetrics:
    scan_id: str
    mse: float
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    scans: list
    aggregates: dict  # metric -> statistic -> value


def psnr(mse: float, data_range: float = 1.0) -> float:
    if mse < 0:
        raise ValueError(f"negative MSE {mse}")
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)


def ssim_map(x: np.ndarray, y: np.ndarray, window: int = 7, data_range: float = 1.0,
             k1: float = 0.01, k2: float = 0.03) -> np.ndarray:
    """Per-voxel SSIM from uniform windows centred on each voxel.

    Voxels closer than window//2 to a border take the value of the nearest
    window that fits entirely inside the grid.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimMismatch(f"{x.shape} != {y.shape}")
    if any(d < window for d in x.shape):
        raise WindowTooLarge(f"window {window} does not fit {x.shape}")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    n = float(window ** 3)
    mx = _box_sum_valid(x, window) / n
    my = _box_sum_valid(y, window) / n
    vx = _box_sum_valid(x * x, window) / n - mx * mx
    vy = _box_sum_valid(y * y, window) / n - my * my
    cxy = _box_sum_valid(x * y, window) / n - mx * my
    local = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    r = window // 2
    idx = [np.clip(np.arange(d) - r, 0, d - window) for d in x.shape]
    return local[np.ix_(*idx)]


def eval_metrics(pred, gt, healthy, scan_id: str = "", window: int = 7,
                 data_range: float = 1.0) -> ScanMetrics:
    """MSE, PSNR and SSIM restricted to the healthy voxels.

    ``pred`` and ``gt`` are Volumes or arrays already in unit range.
    """
    p = np.asarray(getattr(pred, "voxels", pred), dtype=np.float64)
    g = np.asarray(getattr(gt, "voxels", gt), dtype=np.float64)
    region = np.asarray(getattr(healthy, "healthy", healthy), dtype=bool)
    if p.shape != g.shape or region.shape != p.shape:
        raise DimMismatch(f"shapes {p.shape}, {g.shape}, {region.shape} differ")
    if not region.any():
        raise EmptyMask("healthy mask is empty")
    diff = p[region] - g[region]
    mse = float(np.mean(diff * diff))
    s = float(np.mean(ssim_map(p, g, window, data_range)[region]))
    return ScanMetrics(scan_id, mse, psnr(mse, data_range), s)


def _statistics(values) -> dict:
    a = np.asarray(values, dtype=np.float64)
    q25, median, q75 = np.quantile(a, [0.25, 0.5, 0.75], method="linear")
    return {"mean": float(np.mean(a)), "std": float(np.std(a)),
            "q25": float(q25), "median": float(median), "q75": float(q75)}


def aggregate_report(metrics) -> EvalReport:
    """Table-style statistics; population std, linearly interpolated quantiles.

    Infinite PSNR (perfect reconstruction) enters the statistics as PSNR_CAP.
    """
    metrics = list(metrics)
    if not metrics:
        raise EmptyReport("no scan metrics to aggregate")
    aggregates = {
        "mse": _statistics([m.mse for m in metrics]),
        "psnr": _statistics([min(m.psnr, PSNR_CAP) for m in metrics]),
        "ssim": _statistics([m.ssim for m in metrics]),
    }
    return EvalReport(metrics, aggregates)


# -- text formats -------------------------------------------------------------

def _fmt(value: float) -> str:
    return format(value, ".9g")


def format_report(report: EvalReport) -> str:
    lines = ["# Overall evaluation results", f"# scans: {len(report.scans)}", ""]
    lines.append(f"{'':<20}{'MSE':>18}{'PSNR':>18}{'SSIM':>18}")
    for stat in STATISTICS:
        row = "".join(f"{_fmt(report.aggregates[m][stat]):>18}" for m in METRICS)
        lines.append(f"{ROW_LABELS[stat]:<20}{row}")
    lines.append("")
    lines.extend(format_kv_block(report.aggregates))
    return "\n".join(lines) + "\n"


def format_kv_block(aggregates: dict) -> list:
    return [f"{m}.{stat} = {_fmt(aggregates[m][stat])}" for m in METRICS for stat in STATISTICS]


def parse_report(text: str) -> dict:
    """Read the ``metric.statistic = value`` block back into nested dicts."""
    out = {m: {} for m in METRICS}
    for line in text.splitlines():
        if "=" not in line or line.lstrip().startswith("#"):
            continue
        key, _, value = (s.strip() for s in line.partition("="))
        metric, _, stat = key.partition(".")
        if metric in out and stat in STATISTICS:
            out[metric][stat] = float(value)
    missing = [f"{m}.{s}" for m in METRICS for s in STATISTICS if s not in out[m]]
    if missing:
        raise FormatError(f"report is missing {', '.join(missing)}")
    return out


def format_scan_row(m: ScanMetrics) -> str:
    return f"{m.scan_id or '-'}\tSSIM {_fmt(m.ssim)}\tPSNR {_fmt(min(m.psnr, PSNR_CAP))}\tMSE {_fmt(m.mse)}"


def write_scan_metrics(path, m: ScanMetrics) -> None:
    # repr keeps full precision so aggregation from files is lossless
    Path(path).write_text(
        f"scan = {m.scan_id}\nmse = {m.mse!r}\npsnr = {m.psnr!r}\nssim = {m.ssim!r}\n")


def read_scan_metrics(path) -> ScanMetrics:
    fields = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line and not line.lstrip().startswith("#"):
            key, _, value = (s.strip() for s in line.partition("="))
            fields[key] = value
    try:
        return ScanMetrics(fields.get("scan", Path(path).stem), float(fields["mse"]),
                           float(fields["psnr"]), float(fields["ssim"]))
    except KeyError as exc:
        raise FormatError(f"{path}: missing field {exc}") from None
