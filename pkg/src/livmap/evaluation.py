"""RMSE and Kendall rank correlation, per-split reports, score-map rasters.

Kendall's tau is computed over all pairs (vectorized, O(n^2) memory and
time); tau_a divides the concordant-discordant balance by the pair
count, tau_b additionally corrects for ties in either ranking. The map
renderer paints one pixel block per cell on a red-white-blue ramp.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import UndefinedResultError, ValidationError
from .features import PatchBundle, SplitDatasets
from .grid import CellId, GridBounds, format_float
from .model import FusionHeadParams, predict

TAU_A = "tau_a"
TAU_B = "tau_b"
TAU_VARIANTS = (TAU_A, TAU_B)

RAMP_LOW = (255, 0, 0)       # lowest score: red
RAMP_MID = (255, 255, 255)
RAMP_HIGH = (0, 0, 255)      # highest score: blue
NO_VALUE = (128, 128, 128)
DEFAULT_BLOCK_PX = 8


@dataclass
class MetricsReport:
    rmse: float
    tau: float
    variant: str
    n: int


def rmse(pred: np.ndarray, target: np.ndarray) -> float:
    """Root mean squared error between predictions and targets."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValidationError(f"length mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValidationError("rmse needs at least one sample")
    diff = target - pred
    return float(np.sqrt(np.mean(diff * diff)))


def _pair_balance(x: np.ndarray, y: np.ndarray) -> int:
    """Concordant-minus-discordant pair count over all i<j pairs."""
    sx = np.sign(x[:, None] - x[None, :])
    sy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(len(x), k=1)
    return int((sx[iu] * sy[iu]).sum())


def _tie_term(values: np.ndarray) -> int:
    """Sum of t*(t-1)/2 over groups of tied values."""
    _, counts = np.unique(values, return_counts=True)
    return int(sum(int(t) * (int(t) - 1) // 2 for t in counts))


def kendall_tau(pred: np.ndarray, target: np.ndarray, variant: str = TAU_B) -> float:
    """Kendall rank correlation in [-1, 1].

    tau_a = (C - D) / (n(n-1)/2); tau_b divides by
    sqrt((T0-T1)(T0-T2)) with the standard tie terms, and is undefined
    (raises) when either input is entirely tied.
    """
    if variant not in TAU_VARIANTS:
        raise ValidationError(f"unknown tau variant {variant!r}")
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError(f"tau needs two equal-length vectors, got {x.shape} / {y.shape}")
    n = x.shape[0]
    if n < 2:
        raise ValidationError(f"tau needs n >= 2, got {n}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("tau inputs must be finite")
    num = _pair_balance(x, y)
    t0 = n * (n - 1) // 2
    if variant == TAU_A:
        return num / float(t0)
    t1 = _tie_term(x)
    t2 = _tie_term(y)
    if t1 == t0 or t2 == t0:
        raise UndefinedResultError("tau_b is undefined when one input is entirely tied")
    return num / math.sqrt(float((t0 - t1) * (t0 - t2)))


def evaluate_split(params: FusionHeadParams, datasets: SplitDatasets, split: str,
                   variant: str = TAU_B) -> MetricsReport:
    """Predict one split and report its RMSE and tau."""
    bundles = datasets.bundles(split)
    if not bundles:
        raise ValidationError(f"split {split!r} is empty")
    preds = predict(params, bundles)
    targets = np.array([b.target for b in bundles])
    return MetricsReport(
        rmse=rmse(preds, targets),
        tau=kendall_tau(preds, targets, variant=variant),
        variant=variant,
        n=len(bundles),
    )


# ------------------------------------------------------------- rendering


def _ramp_color(t: float) -> tuple[int, int, int]:
    t = min(max(t, 0.0), 1.0)
    if t < 0.5:
        lo, hi, u = RAMP_LOW, RAMP_MID, 2.0 * t
    else:
        lo, hi, u = RAMP_MID, RAMP_HIGH, 2.0 * t - 1.0
    return tuple(int(round(lo[k] + (hi[k] - lo[k]) * u)) for k in range(3))


def render_score_map(values: Mapping[CellId, float], bounds: GridBounds,
                     block_px: int = DEFAULT_BLOCK_PX,
                     vmin: float | None = None, vmax: float | None = None,
                     ) -> tuple[np.ndarray, list[tuple[CellId, float]]]:
    """Rasterize per-cell values inside the bounds.

    Returns (H x W x 3 uint8 raster, rows mirrored into the CSV). Colors
    ramp linearly red -> white -> blue from the minimum to the maximum of
    the rendered values unless a fixed range is given; cells without a
    value paint gray and stay out of the CSV. Row 0 of the raster is the
    northernmost (highest cy) row.
    """
    if not values:
        raise ValidationError("render_score_map needs at least one value")
    inside = {c: v for c, v in values.items() if bounds.contains_cell(c)}
    rows = sorted(inside.items())
    rendered = [v for _, v in rows]
    lo = (min(rendered) if rendered else 0.0) if vmin is None else vmin
    hi = (max(rendered) if rendered else 0.0) if vmax is None else vmax

    width = bounds.max_cx - bounds.min_cx + 1
    height = bounds.max_cy - bounds.min_cy + 1
    raster = np.empty((height * block_px, width * block_px, 3), dtype=np.uint8)
    raster[:, :] = NO_VALUE
    for cell, value in inside.items():
        t = 0.5 if hi == lo else (value - lo) / (hi - lo)
        color = _ramp_color(t)
        px = (cell.cx - bounds.min_cx) * block_px
        py = (bounds.max_cy - cell.cy) * block_px
        raster[py:py + block_px, px:px + block_px] = color
    return raster, rows


def save_score_map(values: Mapping[CellId, float], bounds: GridBounds, png_path, csv_path,
                   block_px: int = DEFAULT_BLOCK_PX,
                   vmin: float | None = None, vmax: float | None = None) -> None:
    """Write the raster as PNG plus the mirrored per-cell values CSV."""
    from PIL import Image

    raster, rows = render_score_map(values, bounds, block_px=block_px, vmin=vmin, vmax=vmax)
    Image.fromarray(raster, mode="RGB").save(png_path, format="PNG")
    with open(csv_path, "w", newline="\n") as fh:
        fh.write("cell_x,cell_y,value\n")
        for cell, value in rows:
            fh.write(f"{cell.cx},{cell.cy},{format_float(value)}\n")


# ---------------------------------------------------------------- file io


def save_predictions(rows: Sequence[tuple[CellId, str, float, float]], path) -> None:
    """Write predictions.csv (cell_x,cell_y,split,target,prediction)."""
    with open(path, "w", newline="\n") as fh:
        fh.write("cell_x,cell_y,split,target,prediction\n")
        for cell, split, target, prediction in sorted(rows, key=lambda r: r[0]):
            fh.write(f"{cell.cx},{cell.cy},{split},"
                     f"{format_float(target)},{format_float(prediction)}\n")


def load_predictions(path) -> list[tuple[CellId, str, float, float]]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["cell_x", "cell_y", "split", "target", "prediction"]:
            raise ValidationError(f"{path}: bad predictions header")
        for row in reader:
            if not row:
                continue
            out.append((CellId(int(row[0]), int(row[1])), row[2], float(row[3]), float(row[4])))
    return out


def save_metrics(reports: Mapping[str, MetricsReport], path, extra: dict | None = None,
                 alongside: Mapping[str, Mapping[str, float]] | None = None) -> None:
    """Write the metrics report as JSON, one object per split.

    ``alongside`` merges additional named values (e.g. the other tau
    variant) into each split's entry.
    """
    doc: dict = {"splits": {}}
    if extra:
        doc.update(extra)
    for split, report in reports.items():
        entry = {
            "rmse": report.rmse, "tau": report.tau,
            "variant": report.variant, "n": report.n,
        }
        if alongside and split in alongside:
            entry.update(alongside[split])
        doc["splits"][split] = entry
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
