"""Dice, IoU, confusion counting and run-level evaluation reports.

Burned is the positive class. Metrics are micro-averaged over the whole
scene (global pixel counts, not per-patch means), and cloud or nodata
pixels never enter the counts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import GridMismatchError
from .raster import RasterGrid, grids_aligned


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp,
            self.fn + other.fn, self.tn + other.tn,
        )


def _to_array(mask) -> np.ndarray:
    if isinstance(mask, RasterGrid):
        return mask.values[0]
    arr = np.asarray(mask)
    return arr[0] if arr.ndim == 3 else arr


def confusion(pred, truth, valid=None) -> ConfusionCounts:
    """Count tp/fp/fn/tn over valid pixels.

    ``pred`` and ``truth`` may be RasterGrids (geometry is then checked)
    or plain arrays of equal shape. ``valid`` restricts counting; on top
    of it, truth nodata pixels are always excluded.
    """
    if isinstance(pred, RasterGrid) and isinstance(truth, RasterGrid):
        if not grids_aligned(pred, truth):
            raise GridMismatchError("prediction and truth grids differ")
    p = _to_array(pred)
    t = _to_array(truth)
    if p.shape != t.shape:
        raise GridMismatchError(f"shape mismatch {p.shape} vs {t.shape}")
    keep = np.ones(t.shape, dtype=bool)
    if valid is not None:
        v = _to_array(valid)
        if v.shape != t.shape:
            raise GridMismatchError("valid mask shape differs")
        keep &= v.astype(bool)
    if isinstance(truth, RasterGrid) and truth.nodata is not None:
        keep &= truth.valid_mask()
    p = p[keep].astype(bool)
    t = t[keep].astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(np.count_nonzero(~p & ~t))
    return ConfusionCounts(tp, fp, fn, tn)


def dice(counts: ConfusionCounts) -> float:
    """2TP / (2TP + FP + FN); 1.0 when there is nothing to find and
    nothing was predicted (empty-empty convention)."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 1.0
    return 2.0 * counts.tp / denom


def iou(counts: ConfusionCounts) -> float:
    """TP / (TP + FP + FN) with the same empty-empty convention."""
    denom = counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 1.0
    return counts.tp / denom


@dataclass(frozen=True)
class EvalReport:
    """One result row: labels mirror the reporting table columns."""

    framework: str
    model: str
    technique: str
    dice: float
    iou: float
    counts: ConfusionCounts
    inference_minutes: float

    def csv_row(self) -> dict[str, str]:
        return {
            "Framework": self.framework,
            "Model": self.model,
            "Technique": self.technique,
            "Dice": f"{self.dice:.4f}",
            "IoU": f"{self.iou:.4f}",
            "Inference Time (min)": f"{self.inference_minutes:.4f}",
        }


CSV_COLUMNS = ["Framework", "Model", "Technique", "Dice", "IoU", "Inference Time (min)"]


def evaluate_run(
    prediction,
    truth: RasterGrid,
    framework: str = "STL",
    model: str = "UNet-RN34",
    technique: str = "",
    valid=None,
) -> EvalReport:
    """Score a prediction run against ground truth.

    ``prediction`` is a PredictionRun (its binary map and wall clock are
    used) or a bare binary RasterGrid (then inference time is 0).
    """
    binary = getattr(prediction, "binary_map", prediction)
    seconds = getattr(prediction, "wall_clock_seconds", 0.0)
    counts = confusion(binary, truth, valid=valid)
    return EvalReport(
        framework=framework,
        model=model,
        technique=technique,
        dice=dice(counts),
        iou=iou(counts),
        counts=counts,
        inference_minutes=seconds / 60.0,
    )


def write_report_csv(reports: Iterable[EvalReport], path: str | Path) -> None:
    """One CSV row per (framework, model, technique) run."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for report in reports:
            writer.writerow(report.csv_row())
