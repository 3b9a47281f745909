"""Image-quality and overlap metrics, plus fold aggregation and reports."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

PSNR_IDENTICAL = math.inf  # returned when the two images match exactly


def _np(x):
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr(a, b, data_range: float = 1.0) -> float:
    a, b = _np(a), _np(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(data_range**2 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _local_mean(x, g):
    y = ndimage.correlate1d(x, g, axis=0, mode="reflect")
    y = ndimage.correlate1d(y, g, axis=1, mode="reflect")
    r = (len(g) - 1) // 2
    return y[r : y.shape[0] - r, r : y.shape[1] - r]


def _ssim_2d(a, b, g, c1, c2):
    mu_a, mu_b = _local_mean(a, g), _local_mean(b, g)
    var_a = _local_mean(a * a, g) - mu_a * mu_a
    var_b = _local_mean(b * b, g) - mu_b * mu_b
    cov = _local_mean(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, window: int = 11, k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0,
         sigma: float = 1.5) -> float:
    """Mean SSIM over all fully-contained Gaussian windows.

    Accepts (H, W) or (C, H, W); multi-channel inputs are scored per channel
    and averaged.
    """
    a, b = _np(a), _np(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape[-2:]) < window:
        raise ValueError(f"images smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    if a.ndim == 2:
        return _ssim_2d(a, b, g, c1, c2)
    a = a.reshape(-1, *a.shape[-2:])
    b = b.reshape(-1, *b.shape[-2:])
    return float(np.mean([_ssim_2d(x, y, g, c1, c2) for x, y in zip(a, b)]))


@dataclass
class OverlapScores:
    per_class: np.ndarray  # nan where the class is absent from both masks
    mean: float


def _overlap_counts(pred, gt, n_classes):
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    if pred.shape != gt.shape:
        raise ValueError("pred and gt masks differ in size")
    inter = np.bincount(gt[pred == gt], minlength=n_classes)[:n_classes]
    n_pred = np.bincount(pred, minlength=n_classes)[:n_classes]
    n_gt = np.bincount(gt, minlength=n_classes)[:n_classes]
    return inter.astype(np.float64), n_pred.astype(np.float64), n_gt.astype(np.float64)


def _finish(values, present):
    per_class = np.where(present, values, np.nan)
    mean = float(np.mean(per_class[present])) if present.any() else math.nan
    return OverlapScores(per_class, mean)


def iou(pred, gt, n_classes: int) -> OverlapScores:
    """Per-class IoU. Classes absent from both masks are nan and excluded from the mean."""
    inter, n_pred, n_gt = _overlap_counts(pred, gt, n_classes)
    union = n_pred + n_gt - inter
    present = union > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        return _finish(inter / union, present)


def dice(pred, gt, n_classes: int) -> OverlapScores:
    inter, n_pred, n_gt = _overlap_counts(pred, gt, n_classes)
    total = n_pred + n_gt
    present = total > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        return _finish(2.0 * inter / total, present)


def aggregate_folds(values, ddof: int = 0) -> tuple[float, float]:
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot aggregate an empty list")
    return float(v.mean()), float(v.std(ddof=ddof)) if v.size > ddof else math.nan


@dataclass
class MetricReport:
    kind: str  # "sr" or "seg"
    setting: str  # e.g. "x2" or "binary"
    method: str = "SEGSRNet"
    per_sample: list[tuple[str, str, float]] = field(default_factory=list)
    fold_of: dict[str, int] = field(default_factory=dict)
    fold_id: int | None = None
    std_ddof: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def metric_names(self):
        return ("psnr", "ssim") if self.kind == "sr" else ("iou", "dice")

    def values(self, metric, fold=None):
        return [
            v for sid, m, v in self.per_sample
            if m == metric and (fold is None or self.fold_of.get(sid) == fold)
        ]

    @property
    def aggregates(self) -> dict[str, tuple[float, float]]:
        return {m: aggregate_folds(self.values(m), self.std_ddof) for m in self.metric_names if self.values(m)}

    def fold_aggregates(self) -> dict[int, dict[str, tuple[float, float]]]:
        out = {}
        for fold in sorted(set(self.fold_of.values())):
            out[fold] = {
                m: aggregate_folds(self.values(m, fold), self.std_ddof)
                for m in self.metric_names if self.values(m, fold)
            }
        return out

    def to_dict(self):
        return {
            "kind": self.kind,
            "setting": self.setting,
            "method": self.method,
            "fold_id": self.fold_id,
            "std": "population" if self.std_ddof == 0 else f"sample (ddof={self.std_ddof})",
            "meta": self.meta,
            "per_sample": [
                {"sample_id": s, "fold": self.fold_of.get(s), "metric": m, "value": _json_num(v)}
                for s, m, v in self.per_sample
            ],
            "aggregates": {m: {"mean": _json_num(mu), "std": _json_num(sd)} for m, (mu, sd) in self.aggregates.items()},
            "folds": {
                str(f): {m: {"mean": _json_num(mu), "std": _json_num(sd)} for m, (mu, sd) in agg.items()}
                for f, agg in self.fold_aggregates().items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_header(self):
        a, b = self.metric_names
        col = "scale" if self.kind == "sr" else "task"
        return ["method", col, f"{a}_mean", f"{a}_std", f"{b}_mean", f"{b}_std"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.csv_header())
        agg = self.aggregates
        row = [self.method, self.setting]
        for m in self.metric_names:
            mu, sd = agg.get(m, (math.nan, math.nan))
            row += [f"{mu:.6f}", f"{sd:.6f}"]
        writer.writerow(row)
        return buf.getvalue()


def _json_num(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x
