"""Saliency evaluation: PR curves, max F-measure, MAE and S-measure.

Predictions are quantised to 8 bits (``floor(p * 255)``) and binarised at
every threshold t in 0..255 as ``q > t``. Zero-division conventions:
precision is 1 when nothing is predicted, recall is 1 when the ground truth
is empty.
"""
from __future__ import annotations

import csv
import math
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datakit.netpbm import read_image

logger = logging.getLogger(__name__)

BETA2 = 0.3
ALPHA = 0.5
N_THRESHOLDS = 256
_EPS = np.finfo(np.float64).eps


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    n_pos: int
    empty_gt: bool = False

    @classmethod
    def from_counts(cls, tp, fp, n_pos: int) -> "PRCurve":
        tp = np.asarray(tp, dtype=np.int64)
        fp = np.asarray(fp, dtype=np.int64)
        predicted = tp + fp
        with np.errstate(invalid="ignore", divide="ignore"):
            precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 1.0)
            recall = tp / n_pos if n_pos > 0 else np.ones(len(tp))
        return cls(np.arange(len(tp)), precision, recall, tp, fp, int(n_pos), n_pos == 0)


def quantize(pred: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(pred, dtype=np.float64) * 255.0), 0, 255).astype(np.int64)


def _binary(gt: np.ndarray) -> np.ndarray:
    return np.asarray(gt, dtype=np.float64) > 0.5


def _check_pair(pred, gt) -> None:
    if np.shape(pred) != np.shape(gt):
        raise ValueError(f"prediction {np.shape(pred)} and ground truth {np.shape(gt)} differ in size")


def pr_counts(pred: np.ndarray, gt: np.ndarray) -> tuple:
    """(tp, fp, n_pos) for every threshold."""
    _check_pair(pred, gt)
    q = quantize(pred)
    fg = _binary(gt)
    hist_fg = np.bincount(q[fg], minlength=N_THRESHOLDS)
    hist_bg = np.bincount(q[~fg], minlength=N_THRESHOLDS)
    # count of values strictly above t
    above_fg = np.concatenate([np.cumsum(hist_fg[::-1])[::-1][1:], [0]])
    above_bg = np.concatenate([np.cumsum(hist_bg[::-1])[::-1][1:], [0]])
    return above_fg, above_bg, int(fg.sum())


def pr_curve(pred: np.ndarray, gt: np.ndarray) -> PRCurve:
    tp, fp, n_pos = pr_counts(pred, gt)
    return PRCurve.from_counts(tp, fp, n_pos)


def f_measure(precision, recall, beta2: float = BETA2):
    p = np.asarray(precision, dtype=np.float64)
    r = np.asarray(recall, dtype=np.float64)
    num = (1 + beta2) * p * r
    den = beta2 * p + r
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def max_f(curve: PRCurve, beta2: float = BETA2) -> float:
    return float(np.max(f_measure(curve.precision, curve.recall, beta2)))


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    _check_pair(pred, gt)
    diff = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64))
    # correctly rounded sum, so the result does not depend on summation order
    return math.fsum(diff.ravel().tolist()) / diff.size


# ---------------------------------------------------------------- S-measure


def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return float(2.0 * x / (x * x + 1.0 + sigma + _EPS))


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    y = gt.mean()
    fg = pred[gt]
    bg = 1.0 - pred[~gt]
    return float(y * _object_score(fg) + (1.0 - y) * _object_score(bg))


def _round_half_up(x: float) -> int:
    # halves round away from zero (x is non-negative here), unlike np.round
    return int(np.floor(x + 0.5))


def _centroid(gt: np.ndarray) -> tuple:
    H, W = gt.shape
    if not gt.any():
        return _round_half_up(W / 2), _round_half_up(H / 2)
    ys, xs = np.nonzero(gt)
    # 1-based split position, as in the reference implementation
    return _round_half_up(xs.mean() + 1), _round_half_up(ys.mean() + 1)


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    if n == 0:
        return 0.0
    x = pred.mean()
    y = gt.mean()
    sx = ((pred - x) ** 2).sum() / (n - 1 + _EPS)
    sy = ((gt - y) ** 2).sum() / (n - 1 + _EPS)
    sxy = ((pred - x) * (gt - y)).sum() / (n - 1 + _EPS)
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return float(alpha / (beta + _EPS))
    if beta == 0:
        return 1.0
    return 0.0


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    H, W = gt.shape
    cx, cy = _centroid(gt)
    area = H * W
    w1 = cx * cy / area
    w2 = (W - cx) * cy / area
    w3 = cx * (H - cy) / area
    w4 = 1.0 - w1 - w2 - w3
    g = gt.astype(np.float64)
    quads = [
        (slice(0, cy), slice(0, cx)),
        (slice(0, cy), slice(cx, W)),
        (slice(cy, H), slice(0, cx)),
        (slice(cy, H), slice(cx, W)),
    ]
    scores = [_ssim(pred[r, c], g[r, c]) for r, c in quads]
    return float(w1 * scores[0] + w2 * scores[1] + w3 * scores[2] + w4 * scores[3])


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = ALPHA) -> float:
    """Structure measure: ``alpha * S_object + (1 - alpha) * S_region``.

    All-background ground truth scores ``1 - mean(pred)``; all-foreground
    scores ``mean(pred)``. The result is clamped at 0.
    """
    _check_pair(pred, gt)
    pred = np.asarray(pred, dtype=np.float64)
    gt = _binary(gt)
    y = gt.mean()
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())
    s = alpha * _s_object(pred, gt) + (1 - alpha) * _s_region(pred, gt)
    return float(min(max(s, 0.0), 1.0))


# ---------------------------------------------------------------- datasets


@dataclass
class ImageMetrics:
    image: str
    max_f: float
    mae: float
    s: float
    empty_gt: bool = False


@dataclass
class MetricsReport:
    images: list = field(default_factory=list)
    pooled_curve: PRCurve = None
    mean_curve: tuple = None  # (precision, recall) averaged over images
    unmatched: list = field(default_factory=list)
    beta2: float = BETA2
    alpha: float = ALPHA

    @property
    def max_f(self) -> float:
        return float(np.mean([m.max_f for m in self.images]))

    @property
    def mae(self) -> float:
        return float(np.mean([m.mae for m in self.images]))

    @property
    def s(self) -> float:
        return float(np.mean([m.s for m in self.images]))

    @property
    def pooled_max_f(self) -> float:
        return max_f(self.pooled_curve, self.beta2)


def image_metrics(name: str, pred: np.ndarray, gt: np.ndarray) -> tuple:
    curve = pr_curve(pred, gt)
    m = ImageMetrics(name, max_f(curve), mae(pred, gt), s_measure(pred, gt), curve.empty_gt)
    return m, curve


def evaluate_pairs(pairs) -> MetricsReport:
    """``pairs``: iterable of (name, pred in [0,1], binary gt), evaluated in the given order."""
    report = MetricsReport()
    tp = fp = None
    n_pos = 0
    precisions, recalls = [], []
    for name, pred, gt in pairs:
        m, curve = image_metrics(name, pred, gt)
        report.images.append(m)
        tp = curve.tp.copy() if tp is None else tp + curve.tp
        fp = curve.fp.copy() if fp is None else fp + curve.fp
        n_pos += curve.n_pos
        precisions.append(curve.precision)
        recalls.append(curve.recall)
    if not report.images:
        return report
    report.pooled_curve = PRCurve.from_counts(tp, fp, n_pos)
    report.mean_curve = (np.mean(precisions, axis=0), np.mean(recalls, axis=0))
    return report


def _stems(directory) -> dict:
    return {p.stem: p for p in sorted(Path(directory).glob("*.pgm"))}


def evaluate_dataset(pred_dir, gt_dir) -> MetricsReport:
    """Evaluate filename-matched PGM predictions against ground-truth PGM masks."""
    preds = _stems(pred_dir)
    gts = _stems(gt_dir)
    matched = sorted(preds.keys() & gts.keys())
    unmatched = sorted((preds.keys() ^ gts.keys()))
    if unmatched:
        logger.warning("%d unmatched files excluded", len(unmatched))

    def pairs():
        for stem in matched:
            pred = read_image(preds[stem]).astype(np.float64) / 255.0
            gt = read_image(gts[stem]) > 127
            yield stem, pred, gt

    report = evaluate_pairs(pairs())
    report.unmatched = unmatched
    return report


def write_report(report: MetricsReport, out_dir) -> None:
    """metrics.csv, pr_pooled.csv, pr_mean.csv and a plain-text summary.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image", "maxF", "MAE", "S"])
        for m in report.images:
            w.writerow([m.image, repr(m.max_f), repr(m.mae), repr(m.s)])
    curves = {"pr_pooled.csv": (report.pooled_curve.precision, report.pooled_curve.recall),
              "pr_mean.csv": report.mean_curve}
    for fname, (prec, rec) in curves.items():
        with open(out / fname, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "precision", "recall"])
            for t in range(N_THRESHOLDS):
                w.writerow([t, repr(float(prec[t])), repr(float(rec[t]))])
    (out / "summary.txt").write_text(format_report(report), encoding="utf-8")


def format_report(report: MetricsReport) -> str:
    lines = [f"{'image':<24} {'maxF':>8} {'MAE':>8} {'S':>8}"]
    for m in report.images:
        flag = "  (empty gt)" if m.empty_gt else ""
        lines.append(f"{m.image:<24} {m.max_f:8.4f} {m.mae:8.4f} {m.s:8.4f}{flag}")
    lines.append("-" * 51)
    lines.append(f"{'mean of per-image':<24} {report.max_f:8.4f} {report.mae:8.4f} {report.s:8.4f}")
    lines.append(f"{'pooled-count maxF':<24} {report.pooled_max_f:8.4f}")
    lines.append(f"images: {len(report.images)}  unmatched: {len(report.unmatched)}")
    return "\n".join(lines) + "\n"


def read_metrics_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return [ImageMetrics(r["image"], float(r["maxF"]), float(r["MAE"]), float(r["S"])) for r in csv.DictReader(fh)]
