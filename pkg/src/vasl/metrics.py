"""Pixel-level localization metrics and report aggregation.

Conventions: a prediction is positive where ``prob >= threshold``.  When
prediction and ground truth are both empty, IoU and F1 are 1 (nothing was
tampered and nothing was flagged).  AUC is undefined for single-class
ground truth; such rows carry NaN and are left out of the AUC mean.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import data

log = logging.getLogger(__name__)


class MetricError(ValueError):
    pass


def _binary(a, what):
    a = np.asarray(a)
    if a.dtype == bool:
        return a
    if not np.all((a == 0) | (a == 1)):
        raise MetricError(f"{what} must be binary")
    return a == 1


def _pair(pred, gt):
    p = _binary(pred, "prediction")
    g = _binary(gt, "ground truth")
    if p.shape != g.shape:
        raise MetricError(f"shape mismatch {p.shape} vs {g.shape}")
    return p, g


def binarize(prob, threshold=0.5):
    if not 0.0 <= threshold <= 1.0:
        raise MetricError(f"threshold {threshold} outside [0, 1]")
    return (np.asarray(prob) >= threshold).astype(np.uint8)


def confusion(pred, gt):
    p, g = _pair(pred, gt)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(p.size - tp - fp - fn)
    return tp, fp, fn, tn


def iou_from_counts(tp, fp, fn):
    union = tp + fp + fn
    return 1.0 if union == 0 else tp / union


def f1_from_counts(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def iou(pred, gt):
    tp, fp, fn, _ = confusion(pred, gt)
    return iou_from_counts(tp, fp, fn)


def pixel_accuracy(pred, gt):
    tp, fp, fn, tn = confusion(pred, gt)
    total = tp + fp + fn + tn
    if total == 0:
        raise MetricError("empty masks")
    return (tp + tn) / total


def pixel_f1(pred, gt):
    tp, fp, fn, _ = confusion(pred, gt)
    return f1_from_counts(tp, fp, fn)


def pixel_auc(prob, gt):
    """ROC area via the Mann-Whitney rank statistic (mid-ranks for ties)."""
    scores = np.asarray(prob, dtype=np.float64).reshape(-1)
    g = _binary(gt, "ground truth").reshape(-1)
    if scores.shape != g.shape:
        raise MetricError(f"shape mismatch {scores.shape} vs {g.shape}")
    n_pos = int(np.count_nonzero(g))
    n_neg = g.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both tampered and clean pixels")
    ranks = rankdata(scores, method="average")
    u = ranks[g].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class ImageRow:
    id: str
    iou: float
    accuracy: float
    f1: float
    auc: float
    tp: int
    fp: int
    fn: int
    tn: int


def score_image(sid, prob, gt, threshold=0.5):
    prob = np.asarray(prob, dtype=np.float64)
    pred = binarize(prob, threshold)
    tp, fp, fn, tn = confusion(pred, gt)
    try:
        auc = pixel_auc(prob, gt)
    except MetricError:
        auc = math.nan
    return ImageRow(sid, iou_from_counts(tp, fp, fn), (tp + tn) / (tp + fp + fn + tn),
                    f1_from_counts(tp, fp, fn), auc, tp, fp, fn, tn)


@dataclass
class MetricsReport:
    threshold: float
    rows: list
    pooled_auc: float = math.nan
    notes: list = field(default_factory=list)

    def means(self):
        """Unweighted per-image means; AUC over rows where it is defined."""
        if not self.rows:
            return {"iou": math.nan, "acc": math.nan, "f1": math.nan, "auc": math.nan}
        aucs = [r.auc for r in self.rows if not math.isnan(r.auc)]
        return {
            "iou": float(np.mean([r.iou for r in self.rows])),
            "acc": float(np.mean([r.accuracy for r in self.rows])),
            "f1": float(np.mean([r.f1 for r in self.rows])),
            "auc": float(np.mean(aucs)) if aucs else math.nan,
        }

    def pooled(self):
        """Metrics from confusion counts summed over every pixel of every image."""
        tp = sum(r.tp for r in self.rows)
        fp = sum(r.fp for r in self.rows)
        fn = sum(r.fn for r in self.rows)
        tn = sum(r.tn for r in self.rows)
        total = tp + fp + fn + tn
        return {
            "iou": iou_from_counts(tp, fp, fn),
            "acc": (tp + tn) / total if total else math.nan,
            "f1": f1_from_counts(tp, fp, fn),
            "auc": self.pooled_auc,
        }

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "iou", "acc", "f1", "auc"])
        for r in self.rows:
            w.writerow([r.id] + [_fmt(v) for v in (r.iou, r.accuracy, r.f1, r.auc)])
        return buf.getvalue()

    def to_text(self):
        lines = [f"threshold {self.threshold:g}",
                 f"{'id':<16s} {'iou':>8s} {'acc':>8s} {'f1':>8s} {'auc':>8s} {'tp':>8s} {'fp':>8s} {'fn':>8s} {'tn':>8s}"]
        for r in self.rows:
            lines.append(f"{r.id:<16s} {_fmt(r.iou):>8s} {_fmt(r.accuracy):>8s} {_fmt(r.f1):>8s} "
                         f"{_fmt(r.auc):>8s} {r.tp:>8d} {r.fp:>8d} {r.fn:>8d} {r.tn:>8d}")
        for label, vals in (("mean(image)", self.means()), ("pooled(pixel)", self.pooled())):
            lines.append(f"{label:<16s} " + " ".join(f"{_fmt(vals[k]):>8s}" for k in ("iou", "acc", "f1", "auc")))
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"

    def summary(self):
        m = self.means()
        return (f"n={len(self.rows)} threshold={self.threshold:g} iou={_fmt(m['iou'])} "
                f"acc={_fmt(m['acc'])} f1={_fmt(m['f1'])} auc={_fmt(m['auc'])}")


def _fmt(v):
    return "nan" if math.isnan(v) else f"{v:.6f}"


def evaluate_arrays(items, threshold=0.5):
    """``items`` is an iterable of ``(id, prob, gt)``; returns a :class:`MetricsReport`."""
    rows = []
    notes = []
    all_prob = []
    all_gt = []
    for sid, prob, gt in items:
        prob = np.asarray(prob, dtype=np.float64)
        gt = np.asarray(gt)
        if prob.shape != gt.shape:
            raise MetricError(f"{sid}: prediction shape {prob.shape} != ground truth {gt.shape}")
        row = score_image(sid, prob, gt, threshold)
        if math.isnan(row.auc):
            notes.append(f"{sid}: single-class ground truth, AUC undefined and excluded from the mean")
            log.info(notes[-1])
        rows.append(row)
        all_prob.append(prob.reshape(-1))
        all_gt.append(_binary(gt, "ground truth").reshape(-1))
    report = MetricsReport(threshold, rows, notes=notes)
    if rows:
        try:
            report.pooled_auc = pixel_auc(np.concatenate(all_prob), np.concatenate(all_gt))
        except MetricError:
            pass
    return report


def _prediction_path(pred_dir, sid):
    for suffix in (".prob.pgm", ".mask.pgm"):
        p = Path(pred_dir) / f"{sid}{suffix}"
        if p.exists():
            return p
    return None


def load_prediction(path):
    arr, maxval = data.load_image(path)
    if arr.ndim != 2:
        raise MetricError(f"{path}: predictions must be grayscale")
    return arr / maxval


def load_ground_truth(path):
    arr, maxval = data.load_image(path)
    if arr.ndim != 2:
        raise MetricError(f"{path}: masks must be grayscale")
    if not np.all((arr == 0) | (arr == maxval)):
        raise MetricError(f"{path}: mask is not binary")
    return (arr == maxval).astype(np.uint8)


def evaluate_dirs(pred_dir, gt_dir, threshold=0.5):
    """Score ``<id>.prob.pgm`` (or ``<id>.mask.pgm``) predictions against
    ``<id>.mask.pgm`` ground truth for every id in ``gt_dir``'s manifest."""
    ids = data.read_manifest(gt_dir)

    def items():
        for sid in ids:
            ppath = _prediction_path(pred_dir, sid)
            if ppath is None:
                raise MetricError(f"missing prediction for id {sid!r} in {pred_dir}")
            yield sid, load_prediction(ppath), load_ground_truth(Path(gt_dir) / f"{sid}.mask.pgm")

    return evaluate_arrays(items(), threshold)
