"""PR curves over 256 thresholds, F-measure and MAE for saliency maps.

A pixel is predicted salient at threshold ``t`` iff ``pred * 255 > t``.
Precision is 1 when nothing is predicted; recall is 1 when the mask is empty.
Per-threshold precision and recall are averaged over samples, and the
F-measure is computed from those averages.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

THRESHOLDS = np.arange(256)
BETA2 = 0.3


def _as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def _check_pair(pred: np.ndarray, mask: np.ndarray) -> None:
    if pred.shape != mask.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match mask shape {mask.shape}")


def pr_counts(pred, mask) -> tuple[np.ndarray, np.ndarray, int]:
    """Integer (TP, predicted-positive) counts for every threshold 0..255 and
    the number of mask pixels."""
    p, m = _as_array(pred), _as_array(mask)
    _check_pair(p, m)
    levels = p.ravel() * 255.0
    fg = m.ravel() > 0.5
    all_sorted = np.sort(levels)
    fg_sorted = np.sort(levels[fg])
    predicted = all_sorted.size - np.searchsorted(all_sorted, THRESHOLDS, side="right")
    tp = fg_sorted.size - np.searchsorted(fg_sorted, THRESHOLDS, side="right")
    return tp, predicted, int(fg.sum())


def _rates(tp: np.ndarray, predicted: np.ndarray, positives: int) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 1.0)
    recall = tp / positives if positives > 0 else np.ones(tp.shape)
    return precision, recall


def pr_at_threshold(pred, mask, thr: int) -> tuple[float, float]:
    if not 0 <= thr <= 255:
        raise ValueError(f"threshold must be in 0..255, got {thr}")
    p, m = _as_array(pred), _as_array(mask)
    _check_pair(p, m)
    positive = p * 255.0 > thr
    fg = m > 0.5
    tp = int(np.count_nonzero(positive & fg))
    npred = int(np.count_nonzero(positive))
    npos = int(np.count_nonzero(fg))
    precision = tp / npred if npred else 1.0
    recall = tp / npos if npos else 1.0
    return precision, recall


def pr_curve(pred, mask) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall arrays over thresholds 0..255 for one sample."""
    return _rates(*pr_counts(pred, mask))


def f_measure(precision: float, recall: float, beta2: float = BETA2) -> float:
    if precision == recall:
        return float(precision)
    denom = beta2 * precision + recall
    if denom == 0:
        return 0.0
    return (1.0 + beta2) * precision * recall / denom


def mae(pred, mask) -> float:
    p, m = _as_array(pred), _as_array(mask)
    _check_pair(p, m)
    return math.fsum(np.abs(p - m).ravel()) / p.size


@dataclass
class EvalReport:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    fmeasure: np.ndarray
    max_f: float
    max_f_threshold: int
    mean_f: float
    mae: float
    n_samples: int

    def rows(self):
        for t, p, r, f in zip(self.thresholds, self.precision, self.recall, self.fmeasure):
            yield int(t), float(p), float(r), float(f)

    def to_csv(self) -> str:
        lines = ["threshold,precision,recall,fmeasure"]
        lines += [f"{t},{p:.10f},{r:.10f},{f:.10f}" for t, p, r, f in self.rows()]
        lines.append(f"max_f,{self.max_f:.10f},{self.max_f_threshold}")
        lines.append(f"mean_f,{self.mean_f:.10f}")
        lines.append(f"mae,{self.mae:.10f}")
        lines.append(f"n_samples,{self.n_samples}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path: os.PathLike) -> None:
        Path(path).write_text(self.to_csv())


def evaluate_set(pairs: Sequence) -> EvalReport:
    """Aggregate report over ``(pred, mask)`` pairs.

    Sums use exactly rounded ``math.fsum`` so the result does not depend on
    sample order.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("evaluate_set needs at least one (pred, mask) pair")
    n = len(pairs)
    precisions, recalls, maes = [], [], []
    for pred, mask in pairs:
        p, r = pr_curve(pred, mask)
        precisions.append(p)
        recalls.append(r)
        maes.append(mae(pred, mask))
    P = np.stack(precisions)
    R = np.stack(recalls)
    avg_p = np.array([math.fsum(P[:, t]) / n for t in THRESHOLDS])
    avg_r = np.array([math.fsum(R[:, t]) / n for t in THRESHOLDS])
    f = np.array([f_measure(p, r) for p, r in zip(avg_p, avg_r)])
    best = int(np.argmax(f))
    return EvalReport(
        thresholds=THRESHOLDS.copy(),
        precision=avg_p,
        recall=avg_r,
        fmeasure=f,
        max_f=float(f[best]),
        max_f_threshold=best,
        mean_f=math.fsum(f) / f.size,
        mae=math.fsum(maes) / n,
        n_samples=n,
    )
