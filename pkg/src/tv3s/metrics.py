"""Segmentation accuracy (mIoU) and temporal consistency (VC_n / mVC_n)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

IGNORE_LABEL = 255


class UndefinedMetricWarning(RuntimeWarning):
    pass


def confusion_matrix(truth: np.ndarray, pred: np.ndarray, num_classes: int,
                     ignore_label: int = IGNORE_LABEL) -> np.ndarray:
    """``C x C`` counts, rows = truth, cols = prediction; ignored pixels dropped."""
    truth = np.asarray(truth).reshape(-1)
    pred = np.asarray(pred).reshape(-1)
    if truth.shape != pred.shape:
        raise ValueError(f"truth {truth.shape} and prediction {pred.shape} differ")
    keep = truth != ignore_label
    t, p = truth[keep].astype(np.int64), pred[keep].astype(np.int64)
    if np.any((t < 0) | (t >= num_classes) | (p < 0) | (p >= num_classes)):
        raise ValueError(f"labels outside [0, {num_classes})")
    return np.bincount(t * num_classes + p, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def per_class_iou(conf: np.ndarray) -> np.ndarray:
    conf = np.asarray(conf, dtype=np.float64)
    inter = np.diag(conf)
    union = conf.sum(axis=0) + conf.sum(axis=1) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1), np.nan)


def miou(conf: np.ndarray) -> float:
    """Mean IoU over classes present in truth or prediction; NaN for an empty matrix."""
    iou = per_class_iou(conf)
    if np.all(np.isnan(iou)):
        warnings.warn("empty confusion matrix: mIoU undefined", UndefinedMetricWarning)
        return float("nan")
    return float(np.nanmean(iou))


def pixel_accuracy(conf: np.ndarray) -> float:
    conf = np.asarray(conf)
    total = conf.sum()
    return float(np.trace(conf) / total) if total else float("nan")


def vc_n(masks: Sequence[np.ndarray], preds: Sequence[np.ndarray], n: int, strict: bool = True,
         ignore_label: int = IGNORE_LABEL) -> float:
    """Video consistency over all windows of ``n`` consecutive frames.

    Per window the denominator is the set of pixels whose ground-truth label
    is identical in every frame; the numerator additionally requires the
    predictions to agree across the window (and, when ``strict``, to equal
    that ground-truth label).  Windows with an empty denominator are skipped.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(masks) != len(preds):
        raise ValueError(f"{len(masks)} masks but {len(preds)} predictions")
    if len(masks) < n:
        raise ValueError(f"video has {len(masks)} frames, fewer than n = {n}")
    M = np.stack([np.asarray(m) for m in masks])
    P = np.stack([np.asarray(p) for p in preds])
    if M.shape != P.shape:
        raise ValueError(f"mask stack {M.shape} and prediction stack {P.shape} differ")
    ratios = []
    for i in range(len(M) - n + 1):
        wm, wp = M[i:i + n], P[i:i + n]
        truth_agree = np.all(wm == wm[0], axis=0) & (wm[0] != ignore_label)
        denom = int(truth_agree.sum())
        if denom == 0:
            continue
        common = truth_agree & np.all(wp == wp[0], axis=0)
        if strict:
            common &= wp[0] == wm[0]
        ratios.append(common.sum() / denom)
    if not ratios:
        warnings.warn("no window with a consistent ground-truth region", UndefinedMetricWarning)
        return float("nan")
    return float(np.mean(ratios))


@dataclass
class ConsistencyReport:
    value: float
    videos: int
    skipped: int


def mvc_report(videos: Iterable[tuple[Sequence[np.ndarray], Sequence[np.ndarray]]], n: int,
               strict: bool = True, ignore_label: int = IGNORE_LABEL) -> ConsistencyReport:
    """Unweighted mean of per-video VC_n; videos shorter than ``n`` are skipped and counted."""
    values, skipped = [], 0
    for masks, preds in videos:
        if len(masks) < n:
            skipped += 1
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UndefinedMetricWarning)
            v = vc_n(masks, preds, n, strict, ignore_label)
        if np.isnan(v):
            skipped += 1
            continue
        values.append(v)
    if not values:
        warnings.warn(f"no video eligible for VC_{n}", UndefinedMetricWarning)
        return ConsistencyReport(float("nan"), 0, skipped)
    return ConsistencyReport(float(np.mean(values)), len(values), skipped)


def mvc(videos, n: int, strict: bool = True, ignore_label: int = IGNORE_LABEL) -> float:
    return mvc_report(videos, n, strict, ignore_label).value


def format_report(name: str, value: float, videos: int, skipped: int = 0) -> str:
    return f"metric={name} value={value:.6f} videos={videos} skipped={skipped}"
