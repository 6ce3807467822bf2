"""Evaluation metrics: multilabel mAP for clips, per-video macro F1 for segmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


def average_precision(scores, labels) -> float:
    """Mean of precision@rank over the ranks of the positives.

    Scores are ranked descending; equal scores keep their original order.
    Returns NaN when there are no positives.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"average_precision: {len(scores)} scores for {len(labels)} labels")
    pos = labels.astype(bool)
    if not pos.any():
        return float("nan")
    order = np.argsort(-scores, kind="stable")
    hits = pos[order]
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision[hits].mean())


@dataclass
class MapReport:
    mean: float
    per_criterion: list[float] = field(default_factory=list)


def map_over_criteria(scores, targets) -> MapReport:
    """Unweighted mean of per-column AP, skipping columns without positives."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if scores.ndim == 1:
        scores, targets = scores[:, None], targets.reshape(-1, 1)
    if scores.shape != targets.shape:
        raise ValueError(f"map_over_criteria: scores {scores.shape} vs targets {targets.shape}")
    aps = [average_precision(scores[:, k], targets[:, k]) for k in range(scores.shape[1])]
    valid = [a for a in aps if not np.isnan(a)]
    skipped = [k for k, a in enumerate(aps) if np.isnan(a)]
    if skipped:
        log.warning("criteria %s have no positive labels; excluded from mAP", skipped)
    if not valid:
        raise ValueError("map_over_criteria: no criterion has a positive label")
    return MapReport(float(np.mean(valid)), aps)


def class_f1(pred, true) -> dict[int, float]:
    """F1 of every class present in ``true``; 0 when precision + recall is 0."""
    pred = np.asarray(pred).reshape(-1)
    true = np.asarray(true).reshape(-1)
    if pred.shape != true.shape:
        raise ValueError(f"macro_f1: {len(pred)} predictions for {len(true)} frames")
    out = {}
    for c in np.unique(true):
        tp = np.sum((pred == c) & (true == c))
        fp = np.sum((pred == c) & (true != c))
        fn = np.sum((pred != c) & (true == c))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        out[int(c)] = float(2 * p * r / (p + r)) if p + r else 0.0
    return out


def macro_f1(pred, true) -> float:
    """Macro F1 over the classes present in ``true``."""
    scores = list(class_f1(pred, true).values())
    return float(np.mean(scores)) if scores else float("nan")


@dataclass
class F1Report:
    mean: float
    per_video: list[float] = field(default_factory=list)
    per_class: dict[int, float] = field(default_factory=dict)  # averaged over videos containing the class


def video_macro_f1(preds: Sequence, trues: Sequence) -> F1Report:
    """Per-video macro F1 averaged (unweighted) across videos."""
    if len(preds) != len(trues):
        raise ValueError(f"video_macro_f1: {len(preds)} predicted videos for {len(trues)} labelled")
    per_class: dict[int, list[float]] = {}
    per = []
    for p, t in zip(preds, trues):
        scores = class_f1(p, t)
        per.append(float(np.mean(list(scores.values()))) if scores else float("nan"))
        for c, f in scores.items():
            per_class.setdefault(c, []).append(f)
    return F1Report(float(np.mean(per)) if per else float("nan"), per,
                    {c: float(np.mean(v)) for c, v in sorted(per_class.items())})
