"""Frame-level ROC-AUC / AP and pixel-level ROC-AUC.

AUCs are micro-averaged: scores of all videos are pooled before ranking.
Tied scores count one half per tied positive/negative pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, MetricUndefined
from .masks import resize_nearest


@dataclass
class EvalRecord:
    video_id: str
    frame_scores: np.ndarray
    frame_labels: np.ndarray
    pixel_scores: np.ndarray | None = None
    pixel_labels: np.ndarray | None = None

    def __post_init__(self):
        self.frame_scores = np.asarray(self.frame_scores, dtype=np.float64)
        self.frame_labels = np.asarray(self.frame_labels)
        if self.frame_scores.shape != self.frame_labels.shape:
            raise DataError(f"{self.video_id}: {self.frame_scores.shape} scores vs {self.frame_labels.shape} labels")
        if not np.isin(self.frame_labels, (0, 1)).all():
            raise DataError(f"{self.video_id}: frame labels must be 0/1")


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise DataError(f"{s.shape[0]} scores vs {y.shape[0]} labels")
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be 0/1")
    if not np.all(np.isfinite(s)):
        raise DataError("scores must be finite")
    return s, y.astype(bool)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney form of the ROC area using average ranks for ties."""
    s, y = _check_binary(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefined("undefined AUC: labels contain a single class")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Mean over positives of the precision at that positive's rank.

    Ranking is by descending score; equal scores keep input order.
    """
    s, y = _check_binary(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricUndefined("undefined AP: no positive labels")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    ranks = np.flatnonzero(hits) + 1
    return math.fsum(np.arange(1, n_pos + 1) / ranks) / n_pos


def pixel_auc(records) -> float:
    scores, labels = [], []
    for r in records:
        if r.pixel_scores is None or r.pixel_labels is None:
            raise DataError(f"{r.video_id}: pixel scores/labels missing")
        ps = np.asarray(r.pixel_scores, dtype=np.float64)
        pl = np.asarray(r.pixel_labels)
        if pl.shape[0] != ps.shape[0]:
            raise DataError(f"{r.video_id}: {pl.shape[0]} label frames vs {ps.shape[0]} score frames")
        if pl.shape != ps.shape:
            pl = resize_nearest(pl, ps.shape[-2:])
        scores.append(ps.ravel())
        labels.append(pl.ravel())
    if not scores:
        raise MetricUndefined("undefined AUC: no records")
    return roc_auc(np.concatenate(scores), np.concatenate(labels))


def frame_auc(records) -> float:
    return roc_auc(np.concatenate([r.frame_scores for r in records]),
                   np.concatenate([r.frame_labels for r in records]))


def frame_ap(records) -> float:
    return average_precision(np.concatenate([r.frame_scores for r in records]),
                             np.concatenate([r.frame_labels for r in records]))
