"""Multi-label evaluation metrics: average precision, ROC-AUC, F1, and
macro aggregation with Student-t confidence intervals across runs.

All three base metrics operate on one class's pooled (score, truth) pairs
and are invariant under strictly monotone score transformations (F1's
threshold maps along). Classes are macro-averaged inside a run; run-level
values are then summarized as mean +/- half-width at 0.95 confidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.stats

from .errors import DataError


class UndefinedMetricError(DataError):
    """The metric is undefined for this truth vector (e.g. no positives)."""


def _validate(scores, truth) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(truth)
    if s.ndim != 1 or s.shape != t.shape:
        raise DataError(
            f"scores {s.shape} and truth {t.shape} must be matching vectors"
        )
    if not np.all(np.isfinite(s)):
        raise DataError("scores contain non-finite values")
    if not np.all((t == 0) | (t == 1)):
        raise DataError("truth must be binary")
    return s, t.astype(bool)


def average_precision(scores, truth) -> float:
    """Rank-based AP: mean over positives of precision at their rank.

    Scores sort descending with a stable order, so tied scores keep input
    order.
    """
    s, t = _validate(scores, truth)
    n_pos = int(t.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    order = np.argsort(-s, kind="stable")
    hits = t[order]
    cum_pos = np.cumsum(hits)
    ranks = np.arange(1, len(s) + 1)
    return float((cum_pos[hits] / ranks[hits]).sum() / n_pos)


def roc_auc(scores, truth) -> float:
    """Mann-Whitney U / (P*N); tied score pairs count one half."""
    s, t = _validate(scores, truth)
    n_pos = int(t.sum())
    n_neg = len(t) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both a positive and a negative")
    ranks = scipy.stats.rankdata(s)  # average ranks handle ties
    u = ranks[t].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def f1(scores, truth, threshold: float = 0.5) -> float:
    """2PR/(P+R) after thresholding scores at >= threshold; 0 when P+R=0."""
    s, t = _validate(scores, truth)
    pred = s >= threshold
    tp = int(np.sum(pred & t))
    fp = int(np.sum(pred & ~t))
    fn = int(np.sum(~pred & t))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return float(2.0 * precision * recall / (precision + recall))


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    half_width: float  # 0.95 Student-t half-width across runs
    per_run: tuple[float, ...]

    def __str__(self):
        return f"{100 * self.mean:.2f}±{100 * self.half_width:.2f}"


@dataclass(frozen=True)
class MetricsReport:
    """Macro mAP / AUC / F1 with confidence intervals, plus breakdowns."""

    map: MetricSummary
    auc: MetricSummary
    f1: MetricSummary
    per_class: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    skipped_classes: tuple[str, ...] = ()
    metadata: Mapping[str, object] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "map": {"mean": self.map.mean, "half_width": self.map.half_width,
                    "per_run": list(self.map.per_run)},
            "auc": {"mean": self.auc.mean, "half_width": self.auc.half_width,
                    "per_run": list(self.auc.per_run)},
            "f1": {"mean": self.f1.mean, "half_width": self.f1.half_width,
                   "per_run": list(self.f1.per_run)},
            "per_class": {c: dict(v) for c, v in self.per_class.items()},
            "skipped_classes": list(self.skipped_classes),
            "metadata": dict(self.metadata),
        }


def t_interval_half_width(values: Sequence[float], confidence: float = 0.95) -> float:
    """Student-t half-width over independent runs; 0 for a single run."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return 0.0
    s = v.std(ddof=1)
    quantile = scipy.stats.t.ppf(0.5 + confidence / 2.0, df=v.size - 1)
    return float(quantile * s / np.sqrt(v.size))


def summarize_runs(values: Sequence[float], confidence: float = 0.95) -> MetricSummary:
    if not len(values):
        raise DataError("need at least one run to summarize")
    v = [float(x) for x in values]
    return MetricSummary(
        mean=float(np.mean(v)),
        half_width=t_interval_half_width(v, confidence),
        per_run=tuple(v),
    )


def macro_metrics(
    per_class_pairs: Mapping[str, tuple[Sequence[float], Sequence[int]]],
    threshold: float = 0.5,
) -> tuple[dict[str, float], dict[str, dict[str, float]], list[str]]:
    """Macro-average AP/AUC/F1 over classes from pooled (scores, truth) pairs.

    Classes whose truth makes a metric undefined are skipped for that metric
    and reported back to the caller.
    """
    aps, aucs, f1s = [], [], []
    per_class: dict[str, dict[str, float]] = {}
    skipped: list[str] = []
    for c in sorted(per_class_pairs):
        scores, truth = per_class_pairs[c]
        entry: dict[str, float] = {}
        try:
            entry["ap"] = average_precision(scores, truth)
            aps.append(entry["ap"])
        except UndefinedMetricError:
            skipped.append(c)
        try:
            entry["auc"] = roc_auc(scores, truth)
            aucs.append(entry["auc"])
        except UndefinedMetricError:
            pass
        entry["f1"] = f1(scores, truth, threshold)
        f1s.append(entry["f1"])
        per_class[c] = entry
    if not aps:
        raise UndefinedMetricError("no class had a defined average precision")
    macro = {
        "map": float(np.mean(aps)),
        "auc": float(np.mean(aucs)) if aucs else float("nan"),
        "f1": float(np.mean(f1s)),
    }
    return macro, per_class, skipped


def aggregate(
    per_run_metrics: Sequence[Mapping[str, float]],
    confidence: float = 0.95,
    per_class: Mapping[str, Mapping[str, float]] | None = None,
    skipped_classes: Iterable[str] = (),
    metadata: Mapping[str, object] | None = None,
) -> MetricsReport:
    """Mean +/- t half-width across runs of macro metrics.

    Order of runs does not matter.
    """
    if not per_run_metrics:
        raise DataError("need at least one run to aggregate")
    return MetricsReport(
        map=summarize_runs([m["map"] for m in per_run_metrics], confidence),
        auc=summarize_runs([m["auc"] for m in per_run_metrics], confidence),
        f1=summarize_runs([m["f1"] for m in per_run_metrics], confidence),
        per_class=dict(per_class or {}),
        skipped_classes=tuple(skipped_classes),
        metadata=dict(metadata or {}),
    )
