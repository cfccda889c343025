"""Classification metrics: Accuracy/P/R/F1 (binary), Macro-F1/Weighted-F1 (3-way),
and multi-seed mean/standard-deviation aggregation."""

from __future__ import annotations

from math import sqrt
from typing import Sequence

from .errors import InputError


def _check_lengths(preds: Sequence[int], golds: Sequence[int]) -> None:
    if len(preds) != len(golds):
        raise InputError(f"length mismatch: {len(preds)} preds vs {len(golds)} golds")
    if not preds:
        raise InputError("empty prediction list")


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


def binary_metrics(preds: Sequence[int], golds: Sequence[int],
                   positive_class: int) -> dict[str, float]:
    _check_lengths(preds, golds)
    tp = sum(1 for p, g in zip(preds, golds) if p == positive_class and g == positive_class)
    fp = sum(1 for p, g in zip(preds, golds) if p == positive_class and g != positive_class)
    fn = sum(1 for p, g in zip(preds, golds) if p != positive_class and g == positive_class)
    correct = sum(1 for p, g in zip(preds, golds) if p == g)
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    return {"accuracy": correct / len(golds), "precision": precision,
            "recall": recall, "f1": f1}


def multiclass_metrics(preds: Sequence[int], golds: Sequence[int],
                       n_classes: int) -> dict[str, float]:
    _check_lengths(preds, golds)
    if any(not 0 <= x < n_classes for x in list(preds) + list(golds)):
        raise InputError(f"label outside [0, {n_classes})")
    f1s, supports = [], []
    for c in range(n_classes):
        tp = sum(1 for p, g in zip(preds, golds) if p == c and g == c)
        fp = sum(1 for p, g in zip(preds, golds) if p == c and g != c)
        fn = sum(1 for p, g in zip(preds, golds) if p != c and g == c)
        precision = _safe_div(tp, tp + fp)
        recall = _safe_div(tp, tp + fn)
        f1s.append(_safe_div(2.0 * precision * recall, precision + recall))
        supports.append(tp + fn)
    correct = sum(1 for p, g in zip(preds, golds) if p == g)
    total = len(golds)
    return {
        "accuracy": correct / total,
        "macro_f1": sum(f1s) / n_classes,
        "weighted_f1": sum(f * s for f, s in zip(f1s, supports)) / total,
    }


def aggregate_runs(runs: list[dict[str, float]]) -> dict[str, tuple[float, float]]:
    """Per-key arithmetic mean and population (N-divisor) standard deviation."""
    if not runs:
        raise InputError("aggregate_runs needs at least one run")
    keys = set(runs[0])
    for r in runs[1:]:
        if set(r) != keys:
            raise InputError(f"metric key mismatch: {sorted(keys)} vs {sorted(r)}")
    out = {}
    n = len(runs)
    for k in sorted(keys):
        vals = [r[k] for r in runs]
        mu = sum(vals) / n
        sd = sqrt(sum((v - mu) ** 2 for v in vals) / n)
        out[k] = (mu, sd)
    return out
