"""Evaluation metrics: ANLS, IoU / COCO-style mAP, entity F1 and accuracy"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .entities import BBox, DetectionObject, EntitySpan
from .errors import InputValidationError

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass
class EvalReport:
    """
    Headline metric plus per-item breakdown.

    With aggregation "mean" the value is the mean of the breakdown scores; with
    "micro_f1" it is the F1 of the summed tp/fp/fn counts.
    """
    metric: str
    value: float
    breakdown: list[dict[str, Any]] = field(default_factory=list)
    aggregation: str = "mean"
    extra: dict[str, float] = field(default_factory=dict)

    def aggregate(self) -> float:
        if not self.breakdown:
            return 0.0
        if self.aggregation == "micro_f1":
            tp = sum(b["tp"] for b in self.breakdown)
            fp = sum(b["fp"] for b in self.breakdown)
            fn = sum(b["fn"] for b in self.breakdown)
            return _f1(tp, fp, fn)[2]
        return float(np.mean([b["score"] for b in self.breakdown]))

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric,
            "value": self.value,
            "aggregation": self.aggregation,
            "extra": dict(sorted(self.extra.items())),
            "breakdown": self.breakdown,
        }


# ============ ANLS ============

def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance, two-row dynamic programming"""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (ca != cb),
            ))
        previous = current
    return previous[-1]


def _normalize(s: str) -> str:
    return " ".join(s.strip().lower().split())


def nls(a: str, b: str) -> float:
    a, b = _normalize(a), _normalize(b)
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - edit_distance(a, b) / longest


def anls(pred: str, golds: Sequence[str], tau: float = 0.5) -> float:
    """max over golds of NLS, zeroed below tau"""
    if not golds:
        raise InputValidationError("anls needs at least one gold answer")
    best = 0.0
    for gold in golds:
        score = nls(pred, gold)
        if score >= tau:
            best = max(best, score)
    return best


def anls_report(
    preds: Sequence[str], golds: Sequence[Sequence[str]], tau: float = 0.5,
    ids: Optional[Sequence[str]] = None,
) -> EvalReport:
    _check_lengths(preds, golds)
    ids = ids or [str(i) for i in range(len(preds))]
    breakdown = [
        {"id": i, "score": anls(p, g, tau)} for i, p, g in zip(ids, preds, golds)
    ]
    report = EvalReport("anls", 0.0, breakdown)
    report.value = report.aggregate()
    return report


# ============ Detection ============

def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(0.0, iw) * max(0.0, ih)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def interpolated_ap(tp: np.ndarray, n_gold: int) -> float:
    """101-point interpolated AP from score-ordered true-positive flags"""
    if n_gold == 0:
        return 0.0
    if len(tp) == 0:
        return 0.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(1 - tp)
    recall = tp_cum / n_gold
    precision = tp_cum / np.maximum(tp_cum + fp_cum, np.finfo(np.float64).eps)
    # precision envelope: best precision at any recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def _match_class(
    preds: Sequence[Sequence[DetectionObject]],
    golds: Sequence[Sequence[DetectionObject]],
    label: str,
    threshold: float,
) -> tuple[np.ndarray, int]:
    scored: list[tuple[float, int, int]] = []
    for img, objs in enumerate(preds):
        for k, obj in enumerate(objs):
            if obj.label == label:
                scored.append((obj.score, img, k))
    # highest score first; ties keep image / prediction order
    order = sorted(range(len(scored)), key=lambda i: -scored[i][0])
    gold_boxes = [[g.box for g in objs if g.label == label] for objs in golds]
    used = [np.zeros(len(g), dtype=bool) for g in gold_boxes]
    tp = np.zeros(len(scored))
    for rank, i in enumerate(order):
        _, img, k = scored[i]
        box = preds[img][k].box
        best, best_iou = -1, threshold
        for j, gbox in enumerate(gold_boxes[img]):
            if used[img][j]:
                continue
            overlap = iou(box, gbox)
            if overlap >= best_iou and (best < 0 or overlap > best_iou):
                best, best_iou = j, overlap
        if best >= 0:
            used[img][best] = True
            tp[rank] = 1.0
    return tp, sum(len(g) for g in gold_boxes)


def mean_ap(
    preds: Sequence[Sequence[DetectionObject]],
    golds: Sequence[Sequence[DetectionObject]],
    iou_thresholds: Iterable[float] = COCO_THRESHOLDS,
) -> EvalReport:
    """
    COCO-style mAP: per class and IoU threshold, greedy highest-IoU matching in score
    order, 101-point interpolated AP; averaged over classes with golds and thresholds.
    """
    _check_lengths(preds, golds)
    thresholds = list(iou_thresholds)
    labels = sorted({g.label for objs in golds for g in objs})
    breakdown = []
    for label in labels:
        for t in thresholds:
            tp, n_gold = _match_class(preds, golds, label, t)
            breakdown.append({"id": f"{label}@{t:.2f}", "score": interpolated_ap(tp, n_gold)})
    report = EvalReport("map", 0.0, breakdown)
    report.value = report.aggregate()
    if 0.5 in thresholds:
        at50 = [b["score"] for b in breakdown if b["id"].endswith("@0.50")]
        report.extra["map50"] = float(np.mean(at50)) if at50 else 0.0
    return report


# ============ Entity F1 / accuracy ============

def _f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def entity_f1(
    preds: Sequence[Iterable[EntitySpan]], golds: Sequence[Iterable[EntitySpan]]
) -> tuple[float, float, float]:
    """Micro precision / recall / F1 with exact (label, start, end) matching per document"""
    report = entity_f1_report(preds, golds)
    return report.extra["precision"], report.extra["recall"], report.value


def entity_f1_report(
    preds: Sequence[Iterable[EntitySpan]], golds: Sequence[Iterable[EntitySpan]],
    ids: Optional[Sequence[str]] = None,
) -> EvalReport:
    _check_lengths(preds, golds)
    ids = ids or [str(i) for i in range(len(preds))]
    breakdown = []
    for doc_id, p, g in zip(ids, preds, golds):
        p, g = set(p), set(g)
        tp = len(p & g)
        breakdown.append({"id": doc_id, "tp": tp, "fp": len(p) - tp, "fn": len(g) - tp})
    tp = sum(b["tp"] for b in breakdown)
    fp = sum(b["fp"] for b in breakdown)
    fn = sum(b["fn"] for b in breakdown)
    precision, recall, f1 = _f1(tp, fp, fn)
    return EvalReport("entity_f1", f1, breakdown, aggregation="micro_f1",
                      extra={"precision": precision, "recall": recall})


def accuracy(preds: Sequence[int], golds: Sequence[int]) -> float:
    return accuracy_report(preds, golds).value


def accuracy_report(
    preds: Sequence[int], golds: Sequence[int], ids: Optional[Sequence[str]] = None
) -> EvalReport:
    _check_lengths(preds, golds)
    ids = ids or [str(i) for i in range(len(preds))]
    breakdown = [
        {"id": i, "score": float(int(p) == int(g))} for i, p, g in zip(ids, preds, golds)
    ]
    report = EvalReport("accuracy", 0.0, breakdown)
    report.value = report.aggregate()
    return report


def _check_lengths(preds: Sequence, golds: Sequence) -> None:
    if len(preds) != len(golds):
        raise InputValidationError(f"{len(preds)} predictions for {len(golds)} gold items")
