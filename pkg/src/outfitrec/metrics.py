"""Segmentation, localisation and classification metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._validation import check_unit_interval
from .errors import DimensionMismatchError, ValidationError
from .ingest import BoundingBox


@dataclass(frozen=True)
class EvalCounts:
    true_positive: int = 0
    false_positive: int = 0
    false_negative: int = 0

    def __add__(self, other):
        return EvalCounts(
            self.true_positive + other.true_positive,
            self.false_positive + other.false_positive,
            self.false_negative + other.false_negative,
        )

    @property
    def iou(self) -> float:
        denom = self.true_positive + self.false_positive + self.false_negative
        return self.true_positive / denom if denom else float("nan")

    @property
    def pixel_accuracy(self) -> float:
        denom = self.true_positive + self.false_negative
        return self.true_positive / denom if denom else float("nan")


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    inter = a.intersection_area(b)
    return inter / (a.area + b.area - inter)


# -- segmentation ------------------------------------------------------------


@dataclass
class SegmentationReport:
    classes: tuple
    counts: dict
    iou: dict
    pixel_accuracy: dict
    mean_iou: float
    mean_pixel_accuracy: float


def segmentation_counts(pred, truth, n_classes):
    """Per-class ``EvalCounts`` for one pair of label maps."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionMismatchError(f"prediction {pred.shape} and ground truth {truth.shape} differ")
    for name, arr in (("prediction", pred), ("ground truth", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValidationError(f"{name} has labels outside [0, {n_classes})")
    conf = np.bincount(truth.ravel() * n_classes + pred.ravel(), minlength=n_classes**2).reshape(n_classes, n_classes)
    tp = np.diag(conf)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    return [EvalCounts(int(tp[c]), int(fp[c]), int(fn[c])) for c in range(n_classes)]


def mask_metrics(predictions, ground_truth, classes) -> SegmentationReport:
    """Dataset-level IoU and pixel accuracy per class.

    ``predictions`` and ``ground_truth`` are sequences of integer label maps
    whose values index ``classes`` (background included). Counts accumulate
    over the whole dataset before the ratios are taken; means are unweighted
    over classes where the ratio is defined.
    """
    classes = tuple(classes)
    if len(predictions) != len(ground_truth):
        raise DimensionMismatchError("different numbers of prediction and ground-truth maps")
    totals = [EvalCounts() for _ in classes]
    for p, t in zip(predictions, ground_truth):
        totals = [a + b for a, b in zip(totals, segmentation_counts(p, t, len(classes)))]
    iou = {c: totals[i].iou for i, c in enumerate(classes)}
    pa = {c: totals[i].pixel_accuracy for i, c in enumerate(classes)}
    return SegmentationReport(
        classes=classes,
        counts={c: totals[i] for i, c in enumerate(classes)},
        iou=iou,
        pixel_accuracy=pa,
        mean_iou=_nanmean(iou.values()),
        mean_pixel_accuracy=_nanmean(pa.values()),
    )


def _nanmean(values):
    vals = [v for v in values if v == v]
    return sum(vals) / len(vals) if vals else float("nan")


# -- detection ---------------------------------------------------------------


@dataclass(frozen=True)
class DetectionPrediction:
    image_id: str
    category: object
    box: BoundingBox
    confidence: float

    def __post_init__(self):
        check_unit_interval(self.confidence, "confidence")


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    category: object
    box: BoundingBox


def nms(detections: Sequence[DetectionPrediction], iou_threshold=0.5):
    """Greedy non-maximum suppression within each (image, category)."""
    iou_threshold = check_unit_interval(iou_threshold, "iou_threshold", open_left=True)
    order = sorted(range(len(detections)), key=lambda i: -detections[i].confidence)
    kept = []
    for i in order:
        d = detections[i]
        if all(
            k.image_id != d.image_id or k.category != d.category or box_iou(k.box, d.box) <= iou_threshold
            for k in kept
        ):
            kept.append(d)
    return kept


NO_GROUND_TRUTH = None


def match_detections(predictions, ground_truth, category, iou_threshold=0.5):
    """Label each prediction of ``category`` TP or FP, in ranking order.

    Returns ``(confidences, is_tp, n_gt)``. Predictions are visited by
    descending confidence (input order breaks ties); each takes the unmatched
    ground-truth box of its image with the highest IoU, and counts as a true
    positive only if that IoU exceeds the threshold.
    """
    gts = {}
    for g in ground_truth:
        if g.category == category:
            gts.setdefault(g.image_id, []).append(g.box)
    used = {img: [False] * len(boxes) for img, boxes in gts.items()}
    preds = [p for p in predictions if p.category == category]
    preds.sort(key=lambda p: -p.confidence)
    is_tp = []
    for p in preds:
        best, best_iou = None, iou_threshold
        for j, box in enumerate(gts.get(p.image_id, [])):
            if used[p.image_id][j]:
                continue
            iou = box_iou(p.box, box)
            if iou > best_iou:
                best, best_iou = j, iou
        if best is None:
            is_tp.append(False)
        else:
            used[p.image_id][best] = True
            is_tp.append(True)
    n_gt = sum(len(b) for b in gts.values())
    return [p.confidence for p in preds], is_tp, n_gt


def average_precision(predictions, ground_truth, category, iou_threshold=0.5):
    """All-point interpolated AP; ``NO_GROUND_TRUTH`` when the class has no GT."""
    _, is_tp, n_gt = match_detections(predictions, ground_truth, category, iou_threshold)
    if n_gt == 0:
        return NO_GROUND_TRUTH
    if not is_tp:
        return 0.0
    tp = np.cumsum(is_tp)
    fp = np.cumsum(np.logical_not(is_tp))
    recall = tp / n_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mean_average_precision(aps):
    """Unweighted mean over defined APs; accepts a mapping or a sequence."""
    values = list(aps.values()) if isinstance(aps, dict) else list(aps)
    defined = [v for v in values if v is not NO_GROUND_TRUTH]
    if not defined:
        raise ValidationError("no category has ground truth, mAP is undefined")
    return sum(defined) / len(defined)


# -- classification ----------------------------------------------------------


@dataclass
class ClassificationReport:
    classes: tuple
    confusion: np.ndarray
    per_class_accuracy: dict
    mean_accuracy: float
    overall_accuracy: float


def classification_report(predicted, true, classes) -> ClassificationReport:
    """Confusion matrix (rows = truth) with per-class and mean accuracy.

    Mean accuracy averages the classes that have support; overall accuracy
    is the support-weighted figure.
    """
    predicted, true, classes = list(predicted), list(true), tuple(classes)
    if len(predicted) != len(true):
        raise DimensionMismatchError(f"{len(predicted)} predictions for {len(true)} labels")
    index = {c: i for i, c in enumerate(classes)}
    conf = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(predicted, true):
        if p not in index or t not in index:
            raise ValidationError(f"label outside the class set: {p if p not in index else t!r}")
        conf[index[t], index[p]] += 1
    support = conf.sum(axis=1)
    per_class = {
        c: (conf[i, i] / support[i] if support[i] else float("nan")) for i, c in enumerate(classes)
    }
    total = int(support.sum())
    return ClassificationReport(
        classes=classes,
        confusion=conf,
        per_class_accuracy=per_class,
        mean_accuracy=_nanmean(per_class.values()),
        overall_accuracy=float(np.trace(conf) / total) if total else float("nan"),
    )
