"""Classification accuracy, detection AP/mAP, and noise-table aggregation."""
from __future__ import annotations

import warnings
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import InputError

NOISE_ORDER = ("gaussian", "poisson", "salt_pepper", "speckle", "rayleigh", "gamma")
MAP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def accuracy(pred_labels, true_labels) -> float:
    """Percentage of matching labels."""
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape or pred.ndim != 1:
        raise InputError(f"label vectors must be 1-D and equal length, got {pred.shape} and {true.shape}")
    if pred.size == 0:
        raise InputError("accuracy of an empty label vector is undefined")
    return 100.0 * float(np.count_nonzero(pred == true)) / pred.size


def _check_box(b) -> tuple[float, float, float, float]:
    x1, y1, x2, y2 = (float(v) for v in b)
    if not (x2 > x1 and y2 > y1):
        raise InputError(f"degenerate box {list(b)}: need x2 > x1 and y2 > y1")
    return x1, y1, x2, y2


def iou(a, b) -> float:
    ax1, ay1, ax2, ay2 = _check_box(a)
    bx1, by1, bx2, by2 = _check_box(b)
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


@dataclass(frozen=True)
class DetectionRecord:
    image_id: int
    class_id: int
    bbox: tuple
    confidence: float

    def __post_init__(self):
        object.__setattr__(self, "bbox", _check_box(self.bbox))
        if not np.isfinite(self.confidence):
            raise InputError(f"confidence must be finite, got {self.confidence}")


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: int
    class_id: int
    bbox: tuple

    def __post_init__(self):
        object.__setattr__(self, "bbox", _check_box(self.bbox))


@dataclass(frozen=True)
class MatchResult:
    tp: list  # bool per prediction, in descending-confidence order
    n_gt: int

    @property
    def fn(self) -> int:
        return self.n_gt - sum(self.tp)


def match_detections(preds, gts, iou_thresh: float) -> MatchResult:
    """Greedy matching for one class.

    Predictions are visited by descending confidence (stable for ties). Each
    looks at the still-unmatched ground-truth boxes of its image and takes the
    one with highest IoU; it is a true positive iff that IoU reaches the
    threshold. Boxes already claimed by a higher-confidence prediction are
    unavailable, so duplicates become false positives.
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i].confidence)
    by_image = defaultdict(list)
    for g in gts:
        by_image[g.image_id].append(g)
    used = {img: [False] * len(boxes) for img, boxes in by_image.items()}
    flags = []
    for i in order:
        p = preds[i]
        best, best_j = 0.0, -1
        for j, g in enumerate(by_image.get(p.image_id, ())):
            if used[p.image_id][j]:
                continue
            o = iou(p.bbox, g.bbox)
            if o > best:
                best, best_j = o, j
        if best_j >= 0 and best >= iou_thresh:
            used[p.image_id][best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return MatchResult(flags, len(gts))


def average_precision(flags, n_gt: int) -> float:
    """All-point interpolated AP over TP/FP flags given in descending-confidence order."""
    flags = np.asarray(flags, dtype=bool)
    if n_gt < 0:
        raise InputError("n_gt must be >= 0")
    if n_gt == 0:
        if flags.size:
            warnings.warn("average_precision: detections with no ground truth; AP defined as 0", stacklevel=2)
        return 0.0
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # envelope: best precision at any recall >= this one
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev_recall) * envelope))


def per_class_ap(preds, gts, iou_thresh: float) -> dict[int, float]:
    """AP for every class that has at least one ground-truth box."""
    if not gts:
        raise InputError("no ground-truth boxes")
    gt_by_class = defaultdict(list)
    for g in gts:
        gt_by_class[g.class_id].append(g)
    pred_by_class = defaultdict(list)
    for p in preds:
        pred_by_class[p.class_id].append(p)
    out = {}
    for cls in sorted(gt_by_class):
        m = match_detections(pred_by_class[cls], gt_by_class[cls], iou_thresh)
        out[cls] = average_precision(m.tp, m.n_gt)
    return out


def map_at(preds, gts, iou_thresh: float = 0.5) -> float:
    """Mean AP over classes present in the ground truth."""
    aps = per_class_ap(preds, gts, iou_thresh)
    return float(np.mean(list(aps.values())))


def map_range(preds, gts) -> float:
    """mAP averaged over IoU thresholds 0.50, 0.55, ..., 0.95."""
    return float(np.mean([map_at(preds, gts, t) for t in MAP_THRESHOLDS]))


@dataclass(frozen=True)
class NoiseResultRow:
    values: tuple  # one entry per NOISE_ORDER kind
    clean: float | None = None

    def __post_init__(self):
        if len(self.values) != len(NOISE_ORDER):
            raise InputError(f"expected {len(NOISE_ORDER)} noise entries, got {len(self.values)}")


def avg_over_noises(row) -> float:
    values = row.values if isinstance(row, NoiseResultRow) else tuple(row)
    if len(values) != len(NOISE_ORDER):
        raise InputError(f"expected {len(NOISE_ORDER)} noise entries, got {len(values)}")
    return float(sum(values) / len(values))


def relative_improvement(ddc_value: float, conv_value: float) -> float:
    """Percent change of ``ddc_value`` over ``conv_value``."""
    if not conv_value > 0:
        raise InputError(f"baseline value must be positive, got {conv_value}")
    return 100.0 * (ddc_value - conv_value) / conv_value
