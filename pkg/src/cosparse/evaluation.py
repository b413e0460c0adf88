"""IoU, CorLoc, CorLoc curves and the five-way localization error breakdown.

An image counts as correctly localized when the IoU with some ground-truth box
strictly exceeds the threshold, so IoU exactly 0.5 at threshold 0.5 is a miss.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dataset_io import BBox


class ErrorMode(str, enum.Enum):
    CORRECT = "correct"
    GT_IN_HYPOTHESIS = "gt_in_hypothesis"
    HYPOTHESIS_IN_GT = "hypothesis_in_gt"
    NO_OVERLAP = "no_overlap"
    LOW_OVERLAP = "low_overlap"


@dataclass(frozen=True)
class CorLocCurve:
    thresholds: np.ndarray
    values: np.ndarray


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def best_iou(pred: BBox, gts: Sequence[BBox]) -> float:
    if not gts:
        raise ValueError("no ground-truth boxes")
    return max(iou(pred, g) for g in gts)


def _aligned_ious(preds, gts) -> np.ndarray:
    """Best IoU per image; ``preds``/``gts`` are aligned sequences or id-keyed mappings."""
    if isinstance(preds, Mapping):
        out = []
        for image_id, pred in preds.items():
            boxes = gts.get(image_id) if isinstance(gts, Mapping) else None
            if not boxes:
                raise ValueError(f"image {image_id!r}: prediction without ground truth")
            out.append(best_iou(pred, boxes))
        return np.array(out)
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions for {len(gts)} ground-truth lists")
    out = []
    for k, (pred, boxes) in enumerate(zip(preds, gts)):
        if not boxes:
            raise ValueError(f"image #{k}: prediction without ground truth")
        out.append(best_iou(pred, boxes))
    return np.array(out)


def corloc(preds, gts, threshold: float = 0.5) -> float:
    """Fraction of images whose best IoU strictly exceeds ``threshold``."""
    ious = _aligned_ious(preds, gts)
    if len(ious) == 0:
        raise ValueError("no images to evaluate")
    return float(np.mean(ious > threshold))


def corloc_curve(preds, gts, num_points: int = 101) -> CorLocCurve:
    if num_points < 2:
        raise ValueError(f"num_points must be >= 2, got {num_points}")
    ious = _aligned_ious(preds, gts)
    if len(ious) == 0:
        raise ValueError("no images to evaluate")
    thresholds = np.linspace(0.0, 1.0, num_points)
    values = (ious[None, :] > thresholds[:, None]).mean(axis=1)
    return CorLocCurve(thresholds, values)


def diagnose(pred: BBox, gts: Sequence[BBox]) -> ErrorMode:
    """Classify one prediction against its best-matching ground-truth box."""
    if not gts:
        raise ValueError("no ground-truth boxes")
    scores = [iou(pred, g) for g in gts]
    k = int(np.argmax(scores))
    gt, best = gts[k], scores[k]
    if best > 0.5:
        return ErrorMode.CORRECT
    if pred.contains(gt):
        return ErrorMode.GT_IN_HYPOTHESIS
    if gt.contains(pred):
        return ErrorMode.HYPOTHESIS_IN_GT
    if best == 0.0:
        return ErrorMode.NO_OVERLAP
    return ErrorMode.LOW_OVERLAP


def mode_fractions(modes: Sequence[ErrorMode]) -> dict[str, float]:
    counts = Counter(modes)
    n = len(modes)
    return {m.value: counts.get(m, 0) / n for m in ErrorMode}
