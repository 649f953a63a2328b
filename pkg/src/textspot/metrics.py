"""Detection and end-to-end recognition metrics.

A detection is a true positive when it overlaps an unmatched ground-truth
box above the IoU threshold; the end-to-end variant additionally demands an
exact (case-sensitive, no normalization) transcript match. Average precision
is the area under the monotone precision-recall envelope over a globally
score-ranked detection list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .boxes import TextBox


def iou(a: TextBox, b: TextBox) -> float:
    """Intersection-over-union of two boxes.

    Axis-aligned pairs use the closed form; any rotation falls back to
    rasterization at 1-px resolution (slow but unambiguous).
    """
    if a.theta == 0.0 and b.theta == 0.0:
        ax0, ay0, ax1, ay1 = a.aabb()
        bx0, by0, bx1, by1 = b.aabb()
        iw = min(ax1, bx1) - max(ax0, bx0)
        ih = min(ay1, by1) - max(ay0, by0)
        if iw <= 0.0 or ih <= 0.0:
            return 0.0
        inter = iw * ih
        return inter / (a.area() + b.area() - inter)
    return raster_iou(a, b)


def raster_iou(a: TextBox, b: TextBox) -> float:
    """Pixel-count IoU over a 1-px grid covering both boxes."""
    x0 = math.floor(min(a.aabb()[0], b.aabb()[0]))
    y0 = math.floor(min(a.aabb()[1], b.aabb()[1]))
    x1 = math.ceil(max(a.aabb()[2], b.aabb()[2]))
    y1 = math.ceil(max(a.aabb()[3], b.aabb()[3]))
    xs = np.arange(x0, x1) + 0.5
    ys = np.arange(y0, y1) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    in_a = a.contains_points(gx, gy)
    in_b = b.contains_points(gx, gy)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union


def iou_matrix_axis_aligned(xyxy_a: np.ndarray, xyxy_b: np.ndarray) -> np.ndarray:
    """(N, M) IoU matrix of axis-aligned (x0, y0, x1, y1) rows."""
    if len(xyxy_a) == 0 or len(xyxy_b) == 0:
        return np.zeros((len(xyxy_a), len(xyxy_b)))
    a = xyxy_a[:, None, :]
    b = xyxy_b[None, :, :]
    iw = np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    ih = np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    return inter / (area_a + area_b - inter)


@dataclass
class MatchResult:
    """Per-detection and per-ground-truth matching flags plus counts."""

    det_tp: list = field(default_factory=list)        # bool per detection, input order
    det_matched_gt: list = field(default_factory=list)  # gt index or -1
    gt_matched: list = field(default_factory=list)    # bool per gt
    tp: int = 0
    fp: int = 0
    fn: int = 0


def match_detections(dets: list, gts: list, iou_thresh: float,
                     require_transcript: bool = False) -> MatchResult:
    """Greedy matching in descending detection-score order.

    Each detection claims the highest-IoU unmatched ground truth at or above
    the threshold. With ``require_transcript`` the claim additionally needs
    exact transcript equality, otherwise the detection counts as a false
    positive (and the ground truth stays available).
    """
    res = MatchResult(det_tp=[False] * len(dets),
                      det_matched_gt=[-1] * len(dets),
                      gt_matched=[False] * len(gts))
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    for i in order:
        best_j, best_v = -1, -1.0
        for j, gt in enumerate(gts):
            if res.gt_matched[j]:
                continue
            v = iou(dets[i], gt)
            if v >= iou_thresh and v > best_v:
                best_j, best_v = j, v
        if best_j >= 0:
            if require_transcript and dets[i].transcript != gts[best_j].transcript:
                continue  # FP; the ground truth is not consumed
            res.det_tp[i] = True
            res.det_matched_gt[i] = best_j
            res.gt_matched[best_j] = True
    res.tp = int(np.count_nonzero(res.det_tp))
    res.fp = len(dets) - res.tp
    res.fn = len(gts) - int(np.count_nonzero(res.gt_matched))
    return res


def average_precision(records: list, n_gts: int) -> float:
    """AP from globally score-ranked (score, is_tp) detection records.

    Precision is made monotonically non-increasing (the envelope) before
    integrating over recall. With zero ground truths AP is undefined and
    reported as 0 (callers flag this case in their reports).
    """
    if n_gts <= 0 or not records:
        return 0.0
    order = sorted(range(len(records)), key=lambda i: -records[i][0])
    tps = np.array([1.0 if records[i][1] else 0.0 for i in order])
    cum_tp = np.cumsum(tps)
    cum_fp = np.cumsum(1.0 - tps)
    recall = cum_tp / n_gts
    precision = cum_tp / (cum_tp + cum_fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * envelope))


def f_score(tp: int, fp: int, fn: int) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if tp < 0 or fp < 0 or fn < 0:
        raise ValueError("counts must be non-negative")
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0
    return 2 * tp / denom
