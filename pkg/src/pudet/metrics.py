"""Detection metrics scored against complete ground truth.

Detections are ranked by descending score, ties broken by scene id and then
by the box coordinates in lexicographic order.  Within a scene each detection,
in rank order, claims the unmatched ground-truth box it overlaps most (ties to
the lower ground-truth index) provided the IoU reaches the threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from pudet.errors import InvalidInputError, UndefinedMetricError
from pudet.scenegen import Box, iou_matrix

AP_INTERPOLATION = "all-point"


@dataclass(frozen=True)
class Detection:
    scene_id: int
    box: Box
    score: float


@dataclass(frozen=True)
class Detections:
    """Column store of detections across scenes."""

    scene_ids: np.ndarray
    boxes: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.scene_ids, dtype=np.int64).reshape(-1)
        boxes = np.asarray(self.boxes, dtype=float).reshape(-1, 4)
        scores = np.asarray(self.scores, dtype=float).reshape(-1)
        if not (len(ids) == len(boxes) == len(scores)):
            raise InvalidInputError("scene_ids, boxes and scores must align")
        object.__setattr__(self, "scene_ids", ids)
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "scores", scores)

    def __len__(self):
        return len(self.scores)

    @classmethod
    def from_list(cls, detections: Sequence[Detection]) -> "Detections":
        if not detections:
            return cls(np.empty(0), np.empty((0, 4)), np.empty(0))
        return cls(
            [d.scene_id for d in detections],
            [d.box.as_array() for d in detections],
            [d.score for d in detections],
        )

    @classmethod
    def concat(cls, parts) -> "Detections":
        parts = list(parts)
        if not parts:
            return cls(np.empty(0), np.empty((0, 4)), np.empty(0))
        return cls(
            np.concatenate([p.scene_ids for p in parts]),
            np.concatenate([p.boxes for p in parts]),
            np.concatenate([p.scores for p in parts]),
        )


@dataclass
class EvalResult:
    metric: str
    thresholds: list[float]
    values: list[float]
    per_scene: dict = field(default_factory=dict)

    def rows(self):
        return [(self.metric, t, v) for t, v in zip(self.thresholds, self.values)]


def _as_detections(dets) -> Detections:
    if isinstance(dets, Detections):
        return dets
    return Detections.from_list(list(dets))


def _ground_truth(gt: Mapping[int, np.ndarray]):
    gt = {int(k): np.asarray(v, dtype=float).reshape(-1, 4) for k, v in gt.items()}
    n_gt = sum(len(v) for v in gt.values())
    if n_gt == 0:
        raise UndefinedMetricError("metric undefined without ground-truth objects")
    return gt, n_gt


def rank_order(dets: Detections) -> np.ndarray:
    b = dets.boxes
    return np.lexsort((b[:, 3], b[:, 2], b[:, 1], b[:, 0], dets.scene_ids, -dets.scores))


def greedy_match(det_boxes, gt_boxes, iou_threshold) -> np.ndarray:
    """Matched ground-truth index per (already ranked) detection, -1 if none."""
    out = np.full(len(det_boxes), -1, dtype=np.int64)
    if len(gt_boxes) == 0 or len(det_boxes) == 0:
        return out
    overlaps = iou_matrix(det_boxes, gt_boxes)
    free = np.ones(len(gt_boxes), dtype=bool)
    for i, row in enumerate(overlaps):
        cand = np.where(free & (row >= iou_threshold), row, -1.0)
        j = int(np.argmax(cand))
        if cand[j] >= 0.0:
            out[i] = j
            free[j] = False
            if not free.any():
                break
    return out


def _ranked_tp(dets: Detections, gt, iou_threshold):
    """Ranking permutation and the TP flag of each ranked detection."""
    order = rank_order(dets)
    ranked_ids = dets.scene_ids[order]
    ranked_boxes = dets.boxes[order]
    tp = np.zeros(len(order), dtype=bool)
    for sid in np.unique(ranked_ids):
        pos = np.flatnonzero(ranked_ids == sid)
        matched = greedy_match(ranked_boxes[pos], gt.get(int(sid), np.empty((0, 4))), iou_threshold)
        tp[pos] = matched >= 0
    return order, tp


def average_precision(detections, ground_truth: Mapping[int, np.ndarray], iou_threshold: float = 0.5) -> float:
    """Area under the precision envelope (all-point interpolation)."""
    gt, n_gt = _ground_truth(ground_truth)
    dets = _as_detections(detections)
    if len(dets) == 0:
        return 0.0
    _, tp = _ranked_tp(dets, gt, iou_threshold)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def recall_at_k(detections, ground_truth: Mapping[int, np.ndarray], k: int, iou_threshold: float = 0.5) -> float:
    """Share of all ground-truth objects matched by each scene's top-``k`` proposals."""
    if k < 1:
        raise InvalidInputError("k must be at least 1")
    gt, n_gt = _ground_truth(ground_truth)
    dets = _as_detections(detections)
    order = rank_order(dets)
    ids = dets.scene_ids[order]
    boxes = dets.boxes[order]
    hits = 0
    for sid in np.unique(ids):
        top = np.flatnonzero(ids == sid)[:k]
        hits += int(np.sum(greedy_match(boxes[top], gt.get(int(sid), np.empty((0, 4))), iou_threshold) >= 0))
    return hits / n_gt


def _operating_points(dets: Detections, gt, iou_threshold):
    """(TP, FP) counts at every score cut that separates distinct scores."""
    order, tp = _ranked_tp(dets, gt, iou_threshold)
    scores = dets.scores[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    last_of_group = np.flatnonzero(np.append(scores[1:] != scores[:-1], True))
    return np.concatenate([[0], ctp[last_of_group]]), np.concatenate([[0], cfp[last_of_group]])


def _n_images(gt, dets, n_images):
    if n_images is not None:
        return n_images
    return len(set(gt) | set(dets.scene_ids.tolist()))


def froc_curve(detections, ground_truth, fp_per_image, iou_threshold: float = 0.5, n_images: int | None = None):
    """Best sensitivity reachable with at most each FP-per-image allowance.

    ``n_images`` defaults to the number of scenes appearing in the ground
    truth mapping (include empty scenes there) or in the detections.
    """
    grid = np.asarray(fp_per_image, dtype=float)
    if np.any(grid <= 0) or np.any(np.diff(grid) < 0):
        raise InvalidInputError("FP allowances must be positive and ascending")
    gt, n_gt = _ground_truth(ground_truth)
    dets = _as_detections(detections)
    if len(dets) == 0:
        return [0.0] * len(grid)
    tps, fps = _operating_points(dets, gt, iou_threshold)
    rate = fps / _n_images(gt, dets, n_images)
    # rate is non-decreasing, so the last feasible cut has the most TPs
    idx = np.searchsorted(rate, grid + 1e-12, side="right") - 1
    return [float(tps[i]) / n_gt for i in idx]


def sensitivity_vs_iou(detections, ground_truth, iou_grid, fp_allowance: float, n_images: int | None = None):
    grid = np.asarray(iou_grid, dtype=float)
    if np.any(grid <= 0) or np.any(grid > 1) or np.any(np.diff(grid) < 0):
        raise InvalidInputError("IoU thresholds must be ascending in (0, 1]")
    return [froc_curve(detections, ground_truth, [fp_allowance], t, n_images)[0] for t in grid]


def write_results(results: Sequence[EvalResult], path, extra_columns: Mapping[str, object] | None = None) -> None:
    extra = dict(extra_columns or {})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "threshold", "value", *extra])
        for res in results:
            for metric, thr, val in res.rows():
                w.writerow([metric, format(float(thr), ".17g"), format(float(val), ".17g"), *extra.values()])
