"""Evaluation: detection average precision and panoptic quality."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geom
from .geom import Box3D
from .postprocess import Detection


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]]  # (detection index, gt index, IoU)
    unmatched_dets: list[int]
    unmatched_gts: list[int]


@dataclass
class PanopticScores:
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int
    iou_sum: float


def _iou(kind: str, a: Box3D, b: Box3D) -> float:
    if kind == "bev":
        return geom.bev_iou(a, b)
    if kind == "3d":
        return geom.iou_3d(a, b)
    raise ValueError(f"unknown IoU kind: {kind!r}")


def match_detections(
    dets: list[Detection],
    gts: list[Box3D],
    iou_threshold: float | dict[int, float],
    iou_kind: str = "3d",
) -> MatchResult:
    """Greedy matching: detections in score order claim their best free gt.

    ``iou_threshold`` may be a per-class mapping (missing classes fall back
    to the entry under key 0, or 0.5).
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    claimed = [False] * len(gts)
    pairs: list[tuple[int, int, float]] = []
    unmatched_dets: list[int] = []
    for di in order:
        det = dets[di]
        if isinstance(iou_threshold, dict):
            thr = iou_threshold.get(det.class_id, iou_threshold.get(0, 0.5))
        else:
            thr = iou_threshold
        best_gt, best_iou = -1, 0.0
        for gi, gt in enumerate(gts):
            if claimed[gi] or gt.class_id != det.class_id:
                continue
            iou = _iou(iou_kind, det.box, gt)
            if iou >= thr and iou > best_iou:
                best_gt, best_iou = gi, iou
        if best_gt >= 0:
            claimed[best_gt] = True
            pairs.append((di, best_gt, best_iou))
        else:
            unmatched_dets.append(di)
    unmatched_gts = [gi for gi, c in enumerate(claimed) if not c]
    return MatchResult(pairs=pairs, unmatched_dets=unmatched_dets, unmatched_gts=unmatched_gts)


def ap_from_curve(recall: np.ndarray, precision: np.ndarray) -> float:
    """All-point-interpolated area under a ranked precision-recall curve."""
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, envelope):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def average_precision(
    dets: list[Detection], gts: list[Box3D], iou_threshold: float, iou_kind: str = "3d"
) -> float:
    """All-point-interpolated area under the precision-recall curve.

    Desk-scale stand-in for benchmark protocols: greedy matching, no score
    cut. Returns NaN (undefined) when both inputs are empty; 0.0 when there
    are detections but no ground truth.
    """
    if not gts:
        return math.nan if not dets else 0.0
    if not dets:
        return 0.0
    match = match_detections(dets, gts, iou_threshold, iou_kind)
    matched = {di for di, _, _ in match.pairs}
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    tp = np.cumsum([1.0 if di in matched else 0.0 for di in order])
    fp = np.cumsum([0.0 if di in matched else 1.0 for di in order])
    recall = tp / len(gts)
    precision = tp / (tp + fp)
    return ap_from_curve(recall, precision)


def panoptic_counts(pred_inst: np.ndarray, gt_inst: np.ndarray) -> tuple[int, int, int, float]:
    """TP/FP/FN counts and matched-IoU sum for one instance labeling pair.

    Labels are per-pixel instance ids over the same pixel set, -1 for
    no-instance. A pair matches iff its point-set IoU exceeds 0.5, which
    makes the matching unique without any greedy step.
    """
    pred_inst = np.asarray(pred_inst).ravel()
    gt_inst = np.asarray(gt_inst).ravel()
    if pred_inst.shape != gt_inst.shape:
        raise ValueError("instance labelings must cover the same pixel set")

    pred_ids, pred_sizes = np.unique(pred_inst[pred_inst >= 0], return_counts=True)
    gt_ids, gt_sizes = np.unique(gt_inst[gt_inst >= 0], return_counts=True)
    pred_size = dict(zip(pred_ids.tolist(), pred_sizes.tolist()))
    gt_size = dict(zip(gt_ids.tolist(), gt_sizes.tolist()))

    both = (pred_inst >= 0) & (gt_inst >= 0)
    pair_keys, inter = np.unique(
        np.stack([pred_inst[both], gt_inst[both]], axis=0), axis=1, return_counts=True
    )
    tp = 0
    iou_sum = 0.0
    matched_pred: set[int] = set()
    matched_gt: set[int] = set()
    for (pid, gid), n_inter in zip(pair_keys.T.tolist(), inter.tolist()):
        union = pred_size[pid] + gt_size[gid] - n_inter
        iou = n_inter / union
        if iou > 0.5:
            tp += 1
            iou_sum += iou
            matched_pred.add(pid)
            matched_gt.add(gid)
    fp = len(pred_size) - len(matched_pred)
    fn = len(gt_size) - len(matched_gt)
    return tp, fp, fn, iou_sum


def scores_from_counts(tp: int, fp: int, fn: int, iou_sum: float) -> PanopticScores:
    sq = iou_sum / tp if tp > 0 else 0.0
    denom = tp + 0.5 * fp + 0.5 * fn
    rq = tp / denom if denom > 0 else 0.0
    return PanopticScores(pq=sq * rq, sq=sq, rq=rq, tp=tp, fp=fp, fn=fn, iou_sum=iou_sum)


def panoptic_quality(pred_inst: np.ndarray, gt_inst: np.ndarray) -> PanopticScores:
    """Panoptic quality (with its SQ/RQ split) for one class."""
    return scores_from_counts(*panoptic_counts(pred_inst, gt_inst))
