"""Inference for detection: foreground selection, box decoding, rotated NMS."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geom, targets
from .errors import ShapeMismatchError
from .geom import Box3D
from .rangeimage import RangeImage
from .targets import PredictionMaps


@dataclass
class DetectConfig:
    semantic_threshold: float = 0.3
    centerness_threshold: float = 0.5
    nms_iou: float = 0.7
    nms_iou_per_class: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for v in (self.semantic_threshold, self.centerness_threshold, self.nms_iou):
            if not 0.0 <= v <= 1.0:
                raise ValueError("thresholds must lie in [0, 1]")

    def nms_threshold(self, class_id: int) -> float:
        return self.nms_iou_per_class.get(class_id, self.nms_iou)


@dataclass
class Detection:
    box: Box3D
    class_id: int
    score: float
    source_pixel: tuple[int, int]


def _check(pred: PredictionMaps, img: RangeImage):
    if pred.shape != img.shape:
        raise ShapeMismatchError(f"prediction shape {pred.shape} != image shape {img.shape}")


def select_foreground(pred: PredictionMaps, img: RangeImage, cfg: DetectConfig) -> dict[int, np.ndarray]:
    """Pixels passing both thresholds, per class: {class_id: (K, 2) row/col}."""
    _check(pred, img)
    keep_base = img.valid & (pred.centerness > cfg.centerness_threshold)
    out: dict[int, np.ndarray] = {}
    for k in range(pred.num_classes):
        sel = keep_base & (pred.semantic_scores[..., k] > cfg.semantic_threshold)
        rows, cols = np.nonzero(sel)
        if len(rows):
            out[k + 1] = np.stack([rows, cols], axis=-1)
    return out


def decode_detections(
    selected: dict[int, np.ndarray], pred: PredictionMaps, img: RangeImage
) -> list[Detection]:
    """Decode one box per selected pixel; score = semantic x center-ness."""
    dets: list[Detection] = []
    pts = img.points()
    for class_id in sorted(selected):
        pix = selected[class_id]
        rows, cols = pix[:, 0], pix[:, 1]
        params = targets.decode_boxes(
            pts[rows, cols], pred.p_branch[rows, cols], pred.q_branch[rows, cols]
        )
        scores = pred.semantic_scores[rows, cols, class_id - 1] * pred.centerness[rows, cols]
        for i in range(len(rows)):
            box = Box3D(*params[i], class_id=class_id)
            dets.append(
                Detection(
                    box=box,
                    class_id=class_id,
                    score=float(scores[i]),
                    source_pixel=(int(rows[i]), int(cols[i])),
                )
            )
    return dets


def _pixel_index(det: Detection, cols: int) -> int:
    r, c = det.source_pixel
    return r * cols + c


def nms(dets: list[Detection], cfg: DetectConfig, cols: int = 1 << 20) -> list[Detection]:
    """Greedy per-class suppression by BEV IoU; order is score-stable."""
    out: list[Detection] = []
    by_class: dict[int, list[Detection]] = {}
    for d in dets:
        by_class.setdefault(d.class_id, []).append(d)
    for class_id in sorted(by_class):
        thr = cfg.nms_threshold(class_id)
        pool = sorted(by_class[class_id], key=lambda d: (-d.score, _pixel_index(d, cols)))
        kept: list[Detection] = []
        for cand in pool:
            if all(geom.bev_iou(cand.box, k.box) <= thr for k in kept):
                kept.append(cand)
        out.extend(kept)
    out.sort(key=lambda d: (-d.score, d.class_id, _pixel_index(d, cols)))
    return out


def detect(img: RangeImage, pred: PredictionMaps, cfg: DetectConfig) -> list[Detection]:
    """Full pipeline: threshold selection, decoding, then NMS."""
    selected = select_foreground(pred, img, cfg)
    dets = decode_detections(selected, pred, img)
    return nms(dets, cfg, cols=img.shape[1])
