"""Scene-level plumbing shared by the CLI and the acceptance suite."""

from __future__ import annotations

import numpy as np

from . import config as cfgmod
from . import metrics as metricsmod
from . import panoptic as panmod
from . import postprocess, synth, targets as tgtmod
from .geom import Box3D
from .rangeimage import PointCloud, RangeImage, build_range_image
from .synth import OracleNoise
from .targets import TargetMaps


def build_scene(cfg: dict, seed: int):
    """Simulate one scene: boxes, ray-cast cloud, per-point instance ids."""
    sensor = cfgmod.make_sensor(cfg)
    scene = synth.generate_scene(cfgmod.make_scene_spec(cfg, seed), sensor)
    cloud, inst_ids = synth.raycast_scene(scene)
    return scene, cloud, inst_ids


def image_and_targets(cfg: dict, cloud: PointCloud, boxes: list[Box3D]):
    """Project the cloud and derive all target planes."""
    sensor = cfgmod.make_sensor(cfg)
    img, dropped = build_range_image(cloud, sensor)
    tgt = tgtmod.build_target_maps(img, boxes, cfgmod.make_loss(cfg))
    return img, dropped, tgt


def gt_instance_plane(img: RangeImage, inst_ids: np.ndarray) -> np.ndarray:
    """Per-pixel ground-truth instance ids from the simulator labels."""
    plane = np.full(img.shape, -1, dtype=np.int64)
    has = img.source >= 0
    plane[has] = np.asarray(inst_ids)[img.source[has]]
    return plane


def visible_boxes(boxes: list[Box3D], tgt: TargetMaps) -> list[Box3D]:
    """Boxes with at least one member pixel; fully occluded ones are not
    observable in the range image and are excluded from oracle evaluation."""
    present = set(np.unique(tgt.box_id[tgt.box_id >= 0]).tolist())
    return [b for b in boxes if b.instance_id in present]


def rimg_channels(img: RangeImage, tgt: TargetMaps | None = None):
    """Flatten image (and optionally target) planes into named 2D channels."""
    out = [(name, img.channels[name]) for name in sorted(img.channels)]
    out.append(("valid", img.valid))
    if tgt is not None:
        out.append(("semantic", tgt.semantic))
        out.append(("centerness", tgt.centerness))
        for i in range(3):
            out.append((f"p{i}", tgt.p_branch[..., i]))
        for i in range(5):
            out.append((f"q{i}", tgt.q_branch[..., i]))
        out.append(("box_id", tgt.box_id))
        out.append(("p_mask", tgt.p_mask))
        out.append(("q_mask", tgt.q_mask))
    return out


def oracle_for(cfg: dict, tgt: TargetMaps, noise_sigma: float, seed: int):
    noise = OracleNoise.uniform_omega(noise_sigma)
    return synth.oracle_predictions(tgt, noise, seed=seed, num_classes=cfgmod.num_classes(cfg))


def evaluate_suite(cfg: dict, seeds: list[int], noise_sigma: float = 0.0, lambdas=None) -> dict:
    """Run the oracle detection + panoptic pipelines over a suite of scenes.

    Returns a JSON-ready document with AP, per-class and macro PQ, mean
    regression errors, and optionally a lambda sweep of PQ values.
    """
    det_cfg = cfgmod.make_detect(cfg)
    pan_cfg = cfgmod.make_panoptic(cfg)
    loss_cfg = cfgmod.make_loss(cfg)
    base_thr = cfg["metrics"]["iou_threshold"]
    per_class = {int(k): v for k, v in cfg["metrics"].get("iou_threshold_per_class", {}).items()}
    iou_thr: float | dict = {0: base_thr, **per_class} if per_class else base_thr
    iou_kind = cfg["metrics"]["iou_kind"]
    n_cls = cfgmod.num_classes(cfg)
    lambdas = list(lambdas) if lambdas else []

    score_flags: list[tuple[float, bool]] = []
    n_gts = 0
    min_matched_iou = np.inf
    pq_counts = {k: [0, 0, 0, 0.0] for k in range(1, n_cls + 1)}
    sweep_counts = {lam: {k: [0, 0, 0, 0.0] for k in range(1, n_cls + 1)} for lam in lambdas}
    err_rows = {"all": [], "centric": [], "edge": []}

    for seed in seeds:
        scene, cloud, inst_ids = build_scene(cfg, seed)
        img, _, tgt = image_and_targets(cfg, cloud, scene.boxes)
        pred = oracle_for(cfg, tgt, noise_sigma, seed)
        gts = visible_boxes(scene.boxes, tgt)

        dets = postprocess.detect(img, pred, det_cfg)
        match = metricsmod.match_detections(dets, gts, iou_thr, iou_kind)
        matched = {di for di, _, _ in match.pairs}
        for di, d in enumerate(dets):
            score_flags.append((d.score, di in matched))
        for _, _, iou in match.pairs:
            min_matched_iou = min(min_matched_iou, iou)
        n_gts += len(gts)

        gt_inst = gt_instance_plane(img, inst_ids)

        def accumulate(counts, cfg_pan):
            result = panmod.panoptic_segment(img, pred, cfg_pan)
            for k in range(1, n_cls + 1):
                gk = np.where(tgt.semantic == k, gt_inst, -1)
                pk = np.where(result.semantic == k, result.instance, -1)
                tp, fp, fn, iou_sum = metricsmod.panoptic_counts(pk[img.valid], gk[img.valid])
                counts[k][0] += tp
                counts[k][1] += fp
                counts[k][2] += fn
                counts[k][3] += iou_sum
            return result

        accumulate(pq_counts, pan_cfg)
        for lam in lambdas:
            cfg_lam = panmod.PanopticConfig(
                tau_c=pan_cfg.tau_c,
                tau_s=pan_cfg.tau_s,
                lam=lam,
                cluster_eps=pan_cfg.cluster_eps,
                heatmap_nms_window=pan_cfg.heatmap_nms_window,
            )
            accumulate(sweep_counts[lam], cfg_lam)

        report = tgtmod.regression_error_report(pred, tgt, loss_cfg.tau)
        if not report.empty:
            err_rows["all"].append(report.all)
            err_rows["centric"].append(report.centric)
            err_rows["edge"].append(report.edge)

    score_flags.sort(key=lambda sf: -sf[0])
    tp_cum = np.cumsum([1.0 if f else 0.0 for _, f in score_flags])
    fp_cum = np.cumsum([0.0 if f else 1.0 for _, f in score_flags])
    if n_gts == 0:
        ap = None
    elif not score_flags:
        ap = 0.0
    else:
        recall = tp_cum / n_gts
        precision = tp_cum / (tp_cum + fp_cum)
        ap = float(metricsmod.ap_from_curve(recall, precision))

    def pq_doc(counts):
        per_class = {}
        macro = []
        for k, (tp, fp, fn, iou_sum) in counts.items():
            if tp + fp + fn == 0:
                continue
            s = metricsmod.scores_from_counts(tp, fp, fn, iou_sum)
            per_class[str(k)] = {"pq": s.pq, "sq": s.sq, "rq": s.rq, "tp": s.tp, "fp": s.fp, "fn": s.fn}
            macro.append(s.pq)
        return {
            "per_class": per_class,
            "macro_pq": float(np.mean(macro)) if macro else None,
        }

    doc = {
        "ap": {
            "value": ap,
            "iou_threshold": base_thr,
            "iou_threshold_per_class": {str(k): v for k, v in per_class.items()},
            "iou_kind": iou_kind,
            "protocol": "simplified greedy all-point AP (not a benchmark protocol)",
            "num_gts": n_gts,
            "min_matched_iou": None if not np.isfinite(min_matched_iou) else float(min_matched_iou),
        },
        "pq": pq_doc(pq_counts),
        "regression_errors": {
            key: dict(zip(tgtmod.ELEMENT_NAMES, np.mean(rows, axis=0).tolist())) if rows else None
            for key, rows in err_rows.items()
        },
        "config": {"noise_sigma": noise_sigma, "seeds": list(seeds)},
    }
    if lambdas:
        doc["lambda_sweep"] = {str(lam): pq_doc(sweep_counts[lam]) for lam in lambdas}
    return doc
