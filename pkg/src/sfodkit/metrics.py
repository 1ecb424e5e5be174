"""Evaluation: per-category AP/mAP at IoU 0.5 plus two diagnostics —
confidence-binned assignment accuracy and the sliding-box confidence probe.

Evaluation randomness (proposals, feature noise) is derived from each
scene's own seed, so every model variant is scored on byte-identical
inputs and paired comparisons are free of evaluation noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detector import Detection, ModelParams, forward, predict_detections
from .geometry import BBox, boxes_to_array, iou_matrix
from .pseudo import assign_labels
from .rng import child_rng
from .synthworld import DomainConfig, Scene, clean_feature, generate_proposals


@dataclass
class EvalResult:
    ap: dict[int, float]  # category -> AP, only categories with >= 1 GT
    map: float
    n_gt: dict[int, int]
    n_det: dict[int, int]


def _voc_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """All-point interpolation: integrate the precision envelope over recall."""
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    changed = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changed + 1] - mrec[changed]) * mpre[changed + 1]))


def average_precision(
    detections: list[tuple[int, Detection]],
    ground_truth: dict[int, list[tuple[int, BBox]]],
    iou_threshold: float = 0.5,
) -> EvalResult:
    """VOC-style evaluation over pooled scenes.

    ``detections`` pairs each Detection with its scene id; matching is
    greedy in score order against unmatched same-scene GT of the same
    category. Scenes and categories absent from ``ground_truth`` count
    only as false positives. mAP averages categories holding >= 1 GT.
    """
    categories = sorted({cat for objs in ground_truth.values() for cat, _ in objs})
    if not categories:
        raise ValueError("no ground truth in any category; mAP undefined")
    n_gt = {c: 0 for c in categories}
    for objs in ground_truth.values():
        for cat, _ in objs:
            n_gt[cat] += 1
    ap: dict[int, float] = {}
    n_det = {c: 0 for c in categories}
    for cat in categories:
        dets = [(sid, d) for sid, d in detections if d.category == cat]
        n_det[cat] = len(dets)
        # (-score, scene, insertion order) keeps ranking fully deterministic
        order = sorted(range(len(dets)), key=lambda k: (-dets[k][1].score, dets[k][0], k))
        matched: dict[int, set[int]] = {sid: set() for sid in ground_truth}
        tp = np.zeros(len(dets))
        fp = np.zeros(len(dets))
        for rank, k in enumerate(order):
            sid, det = dets[k]
            gt_boxes = [b for c, b in ground_truth.get(sid, []) if c == cat]
            gt_index = [i for i, (c, _) in enumerate(ground_truth.get(sid, [])) if c == cat]
            if not gt_boxes:
                fp[rank] = 1.0
                continue
            overlaps = iou_matrix(det.box.as_array()[None, :], boxes_to_array(gt_boxes))[0]
            best = int(np.argmax(overlaps))
            if overlaps[best] >= iou_threshold and gt_index[best] not in matched[sid]:
                matched[sid].add(gt_index[best])
                tp[rank] = 1.0
            else:
                fp[rank] = 1.0
        if len(dets) == 0:
            ap[cat] = 0.0
            continue
        cum_tp = np.cumsum(tp)
        cum_fp = np.cumsum(fp)
        recall = cum_tp / n_gt[cat]
        precision = cum_tp / np.maximum(cum_tp + cum_fp, 1e-12)
        ap[cat] = _voc_ap(recall, precision)
    mean = float(np.mean([ap[c] for c in categories]))
    return EvalResult(ap=ap, map=mean, n_gt=n_gt, n_det=n_det)


def evaluate_model(
    params: ModelParams,
    world: DomainConfig,
    scenes: list[Scene],
    n_jitter: int = 8,
    n_random: int = 16,
    jitter_sigma: float = 6.0,
    iou_threshold: float = 0.5,
    nms_iou: float = 0.5,
    view: str = "weak",
) -> EvalResult:
    """mAP of a model over held-out scenes with scene-seeded eval randomness."""
    detections: list[tuple[int, Detection]] = []
    ground_truth: dict[int, list[tuple[int, BBox]]] = {}
    for sid, scene in enumerate(scenes):
        ground_truth[sid] = list(scene.objects)
        props = generate_proposals(
            world, scene, n_jitter, n_random, jitter_sigma,
            child_rng(scene.seed, "eval-proposals"),
        )
        dets = predict_detections(
            params, world, scene, props, child_rng(scene.seed, "eval-feat"),
            view=view, nms_iou=nms_iou,
        )
        detections.extend((sid, d) for d in dets)
    return average_precision(detections, ground_truth, iou_threshold)


# ---------------------------------------------------------------------------
# Confidence-bin assignment accuracy
# ---------------------------------------------------------------------------

@dataclass
class BinAccuracy:
    lo: float
    hi: float
    n: int
    accuracy: float  # NaN when the bin is empty


def assignment_accuracy_bins(
    params: ModelParams,
    world: DomainConfig,
    scenes: list[Scene],
    bin_edges: np.ndarray | None = None,
    n_jitter: int = 8,
    n_random: int = 16,
    jitter_sigma: float = 6.0,
    fg_iou_threshold: float = 0.5,
    nms_iou: float = 0.5,
) -> list[BinAccuracy]:
    """How often IoU-assignment from pseudo-boxes agrees with GT assignment,
    binned by the deciding pseudo-box's confidence.

    For each proposal assigned foreground by the model's detections, the
    responsible detection (highest IoU) supplies the confidence bin, and
    the assignment counts as correct when a GT-oracle assignment gives the
    same category. Accuracy is per proposal.
    """
    if bin_edges is None:
        bin_edges = np.linspace(0.0, 1.0, 11)
    bin_edges = np.asarray(bin_edges, dtype=np.float64)
    n_bins = bin_edges.size - 1
    hits = np.zeros(n_bins)
    totals = np.zeros(n_bins, dtype=np.intp)
    for scene in scenes:
        props = generate_proposals(
            world, scene, n_jitter, n_random, jitter_sigma,
            child_rng(scene.seed, "diag-proposals"),
        )
        dets = predict_detections(
            params, world, scene, props, child_rng(scene.seed, "diag-feat"),
            view="weak", nms_iou=nms_iou,
        )
        if not dets:
            continue
        gt_as_dets = [Detection(box=b, category=c, score=1.0) for c, b in scene.objects]
        oracle = assign_labels(props, gt_as_dets, world.num_categories, fg_iou_threshold)
        assigned = assign_labels(props, dets, world.num_categories, fg_iou_threshold)
        overlaps = iou_matrix(
            boxes_to_array([p.box for p in props]),
            boxes_to_array([d.box for d in dets]),
        )
        deciding = overlaps.argmax(axis=1)
        for i in range(len(props)):
            if assigned[i] == world.num_categories:
                continue  # background assignment: not a foreground claim
            conf = dets[deciding[i]].score
            k = int(np.searchsorted(bin_edges, conf, side="left")) - 1
            k = min(max(k, 0), n_bins - 1)
            totals[k] += 1
            hits[k] += float(assigned[i] == oracle[i])
    out = []
    for k in range(n_bins):
        acc = hits[k] / totals[k] if totals[k] else float("nan")
        out.append(BinAccuracy(float(bin_edges[k]), float(bin_edges[k + 1]),
                               int(totals[k]), float(acc)))
    return out


# ---------------------------------------------------------------------------
# Sliding-box probe
# ---------------------------------------------------------------------------

def slide_end_box(gt_box: BBox) -> BBox:
    """Horizontal shift by width/3, which lands IoU(gt, end) at exactly 0.5."""
    shift = (gt_box.x2 - gt_box.x1) / 3.0
    return BBox(gt_box.x1 + shift, gt_box.y1, gt_box.x2 + shift, gt_box.y2)


def slide_diagnostic(
    params: ModelParams,
    world: DomainConfig,
    scene: Scene,
    gt_box: BBox,
    end_box: BBox,
    steps: int = 10,
) -> list[tuple[int, float, float]]:
    """Linearly slide a box from gt_box to end_box; record max category prob.

    Features are noise-free so the curve is a pure function of the model.
    Returns (step, horizontal center offset, max foreground probability).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    a = gt_box.as_array()
    b = end_box.as_array()
    curve = []
    for k in range(steps + 1):
        t = k / steps
        x1, y1, x2, y2 = (1.0 - t) * a + t * b
        box = BBox(x1, y1, x2, y2)
        feat = clean_feature(world, scene, box)
        probs = forward(params, feat[None, :]).probs[0]
        max_prob = float(probs[: world.num_categories].max())
        offset = float(box.center[0] - gt_box.center[0])
        curve.append((k, offset, max_prob))
    return curve
