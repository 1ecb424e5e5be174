"""Source pretraining and the source-free adaptation loop.

Pretraining fits the ROI head on labeled source scenes. Adaptation then
sees only unlabeled target scenes: each step the teacher predicts on the
weak view, detections split into confidence bands, the high band drives
hard cross-entropy on the strong-view student, and the low band feeds
the soft-training and contrastive objectives on matched proposals. The
student takes an SGD+momentum step; the teacher follows by EMA.

Every random draw comes from a purpose-keyed stream derived from
(seed, purpose, epoch, scene index), so toggling an objective on or off
cannot shift the randomness seen by the remaining ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Config
from .detector import (Detection, ModelParams, OptimizerState, detections_from_probs,
                       ema_update, forward, init_params, sgd_step, zero_grads)
from .losses import (LossReport, build_proposal_batch, grad_loss_high, grad_loss_lscl,
                     grad_loss_pst, total_loss)
from .metrics import evaluate_model
from .pseudo import assign_labels, match_low_confidence, partition_detections
from .rng import child_rng
from .synthworld import DomainConfig, Scene, extract_features, generate_proposals


class AdaptError(RuntimeError):
    """Training diverged; carries the last finite checkpoint if one exists."""

    def __init__(self, message: str, last_good: ModelParams | None = None):
        super().__init__(message)
        self.last_good = last_good


@dataclass
class AdaptResult:
    student: ModelParams
    teacher: ModelParams
    epoch_log: list[dict]
    final_map: float


def _accumulate(total: dict[str, np.ndarray], part: dict[str, np.ndarray], scale: float) -> None:
    for key in total:
        total[key] += scale * part[key]


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    return mat / np.linalg.norm(mat, axis=1, keepdims=True)


def pretrain_source(
    world: DomainConfig, scenes: list[Scene], cfg: Config, seed: int
) -> ModelParams:
    """Supervised ROI-head training on labeled source scenes.

    Labels come from IoU assignment against ground truth, the same
    mechanism later used with pseudo-boxes. Returns the source model;
    callers must not show source scenes to anything downstream.
    """
    params = init_params(
        world.feature_dim, cfg.hidden_dim, world.num_categories,
        child_rng(seed, "init"), cfg.init_scale,
    )
    opt = OptimizerState.zeros(params)
    for epoch in range(cfg.pretrain_epochs):
        for si, scene in enumerate(scenes):
            props = generate_proposals(
                world, scene, cfg.n_jitter, cfg.n_random, cfg.jitter_sigma,
                child_rng(seed, "pre-proposals", epoch, si),
            )
            feats = extract_features(
                world, scene, [p.box for p in props], "weak",
                child_rng(seed, "pre-feat", epoch, si),
            )
            gt_dets = [Detection(box=b, category=c, score=1.0) for c, b in scene.objects]
            labels = assign_labels(props, gt_dets, world.num_categories, cfg.fg_iou_threshold)
            out = forward(params, feats)
            value, grads = grad_loss_high(params, out, labels)
            if not np.isfinite(value):
                raise AdaptError(f"pretraining diverged at epoch {epoch}, scene {si}")
            sgd_step(params, grads, opt, cfg.lr, cfg.momentum)
    return params


def adapt_step(
    student: ModelParams,
    teacher: ModelParams,
    opt: OptimizerState,
    world: DomainConfig,
    scene: Scene,
    cfg: Config,
    seed: int,
    epoch: int,
    si: int,
) -> LossReport:
    """One optimization step on one unlabeled target scene."""
    props = generate_proposals(
        world, scene, cfg.n_jitter, cfg.n_random, cfg.jitter_sigma,
        child_rng(seed, "adapt-proposals", epoch, si),
    )
    boxes = [p.box for p in props]
    feats_weak = extract_features(world, scene, boxes, "weak",
                                  child_rng(seed, "adapt-weak", epoch, si))
    feats_strong = extract_features(world, scene, boxes, "strong",
                                    child_rng(seed, "adapt-strong", epoch, si))
    teacher_out = forward(teacher, feats_weak)
    dets = detections_from_probs(props, teacher_out.probs, nms_iou=cfg.nms_iou)
    bands = partition_detections(dets, cfg.sigma_h, cfg.sigma_l)
    labels = assign_labels(props, bands.high, world.num_categories, cfg.fg_iou_threshold)

    student_out = forward(student, feats_strong)
    if bands.high:
        l_h, grads = grad_loss_high(student, student_out, labels)
    else:
        # no high-confidence evidence: skip the hard term rather than
        # teaching "all background", which would self-reinforce collapse
        l_h, grads = 0.0, zero_grads(student)

    rows: list[int] = []
    l_pst = l_lscl = 0.0
    lscl_skipped = False
    if cfg.enable_pst or cfg.enable_lscl:
        rows = match_low_confidence(props, bands.low, cfg.match_iou_threshold)
        if cfg.exclude_high_overlap:
            rows = [i for i in rows if labels[i] == world.num_categories]
    if cfg.enable_pst and rows:
        idx = np.array(rows, dtype=np.intp)
        l_pst, g_pst = grad_loss_pst(student, student_out, idx, teacher_out.probs[idx])
        if cfg.lambda1 != 0.0:
            _accumulate(grads, g_pst, cfg.lambda1)
    if cfg.enable_lscl:
        if len(rows) >= 2:
            idx = np.array(rows, dtype=np.intp)
            f_s = student_out.embeddings[idx]
            f_t = teacher_out.embeddings[idx]
            if cfg.normalize_contrastive:
                f_s, f_t = _unit_rows(f_s), _unit_rows(f_t)
            batch = build_proposal_batch(
                [boxes[i] for i in rows], f_s, f_t,
                student_out.probs[idx], teacher_out.probs[idx],
                strategy=cfg.mixup_strategy,
                rng=child_rng(seed, "adapt-mixup", epoch, si),
            )
            l_lscl, g_lscl = grad_loss_lscl(
                student, student_out, idx, batch, cfg.tau,
                normalized=cfg.normalize_contrastive,
            )
            if cfg.lambda2 != 0.0:
                _accumulate(grads, g_lscl, cfg.lambda2)
        else:
            lscl_skipped = True

    l_total = total_loss(l_h, l_pst, l_lscl, cfg.lambda1, cfg.lambda2)
    sgd_step(student, grads, opt, cfg.lr, cfg.momentum)
    ema_update(teacher, student, cfg.alpha)
    return LossReport(
        l_h=l_h, l_pst=l_pst, l_lscl=l_lscl, l_total=l_total,
        lambda1=cfg.lambda1, lambda2=cfg.lambda2, tau=cfg.tau,
        n_p=len(rows), high_count=len(bands.high), low_count=len(bands.low),
        lscl_skipped=lscl_skipped,
    )


def adapt_target(
    source: ModelParams,
    world: DomainConfig,
    target_scenes: list[Scene],
    eval_scenes: list[Scene],
    cfg: Config,
    seed: int,
    config_id: str = "",
) -> AdaptResult:
    """Run the full adaptation loop; never reads target ground truth.

    Student and teacher both start as copies of the source model. The
    per-epoch log scores the teacher on the held-out eval scenes (the
    teacher is the deployed model in this framework).
    """
    student = source.copy()
    teacher = source.copy()
    opt = OptimizerState.zeros(student)
    epoch_log: list[dict] = []
    final_map = float("nan")
    last_good = source.copy()
    for epoch in range(cfg.adapt_epochs):
        reports: list[LossReport] = []
        for si, scene in enumerate(target_scenes):
            report = adapt_step(student, teacher, opt, world, scene, cfg, seed, epoch, si)
            if not np.isfinite(report.l_total):
                raise AdaptError(
                    f"adaptation diverged at epoch {epoch}, scene {si} "
                    f"(l_total={report.l_total})",
                    last_good=last_good,
                )
            reports.append(report)
        result = evaluate_model(
            teacher, world, eval_scenes,
            n_jitter=cfg.n_jitter, n_random=cfg.n_random, jitter_sigma=cfg.jitter_sigma,
            nms_iou=cfg.nms_iou,
        )
        final_map = result.map
        row = {"epoch": epoch, "seed": seed, "config_id": config_id, "mAP": result.map}
        for cat in range(world.num_categories):
            row[f"AP_{cat}"] = result.ap.get(cat, "")
        row["L_h"] = float(np.mean([r.l_h for r in reports]))
        row["L_pst"] = float(np.mean([r.l_pst for r in reports]))
        row["L_lscl"] = float(np.mean([r.l_lscl for r in reports]))
        row["N_p_mean"] = float(np.mean([r.n_p for r in reports]))
        row["high_count_mean"] = float(np.mean([r.high_count for r in reports]))
        row["low_count_mean"] = float(np.mean([r.low_count for r in reports]))
        epoch_log.append(row)
        last_good = student.copy()
    if not epoch_log:
        final_map = evaluate_model(
            teacher, world, eval_scenes,
            n_jitter=cfg.n_jitter, n_random=cfg.n_random, jitter_sigma=cfg.jitter_sigma,
            nms_iou=cfg.nms_iou,
        ).map
    return AdaptResult(student=student, teacher=teacher, epoch_log=epoch_log,
                       final_map=final_map)


EPOCH_LOG_COLUMNS = ["epoch", "seed", "config_id", "mAP"]  # + AP_<cat>... then losses


def epoch_log_header(num_categories: int) -> list[str]:
    return (
        EPOCH_LOG_COLUMNS
        + [f"AP_{c}" for c in range(num_categories)]
        + ["L_h", "L_pst", "L_lscl", "N_p_mean", "high_count_mean", "low_count_mean"]
    )
