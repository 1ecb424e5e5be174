"""Teacher-side pseudo-label production.

Teacher detections are split into a high-confidence band (trained on as
hard labels) and a low-confidence band (exploited by the soft-training
and contrastive objectives); everything below the low threshold is
discarded. Hard labels reach proposals through IoU-based assignment
against the high band, and the low band selects the proposal subset the
soft objectives operate on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detector import Detection
from .geometry import boxes_to_array, iou_matrix
from .synthworld import Proposal


@dataclass
class PseudoLabelSet:
    high: list[Detection]
    low: list[Detection]
    sigma_h: float
    sigma_l: float

    def __post_init__(self):
        if not (0.0 <= self.sigma_l <= self.sigma_h <= 1.0):
            raise ValueError("need 0 <= sigma_l <= sigma_h <= 1")
        for det in self.high:
            if det.score < self.sigma_h:
                raise ValueError("high band contains a detection below sigma_h")
        for det in self.low:
            if not (self.sigma_l <= det.score < self.sigma_h):
                raise ValueError("low band member outside [sigma_l, sigma_h)")


def partition_detections(
    dets: list[Detection], sigma_h: float, sigma_l: float
) -> PseudoLabelSet:
    """Three-way split by confidence; order within each band is preserved."""
    high = [d for d in dets if d.score >= sigma_h]
    low = [d for d in dets if sigma_l <= d.score < sigma_h]
    return PseudoLabelSet(high=high, low=low, sigma_h=sigma_h, sigma_l=sigma_l)


def assign_labels(
    proposals: list[Proposal],
    pseudo: list[Detection],
    num_categories: int,
    fg_iou_threshold: float = 0.5,
) -> np.ndarray:
    """Hard label per proposal: category of its best-IoU pseudo-box, else background.

    Background is index ``num_categories``. IoU ties go to the
    lower-indexed pseudo-box (argmax convention). An empty pseudo list
    labels everything background.
    """
    if not (0.0 < fg_iou_threshold < 1.0):
        raise ValueError("fg_iou_threshold must lie in (0, 1)")
    labels = np.full(len(proposals), num_categories, dtype=np.intp)
    if not proposals or not pseudo:
        return labels
    overlaps = iou_matrix(
        boxes_to_array([p.box for p in proposals]),
        boxes_to_array([d.box for d in pseudo]),
    )
    best = overlaps.argmax(axis=1)
    best_iou = overlaps[np.arange(len(proposals)), best]
    for i, (j, v) in enumerate(zip(best, best_iou)):
        if v >= fg_iou_threshold:
            labels[i] = pseudo[j].category
    return labels


def match_low_confidence(
    proposals: list[Proposal],
    low: list[Detection],
    match_iou_threshold: float = 0.5,
) -> list[int]:
    """Indices (original order) of proposals overlapping any low-band box enough."""
    if not (0.0 < match_iou_threshold < 1.0):
        raise ValueError("match_iou_threshold must lie in (0, 1)")
    if not proposals or not low:
        return []
    overlaps = iou_matrix(
        boxes_to_array([p.box for p in proposals]),
        boxes_to_array([d.box for d in low]),
    )
    keep = overlaps.max(axis=1) >= match_iou_threshold
    return [i for i in range(len(proposals)) if keep[i]]
