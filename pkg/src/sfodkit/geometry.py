"""Axis-aligned bounding-box arithmetic: IoU and non-maximum suppression.

Boxes live in continuous 2-D scene coordinates (no pixel quantization);
all area math is done in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with strictly positive area, corners (x1,y1) < (x2,y2)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(np.isfinite(c) for c in coords):
            raise ValueError(f"BBox coordinates must be finite, got {coords}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"BBox must have positive width and height, got {coords}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint, symmetric in a, b."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def boxes_to_array(boxes: list[BBox]) -> np.ndarray:
    """Stack boxes into an (N, 4) float64 array of x1,y1,x2,y2 rows."""
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.stack([b.as_array() for b in boxes])


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) corner-format box arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=inter > 0.0)
    return out


def nms(dets: list[tuple[BBox, float]], iou_threshold: float) -> list[int]:
    """Greedy non-maximum suppression on (box, score) pairs.

    A detection is suppressed iff its IoU with an already-kept
    higher-scored detection exceeds ``iou_threshold`` (strictly).
    Score ties are broken by lower original index, so runs are
    deterministic. Returns kept indices ordered by descending score.
    """
    if not (0.0 <= iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    if not dets:
        return []
    scores = np.array([s for _, s in dets], dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("nms scores must be finite")
    order = sorted(range(len(dets)), key=lambda i: (-scores[i], i))
    boxes = boxes_to_array([b for b, _ in dets])
    mat = iou_matrix(boxes, boxes)
    kept: list[int] = []
    for i in order:
        if all(mat[i, j] <= iou_threshold for j in kept):
            kept.append(i)
    return kept
