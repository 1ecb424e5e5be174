"""Box primitives against hand-computed values and brute-force loops."""
import numpy as np
import pytest

from sfodkit.geometry import BBox, boxes_to_array, iou, iou_matrix, nms
from reference_impls import rand_box, ref_iou, ref_nms


def test_iou_hand_value():
    # inter = 1x1, union = 4 + 4 - 1 = 7
    assert iou(BBox(0, 0, 2, 2), BBox(1, 1, 3, 3)) == 1 / 7


def test_iou_identical_and_disjoint():
    a = BBox(3, 4, 10, 12)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(20, 20, 30, 30)) == 0.0
    # touching edges share zero area
    assert iou(BBox(0, 0, 5, 5), BBox(5, 0, 10, 5)) == 0.0


def test_iou_symmetry_random():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rand_box(rng), rand_box(rng)
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(ref_iou((a.x1, a.y1, a.x2, a.y2),
                                          (b.x1, b.y1, b.x2, b.y2)), abs=0)


def test_bbox_validation():
    with pytest.raises(ValueError):
        BBox(0, 0, 0, 5)  # zero width
    with pytest.raises(ValueError):
        BBox(5, 0, 4, 5)  # inverted
    with pytest.raises(ValueError):
        BBox(0, 0, float("nan"), 5)
    with pytest.raises(ValueError):
        BBox(0, 0, float("inf"), 5)


def test_boxes_to_array_layout():
    arr = boxes_to_array([BBox(1, 2, 3, 4), BBox(5, 6, 7, 8)])
    assert arr.shape == (2, 4)
    assert arr.tolist() == [[1, 2, 3, 4], [5, 6, 7, 8]]
    assert boxes_to_array([]).shape == (0, 4)


def test_iou_matrix_matches_scalar():
    rng = np.random.default_rng(1)
    a = [rand_box(rng) for _ in range(7)]
    b = [rand_box(rng) for _ in range(5)]
    m = iou_matrix(boxes_to_array(a), boxes_to_array(b))
    assert m.shape == (7, 5)
    for i in range(7):
        for j in range(5):
            assert m[i, j] == pytest.approx(iou(a[i], b[j]), abs=1e-12)


def test_nms_hand_trace():
    # A (0.9) suppresses A' (IoU 0.8 > 0.5); disjoint B (0.5) survives
    dets = [(BBox(0, 0, 10, 10), 0.9), (BBox(0, 0, 10, 8), 0.7),
            (BBox(20, 20, 30, 30), 0.5)]
    assert iou(dets[0][0], dets[1][0]) == 0.8
    assert nms(dets, 0.5) == [0, 2]


def test_nms_exact_threshold_kept():
    # suppression is strict >, so IoU exactly 0.5 survives
    dets = [(BBox(0, 0, 10, 10), 0.9), (BBox(0, 0, 10, 5), 0.7)]
    assert iou(dets[0][0], dets[1][0]) == 0.5
    assert nms(dets, 0.5) == [0, 1]


def test_nms_tie_lower_index_first():
    dets = [(BBox(0, 0, 10, 10), 0.7), (BBox(0, 0, 10, 9), 0.7)]
    assert nms(dets, 0.5) == [0]
    assert nms(list(reversed(dets)), 0.5) == [0]


def test_nms_empty_and_validation():
    assert nms([], 0.5) == []
    with pytest.raises(ValueError):
        nms([(BBox(0, 0, 1, 1), 0.5)], -0.1)
    with pytest.raises(ValueError):
        nms([(BBox(0, 0, 1, 1), 0.5)], 1.5)
    with pytest.raises(ValueError):
        nms([(BBox(0, 0, 1, 1), float("nan"))], 0.5)


def test_nms_matches_reference_random():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(1, 20))
        boxes = [rand_box(rng) for _ in range(n)]
        scores = np.round(rng.random(n), 2)  # ties on purpose
        dets = list(zip(boxes, (float(s) for s in scores)))
        thr = float(rng.choice([0.1, 0.3, 0.5, 0.7]))
        assert list(nms(dets, thr)) == ref_nms(dets, thr)
