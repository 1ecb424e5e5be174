"""Brute-force references the library is checked against.

Everything here is written as plain Python loops with scalar
arithmetic, deliberately sharing no code with the package: IoU is
recomputed inline from min/max, matching scans every pair, and AP
accumulates the precision envelope step by step. Slow but obvious.
"""
import numpy as np

from sfodkit.geometry import BBox


def ref_iou(a, b):
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def ref_nms(dets, thr):
    """Greedy keep-list: score order, strict-overlap suppression."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    kept = []
    for i in order:
        a = dets[i][0]
        arr_a = (a.x1, a.y1, a.x2, a.y2)
        ok = True
        for j in kept:
            b = dets[j][0]
            if ref_iou(arr_a, (b.x1, b.y1, b.x2, b.y2)) > thr:
                ok = False
                break
        if ok:
            kept.append(i)
    return kept


def ref_nearest(boxes):
    n = len(boxes)
    out = []
    for i in range(n):
        best_j, best_v = None, -1.0
        for j in range(n):
            if j == i:
                continue
            v = ref_iou((boxes[i].x1, boxes[i].y1, boxes[i].x2, boxes[i].y2),
                        (boxes[j].x1, boxes[j].y1, boxes[j].x2, boxes[j].y2))
            if v > best_v:
                best_j, best_v = j, v
        out.append(best_j)
    return out


def ref_assign(proposals, pseudo, num_categories, thr):
    labels = []
    for p in proposals:
        best_j, best_v = None, -1.0
        for j, d in enumerate(pseudo):
            v = ref_iou((p.box.x1, p.box.y1, p.box.x2, p.box.y2),
                        (d.box.x1, d.box.y1, d.box.x2, d.box.y2))
            if v > best_v:
                best_j, best_v = j, v
        if best_j is not None and best_v >= thr:
            labels.append(pseudo[best_j].category)
        else:
            labels.append(num_categories)
    return labels


def ref_ap(detections, ground_truth, iou_threshold=0.5):
    """All-point-interpolated AP per category, greedy matching in score order."""
    cats = sorted({c for objs in ground_truth.values() for c, _ in objs})
    n_gt = {c: sum(1 for objs in ground_truth.values() for cc, _ in objs if cc == c)
            for c in cats}
    aps = {}
    for cat in cats:
        dets = [(sid, d) for sid, d in detections if d.category == cat]
        if not dets:
            aps[cat] = 0.0
            continue
        order = sorted(range(len(dets)), key=lambda k: (-dets[k][1].score, dets[k][0], k))
        used = {sid: set() for sid in ground_truth}
        tps, fps = [], []
        for k in order:
            sid, det = dets[k]
            best_i, best_v = None, -1.0
            for gi, (cc, b) in enumerate(ground_truth.get(sid, [])):
                if cc != cat:
                    continue
                v = ref_iou((det.box.x1, det.box.y1, det.box.x2, det.box.y2),
                            (b.x1, b.y1, b.x2, b.y2))
                if v > best_v:
                    best_i, best_v = gi, v
            if best_i is not None and best_v >= iou_threshold and best_i not in used[sid]:
                used[sid].add(best_i)
                tps.append(1.0)
                fps.append(0.0)
            else:
                tps.append(0.0)
                fps.append(1.0)
        rec, prec = [], []
        ctp = cfp = 0.0
        for t, f in zip(tps, fps):
            ctp += t
            cfp += f
            rec.append(ctp / n_gt[cat])
            prec.append(ctp / (ctp + cfp))
        mrec = [0.0] + rec + [1.0]
        mpre = [0.0] + prec + [0.0]
        for i in range(len(mpre) - 2, -1, -1):
            mpre[i] = max(mpre[i], mpre[i + 1])
        total = 0.0
        for i in range(len(mrec) - 1):
            if mrec[i + 1] != mrec[i]:
                total += (mrec[i + 1] - mrec[i]) * mpre[i + 1]
        aps[cat] = total
    return aps


def rand_box(rng, lo=0.0, hi=100.0):
    x = np.sort(rng.uniform(lo, hi, 2))
    y = np.sort(rng.uniform(lo, hi, 2))
    if x[1] - x[0] < 1e-3:
        x[1] = x[0] + 1.0
    if y[1] - y[0] < 1e-3:
        y[1] = y[0] + 1.0
    return BBox(float(x[0]), float(y[0]), float(x[1]), float(y[1]))
