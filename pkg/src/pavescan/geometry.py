"""Box geometry: IoU family and DIoU-NMS on plain (x1, y1, x2, y2) tuples."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    box: tuple[float, float, float, float]  # absolute pixels x1, y1, x2, y2

    def to_json(self, classes=None) -> dict:
        name = classes.name(self.class_id) if classes is not None else self.class_id
        return {"class": name, "score": self.score, "box": list(self.box)}


def _check(box) -> tuple[float, float, float, float]:
    x1, y1, x2, y2 = (float(v) for v in box)
    if not (x2 > x1 and y2 > y1):
        raise ValueError(f"box has no area: {box}")
    return x1, y1, x2, y2


def box_iou(a, b, variant: str = "iou") -> float:
    """IoU, DIoU or CIoU of two xyxy boxes."""
    ax1, ay1, ax2, ay2 = _check(a)
    bx1, by1, bx2, by2 = _check(b)
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    wa, ha, wb, hb = ax2 - ax1, ay2 - ay1, bx2 - bx1, by2 - by1
    union = wa * ha + wb * hb - inter
    iou = inter / union
    if variant == "iou":
        return iou
    cw = max(ax2, bx2) - min(ax1, bx1)
    ch = max(ay2, by2) - min(ay1, by1)
    rho2 = ((ax1 + ax2) / 2 - (bx1 + bx2) / 2) ** 2 + ((ay1 + ay2) / 2 - (by1 + by2) / 2) ** 2
    diou = iou - rho2 / (cw**2 + ch**2)
    if variant == "diou":
        return diou
    if variant != "ciou":
        raise ValueError(f"unknown IoU variant {variant!r}")
    v = 4 / math.pi**2 * (math.atan(wa / ha) - math.atan(wb / hb)) ** 2
    alpha = 0.0 if v == 0 else v / ((1 - iou) + v)
    return diou - alpha * v


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix between (N, 4) and (M, 4) xyxy arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def detection_order(dets) -> list[int]:
    """Indices by descending score, ties by lower x1, then input order."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].box[0], i))


def diou_one_to_many(box, others: np.ndarray) -> np.ndarray:
    """DIoU between one xyxy box and an (N, 4) array, same arithmetic as ``box_iou``."""
    ax1, ay1, ax2, ay2 = (float(v) for v in box)
    bx1, by1, bx2, by2 = (others[:, i] for i in range(4))
    iw = np.maximum(0.0, np.minimum(ax2, bx2) - np.maximum(ax1, bx1))
    ih = np.maximum(0.0, np.minimum(ay2, by2) - np.maximum(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    cw = np.maximum(ax2, bx2) - np.minimum(ax1, bx1)
    ch = np.maximum(ay2, by2) - np.minimum(ay1, by1)
    rho2 = ((ax1 + ax2) / 2 - (bx1 + bx2) / 2) ** 2 + ((ay1 + ay2) / 2 - (by1 + by2) / 2) ** 2
    return inter / union - rho2 / (cw**2 + ch**2)


def diou_nms(detections, nms_threshold: float = 0.45) -> list[Detection]:
    """Greedy per-class NMS suppressing boxes whose DIoU with a kept box exceeds the threshold."""
    kept: list[Detection] = []
    for class_id in sorted({d.class_id for d in detections}):
        cls = [d for d in detections if d.class_id == class_id]
        ordered = [cls[i] for i in detection_order(cls)]
        boxes = np.array([d.box for d in ordered], dtype=np.float64).reshape(-1, 4)
        alive = np.ones(len(ordered), dtype=bool)
        for i, det in enumerate(ordered):
            if not alive[i]:
                continue
            kept.append(det)
            alive[i] = False
            rest = np.nonzero(alive)[0]
            if len(rest):
                alive[rest[diou_one_to_many(det.box, boxes[rest]) > nms_threshold]] = False
    return [kept[i] for i in detection_order(kept)]
