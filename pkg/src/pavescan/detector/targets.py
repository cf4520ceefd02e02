"""Grid/anchor target assignment plus the box encoding shared by training and decoding.

Encoding for a box centered at (cx, cy) px with size (w, h) px on a grid of
stride s and anchor (aw, ah):

    cell = floor(cx / s)        offset = cx / s - cell   (target for sigmoid(tx))
    tw = ln(w / aw)             th = ln(h / ah)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .anchors import shape_iou
from .boxes import Detection
from .config import AnchorSet, DetectorConfig

log = logging.getLogger(__name__)


def encode_box(cx: float, cy: float, w: float, h: float, stride: int, grid: int, anchor) -> tuple:
    """Pixel box -> (cell_x, cell_y, off_x, off_y, tw, th)."""
    gx, gy = cx / stride, cy / stride
    cell_x = min(max(int(math.floor(gx)), 0), grid - 1)
    cell_y = min(max(int(math.floor(gy)), 0), grid - 1)
    return cell_x, cell_y, gx - cell_x, gy - cell_y, math.log(w / anchor[0]), math.log(h / anchor[1])


def decode_box(cell_x, cell_y, off_x, off_y, tw, th, stride: int, anchor) -> tuple[float, float, float, float]:
    """Inverse of ``encode_box``: returns (cx, cy, w, h) in pixels."""
    return (
        (off_x + cell_x) * stride,
        (off_y + cell_y) * stride,
        anchor[0] * math.exp(tw),
        anchor[1] * math.exp(th),
    )


@dataclass
class ScaleTargets:
    """Targets of one image at one scale; arrays are (anchors, grid, grid[, k])."""

    obj: np.ndarray
    offsets: np.ndarray  # off_x, off_y, tw, th
    gt_box: np.ndarray  # x1, y1, x2, y2 in input pixels
    cls: np.ndarray  # class index 0..C-1, -1 where unassigned
    area: np.ndarray


def empty_targets(config: DetectorConfig, anchors: AnchorSet) -> list[ScaleTargets]:
    out = []
    for group, g in zip(anchors.anchors, config.grid_sizes):
        a = len(group)
        out.append(
            ScaleTargets(
                obj=np.zeros((a, g, g), np.float32),
                offsets=np.zeros((a, g, g, 4), np.float64),
                gt_box=np.zeros((a, g, g, 4), np.float64),
                cls=np.full((a, g, g), -1, np.int64),
                area=np.zeros((a, g, g), np.float64),
            )
        )
    return out


def assign_targets(boxes, anchors: AnchorSet, config: DetectorConfig) -> list[ScaleTargets]:
    """Assign each normalized GT box to its center cell on every scale.

    A GT goes to every anchor whose shape IoU exceeds ``config.assign_iou`` and
    always to its single best anchor. When two GTs claim one (cell, anchor) the
    larger one wins.
    """
    size = config.input_size
    targets = empty_targets(config, anchors)
    flat = np.array(anchors.flat())
    for box in boxes:
        cx, cy, w, h = box.cx * size, box.cy * size, box.w * size, box.h * size
        ious = shape_iou([[w, h]], flat)[0]
        chosen = set(np.nonzero(ious > config.assign_iou)[0].tolist()) | {int(np.argmax(ious))}
        area = w * h
        for k in sorted(chosen):
            s, a = anchors.locate(k)
            stride, grid = anchors.strides[s], config.grid_sizes[s]
            cell_x, cell_y, ox, oy, tw, th = encode_box(cx, cy, w, h, stride, grid, flat[k])
            t = targets[s]
            if t.obj[a, cell_y, cell_x] > 0:
                log.warning("two boxes claim scale %d anchor %d cell (%d, %d); keeping the larger", s, a, cell_x, cell_y)
                if t.area[a, cell_y, cell_x] >= area:
                    continue
            t.obj[a, cell_y, cell_x] = 1.0
            t.offsets[a, cell_y, cell_x] = (ox, oy, tw, th)
            t.gt_box[a, cell_y, cell_x] = (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
            t.cls[a, cell_y, cell_x] = box.class_id - 1
            t.area[a, cell_y, cell_x] = area
    return targets


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def decode_predictions(raw, anchors: AnchorSet, conf_threshold: float = 0.25, max_candidates: int | None = None):
    """Turn one image's raw head outputs into class-scored pixel boxes.

    ``raw`` holds one array per scale shaped (anchors, grid, grid, 5 + classes).
    Emits one Detection per (cell, anchor, class) whose objectness x class
    probability reaches ``conf_threshold``.
    """
    dets = []
    for s, (pred, group) in enumerate(zip(raw, anchors.anchors)):
        pred = np.asarray(pred, dtype=np.float64)
        stride = anchors.strides[s]
        n_a, gh, gw, _ = pred.shape
        gy, gx = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
        anc = np.asarray(group, dtype=np.float64)
        with np.errstate(over="ignore"):
            cx = (_sigmoid(pred[..., 0]) + gx) * stride
            cy = (_sigmoid(pred[..., 1]) + gy) * stride
            w = anc[:, 0, None, None] * np.exp(pred[..., 2])
            h = anc[:, 1, None, None] * np.exp(pred[..., 3])
            scores = _sigmoid(pred[..., 4])[..., None] * _sigmoid(pred[..., 5:])
        hits = np.argwhere(scores >= conf_threshold)
        for a, i, j, c in hits:
            box = (cx[a, i, j] - w[a, i, j] / 2, cy[a, i, j] - h[a, i, j] / 2,
                   cx[a, i, j] + w[a, i, j] / 2, cy[a, i, j] + h[a, i, j] / 2)
            if not (box[2] > box[0] and box[3] > box[1]) or not all(map(math.isfinite, box)):
                continue
            dets.append(Detection(int(c) + 1, float(scores[a, i, j, c]), tuple(float(v) for v in box)))
    if max_candidates is not None and len(dets) > max_candidates:
        dets.sort(key=lambda d: -d.score)
        dets = dets[:max_candidates]
    return dets
