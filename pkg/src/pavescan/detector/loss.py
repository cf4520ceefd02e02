from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

from .config import AnchorSet, DetectorConfig
from .targets import ScaleTargets


def ciou_torch(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """CIoU of matching rows of two (N, 4) xyxy tensors, differentiable everywhere off kinks."""
    px1, py1, px2, py2 = pred.unbind(-1)
    tx1, ty1, tx2, ty2 = target.unbind(-1)
    pw, ph, tw, th = px2 - px1, py2 - py1, tx2 - tx1, ty2 - ty1
    iw = (torch.minimum(px2, tx2) - torch.maximum(px1, tx1)).clamp(min=0)
    ih = (torch.minimum(py2, ty2) - torch.maximum(py1, ty1)).clamp(min=0)
    inter = iw * ih
    union = pw * ph + tw * th - inter
    iou = inter / union
    cw = torch.maximum(px2, tx2) - torch.minimum(px1, tx1)
    ch = torch.maximum(py2, ty2) - torch.minimum(py1, ty1)
    rho2 = ((px1 + px2) / 2 - (tx1 + tx2) / 2) ** 2 + ((py1 + py2) / 2 - (ty1 + ty2) / 2) ** 2
    diou = iou - rho2 / (cw**2 + ch**2)
    v = 4 / math.pi**2 * (torch.atan(pw / ph) - torch.atan(tw / th)) ** 2
    denom = (1 - iou) + v
    alpha = v / torch.where(denom > 0, denom, torch.ones_like(denom))
    return diou - alpha * v


def collate_targets(per_image: list[list[ScaleTargets]], device=None, dtype=torch.float32) -> list[dict]:
    """Stack per-image targets into batched tensors, one dict per scale."""
    out = []
    for s in range(len(per_image[0])):
        scale = [t[s] for t in per_image]
        out.append(
            {
                "obj": torch.as_tensor(np.stack([t.obj for t in scale]), dtype=dtype, device=device),
                "gt_box": torch.as_tensor(np.stack([t.gt_box for t in scale]), dtype=dtype, device=device),
                "cls": torch.as_tensor(np.stack([t.cls for t in scale]), device=device),
            }
        )
    return out


def decode_boxes_torch(pred: torch.Tensor, stride: int, anchors) -> torch.Tensor:
    """(B, A, G, G, >=4) raw head output -> (B, A, G, G, 4) xyxy pixel boxes."""
    _, _, gh, gw, _ = pred.shape
    gy, gx = torch.meshgrid(
        torch.arange(gh, dtype=pred.dtype, device=pred.device),
        torch.arange(gw, dtype=pred.dtype, device=pred.device),
        indexing="ij",
    )
    anc = torch.as_tensor(anchors, dtype=pred.dtype, device=pred.device)
    cx = (torch.sigmoid(pred[..., 0]) + gx) * stride
    cy = (torch.sigmoid(pred[..., 1]) + gy) * stride
    w = anc[:, 0, None, None] * torch.exp(pred[..., 2])
    h = anc[:, 1, None, None] * torch.exp(pred[..., 3])
    return torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], dim=-1)


def detection_loss(raw, targets, anchors: AnchorSet, config: DetectorConfig):
    """CIoU box loss, objectness BCE and label-smoothed class BCE.

    Box and class sums are divided by the number of positives, objectness by
    the number of (cell, anchor) slots. Returns (total, box, obj, cls).
    """
    eps = config.label_smoothing
    box_sum = raw[0].new_zeros(())
    obj_sum = raw[0].new_zeros(())
    cls_sum = raw[0].new_zeros(())
    n_pos = 0
    n_cells = 0
    for s, (pred, tgt) in enumerate(zip(raw, targets)):
        obj_t = tgt["obj"].to(pred.dtype)
        pos = obj_t > 0.5
        n_cells += obj_t.numel()
        obj_weight = torch.ones_like(obj_t)
        need_boxes = pos.any() or config.ignore_iou > 0
        boxes = decode_boxes_torch(pred, anchors.strides[s], anchors.anchors[s]) if need_boxes else None
        if pos.any():
            n_pos += int(pos.sum())
            p = pred[pos]
            box_sum = box_sum + (1 - ciou_torch(boxes[pos], tgt["gt_box"][pos].to(pred.dtype))).sum()
            onehot = F.one_hot(tgt["cls"][pos], config.num_classes).to(pred.dtype)
            smoothed = onehot * (1 - eps) + eps / 2
            cls_sum = cls_sum + F.binary_cross_entropy_with_logits(p[:, 5:], smoothed, reduction="sum")
        if config.ignore_iou > 0:
            obj_weight = _ignore_weights(boxes.detach(), targets, pos, config.ignore_iou)
        obj_sum = obj_sum + F.binary_cross_entropy_with_logits(pred[..., 4], obj_t, weight=obj_weight, reduction="sum")
    box_term = box_sum / n_pos if n_pos else box_sum
    cls_term = cls_sum / n_pos if n_pos else cls_sum
    obj_term = obj_sum / n_cells
    total = config.lambda_box * box_term + config.lambda_obj * obj_term + config.lambda_cls * cls_term
    return total, box_term, obj_term, cls_term


def _ignore_weights(boxes, targets, pos, threshold):
    """Zero objectness weight for negatives whose predicted box overlaps any GT above ``threshold``."""
    b = boxes.shape[0]
    weights = torch.ones(boxes.shape[:-1], dtype=boxes.dtype, device=boxes.device)
    for i in range(b):
        gts = torch.cat([t["gt_box"][i][t["obj"][i] > 0.5] for t in targets]).to(boxes.dtype)
        if not len(gts):
            continue
        pb = boxes[i].reshape(-1, 4)
        lt = torch.maximum(pb[:, None, :2], gts[None, :, :2])
        rb = torch.minimum(pb[:, None, 2:], gts[None, :, 2:])
        wh = (rb - lt).clamp(min=0)
        inter = wh[..., 0] * wh[..., 1]
        area_p = (pb[:, 2] - pb[:, 0]) * (pb[:, 3] - pb[:, 1])
        area_g = (gts[:, 2] - gts[:, 0]) * (gts[:, 3] - gts[:, 1])
        best = (inter / (area_p[:, None] + area_g[None, :] - inter)).max(dim=1).values
        weights[i] = (best <= threshold).to(boxes.dtype).reshape(weights[i].shape)
    return torch.where(pos, torch.ones_like(weights), weights)
