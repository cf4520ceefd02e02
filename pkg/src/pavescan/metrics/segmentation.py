from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dataset.taxonomy import NUM_MASK_CLASSES


def seg_confusion(pred: np.ndarray, gt: np.ndarray, n_classes: int = NUM_MASK_CLASSES) -> np.ndarray:
    """Confusion counts M[g, p]; matrices from several images simply add."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    for name, arr in (("prediction", pred), ("ground truth", gt)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"{name} labels outside 0..{n_classes - 1}")
    idx = gt.astype(np.int64).ravel() * n_classes + pred.astype(np.int64).ravel()
    return np.bincount(idx, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


@dataclass
class SegEvalReport:
    confusion: list[list[int]]
    iou: list[float]
    dice: list[float]
    miou: float
    mean_dice: float
    pixel_accuracy: float
    present: list[int]
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion,
            "iou": self.iou,
            "dice": self.dice,
            "miou": self.miou,
            "mean_dice": self.mean_dice,
            "pixel_accuracy": self.pixel_accuracy,
            "present": self.present,
            "flags": self.flags,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SegEvalReport":
        return cls(**d)


def seg_report(confusion) -> SegEvalReport:
    """Per-class IoU and Dice; means over classes that occur in the ground truth."""
    m = [[int(v) for v in row] for row in np.asarray(confusion)]
    n = len(m)
    total = sum(sum(row) for row in m)
    if total == 0:
        raise ValueError("empty confusion matrix")
    rows = [sum(m[c]) for c in range(n)]
    cols = [sum(m[r][c] for r in range(n)) for c in range(n)]
    iou, dice, flags = [], [], []
    for c in range(n):
        # integer operands keep each ratio correctly rounded
        inter, denom = m[c][c], rows[c] + cols[c]
        if denom == 0:
            iou.append(0.0)
            dice.append(0.0)
            flags.append(f"class {c} absent from prediction and ground truth; IoU and Dice set to 0")
            continue
        iou.append(inter / (denom - inter))
        dice.append(2 * inter / denom)
    present = [c for c in range(n) if rows[c] > 0]
    return SegEvalReport(
        confusion=m,
        iou=iou,
        dice=dice,
        miou=sum(iou[c] for c in present) / len(present),
        mean_dice=sum(dice[c] for c in present) / len(present),
        pixel_accuracy=sum(m[c][c] for c in range(n)) / total,
        present=present,
        flags=flags,
    )
