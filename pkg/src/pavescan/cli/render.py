from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from ..dataset.taxonomy import CLASSES, ClassTable

DEFAULT_COLORS = {
    1: (255, 0, 0),  # AlligatorCrack, red
    2: (0, 0, 255),  # BowlDepression, blue
    3: (0, 255, 0),  # Delamination, green
    4: (255, 255, 0),  # Crack, yellow
    5: (0, 255, 255),  # Scaling, light blue
}


@dataclass(frozen=True)
class OverlayStyle:
    colors: dict[int, tuple[int, int, int]] = field(default_factory=lambda: dict(DEFAULT_COLORS))
    alpha: float = 0.5
    line_width: int = 2

    def __post_init__(self):
        if len(set(self.colors.values())) != len(self.colors):
            raise ValueError("overlay colors must be distinct")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must be in [0, 1]")


def render_overlay(image: np.ndarray, detections=None, mask: np.ndarray | None = None,
                   style: OverlayStyle | None = None, classes: ClassTable = CLASSES) -> np.ndarray:
    """Blend a label mask and/or draw detections onto a copy of an RGB image."""
    style = style or OverlayStyle()
    out = image.copy()
    if mask is not None:
        if mask.shape != image.shape[:2]:
            raise ValueError(f"mask {mask.shape} does not match image {image.shape[:2]}")
        blended = out.astype(np.float64)
        for class_id, color in style.colors.items():
            sel = mask == class_id
            if sel.any():
                blended[sel] = (1 - style.alpha) * blended[sel] + style.alpha * np.asarray(color, np.float64)
        out = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
    for det in detections or []:
        color = tuple(int(c) for c in style.colors.get(det.class_id, (255, 255, 255)))
        x1, y1, x2, y2 = (int(round(v)) for v in det.box)
        cv2.rectangle(out, (x1, y1), (x2 - 1, y2 - 1), color, style.line_width)
        label = f"{classes.name(det.class_id)} {det.score:.2f}"
        cv2.putText(out, label, (x1, max(y1 - 4, 10)), cv2.FONT_HERSHEY_SIMPLEX, 0.4, color, 1, cv2.LINE_AA)
    return out


def colorize_mask(mask: np.ndarray, style: OverlayStyle | None = None) -> np.ndarray:
    style = style or OverlayStyle()
    out = np.zeros(mask.shape + (3,), np.uint8)
    for class_id, color in style.colors.items():
        out[mask == class_id] = color
    return out
