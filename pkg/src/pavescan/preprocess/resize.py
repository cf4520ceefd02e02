from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from ..dataset.records import Sample
from .clahe import ClaheParams, as_rgb, clahe

PREPROCESS_MODES = ("none", "clahe")


def resize_image(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    w, h = size
    if image.shape[1] == w and image.shape[0] == h:
        return image.copy()
    return cv2.resize(image, (w, h), interpolation=cv2.INTER_LINEAR)


def resize_mask(mask: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    w, h = size
    if mask.shape[1] == w and mask.shape[0] == h:
        return mask.copy()
    return cv2.resize(mask, (w, h), interpolation=cv2.INTER_NEAREST)


def resize_with_annotations(sample: Sample, target: tuple[int, int]) -> Sample:
    """Bilinear image, nearest-neighbour mask; normalized boxes are unchanged."""
    w, h = target
    if w < 1 or h < 1:
        raise ValueError(f"target size must be >= 1, got {target}")
    mask = None if sample.mask is None else resize_mask(sample.mask, target)
    return Sample(sample.id, resize_image(sample.image, target), list(sample.boxes), mask)


@dataclass(frozen=True)
class PreprocessConfig:
    """Model-input preparation: resize, then optional CLAHE, always 3 channels out."""

    mode: str = "none"
    clahe: ClaheParams = ClaheParams()

    def __post_init__(self):
        if self.mode not in PREPROCESS_MODES:
            raise ValueError(f"preprocess mode must be one of {PREPROCESS_MODES}, got {self.mode!r}")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "clahe_clip": self.clahe.clip_limit,
            "clahe_tiles": list(self.clahe.tiles),
            "clahe_mode": self.clahe.mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessConfig":
        return cls(
            mode=d.get("mode", "none"),
            clahe=ClaheParams(
                clip_limit=float(d.get("clahe_clip", 2.0)),
                tiles=tuple(int(t) for t in d.get("clahe_tiles", (8, 8))),
                mode=d.get("clahe_mode", "grayscale"),
            ),
        )


def prepare_image(image: np.ndarray, size: tuple[int, int], config: PreprocessConfig) -> np.ndarray:
    out = resize_image(image, size)
    if config.mode == "clahe":
        out = as_rgb(clahe(out, config.clahe))
    return out
