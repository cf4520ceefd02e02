"""Geometric and photometric augmentation with box/mask-consistent geometry.

All geometry is expressed in continuous pixel coordinates where pixel (i, j)
covers [i, i+1) x [j, j+1); box corners and image pixels go through the same
affine map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from ..dataset.records import BoxAnnotation, Sample

MIN_KEPT_AREA = 0.10


@dataclass(frozen=True)
class AugmentationSpec:
    shift_limit: float = 0.0625
    scale_limit: float = 0.1
    rotate_limit: float = 45.0
    hflip_prob: float = 0.5
    brightness_limit: float = 0.2
    contrast_limit: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.hflip_prob <= 1:
            raise ValueError(f"hflip_prob must be in [0, 1], got {self.hflip_prob}")
        for name in ("shift_limit", "scale_limit", "rotate_limit", "brightness_limit", "contrast_limit"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.scale_limit >= 1:
            raise ValueError("scale_limit must be < 1")

    @classmethod
    def identity(cls) -> "AugmentationSpec":
        return cls(0, 0, 0, 0, 0, 0)


@dataclass(frozen=True)
class AugmentParams:
    shift: tuple[float, float] = (0.0, 0.0)  # fraction of width, height
    scale: float = 1.0
    angle: float = 0.0  # degrees
    flip: bool = False
    contrast: float = 1.0
    brightness: float = 0.0  # fraction of 255

    @property
    def is_geometric_identity(self) -> bool:
        return self.shift == (0.0, 0.0) and self.scale == 1.0 and self.angle == 0.0 and not self.flip

    @property
    def is_photometric_identity(self) -> bool:
        return self.contrast == 1.0 and self.brightness == 0.0


def sample_params(spec: AugmentationSpec, rng: np.random.Generator) -> AugmentParams:
    # draws happen unconditionally so the stream position never depends on the limits
    sx, sy = rng.uniform(-1, 1, 2) * spec.shift_limit
    scale = 1 + rng.uniform(-1, 1) * spec.scale_limit
    angle = rng.uniform(-1, 1) * spec.rotate_limit
    flip = bool(rng.uniform() < spec.hflip_prob)
    contrast = 1 + rng.uniform(-1, 1) * spec.contrast_limit
    brightness = rng.uniform(-1, 1) * spec.brightness_limit
    return AugmentParams((float(sx), float(sy)), float(scale), float(angle), flip, float(contrast), float(brightness))


def affine_matrix(params: AugmentParams, width: int, height: int) -> np.ndarray:
    """3x3 map from input to output continuous coordinates: flip, rotate/scale about center, shift."""
    cx, cy = width / 2, height / 2
    flip = np.array([[-1.0, 0, width], [0, 1, 0], [0, 0, 1]]) if params.flip else np.eye(3)
    t = math.radians(params.angle)
    c, s = math.cos(t) * params.scale, math.sin(t) * params.scale
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    to_origin = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1.0]])
    back = np.array([[1, 0, cx + params.shift[0] * width], [0, 1, cy + params.shift[1] * height], [0, 0, 1.0]])
    return back @ rot @ to_origin @ flip


def _pixel_matrix(affine: np.ndarray) -> np.ndarray:
    half = np.array([[1, 0, 0.5], [0, 1, 0.5], [0, 0, 1.0]])
    return (np.linalg.inv(half) @ affine @ half)[:2]


def _warp(array: np.ndarray, affine: np.ndarray, params: AugmentParams, interpolation: int) -> np.ndarray:
    if params.is_geometric_identity:
        return array.copy()
    if params.flip and params.shift == (0.0, 0.0) and params.scale == 1.0 and params.angle == 0.0:
        return array[:, ::-1].copy()
    h, w = array.shape[:2]
    return cv2.warpAffine(
        array, _pixel_matrix(affine), (w, h), flags=interpolation, borderMode=cv2.BORDER_CONSTANT, borderValue=0
    )


def transform_box(
    box: BoxAnnotation, affine: np.ndarray, width: int, height: int
) -> tuple[tuple[float, float, float, float], float] | None:
    """Axis-aligned hull of the transformed corners, clamped; None if < 10% of it survives."""
    x1, y1, x2, y2 = box.to_xyxy(width, height)
    corners = np.array([[x1, y1, 1], [x2, y1, 1], [x1, y2, 1], [x2, y2, 1]]).T
    pts = (affine @ corners)[:2]
    hx1, hy1 = pts.min(axis=1)
    hx2, hy2 = pts.max(axis=1)
    full = (hx2 - hx1) * (hy2 - hy1)
    cx1, cy1 = max(hx1, 0.0), max(hy1, 0.0)
    cx2, cy2 = min(hx2, float(width)), min(hy2, float(height))
    kept = max(cx2 - cx1, 0.0) * max(cy2 - cy1, 0.0)
    if full <= 0 or kept < MIN_KEPT_AREA * full:
        return None
    return (cx1, cy1, cx2, cy2), kept


def _refine_with_mask(box, hull, mask, affine, params, width, height):
    """Tight box of this box's class pixels after the warp, limited to the hull."""
    x1, y1, x2, y2 = box.to_xyxy(width, height)
    c1, r1 = max(int(math.floor(x1 + 1e-6)), 0), max(int(math.floor(y1 + 1e-6)), 0)
    c2, r2 = min(int(math.ceil(x2 - 1e-6)), width), min(int(math.ceil(y2 - 1e-6)), height)
    inst = np.zeros_like(mask)
    inst[r1:r2, c1:c2] = mask[r1:r2, c1:c2] == box.class_id
    warped = _warp(inst, affine, params, cv2.INTER_NEAREST)
    ys, xs = np.nonzero(warped)
    if len(xs) == 0:
        return hull
    # limit to the whole pixels the hull touches; a sub-pixel limit clips thin boxes
    hx1, hy1 = math.floor(hull[0]), math.floor(hull[1])
    hx2, hy2 = math.ceil(hull[2]), math.ceil(hull[3])
    tx1, ty1 = max(float(xs.min()), hx1), max(float(ys.min()), hy1)
    tx2, ty2 = min(float(xs.max() + 1), hx2), min(float(ys.max() + 1), hy2)
    if tx2 <= tx1 or ty2 <= ty1:
        return hull
    return tx1, ty1, tx2, ty2


def apply_params(image: np.ndarray, boxes, mask, params: AugmentParams):
    """Apply one sampled augmentation to image, boxes and mask.

    Boxes are mapped through their corners; when a mask is given, each box is
    tightened to the warped pixels of its class that started inside it.
    """
    height, width = image.shape[:2]
    affine = affine_matrix(params, width, height)
    out_image = _warp(image, affine, params, cv2.INTER_LINEAR)
    out_mask = None if mask is None else _warp(mask, affine, params, cv2.INTER_NEAREST)

    out_boxes = None
    if boxes is not None:
        out_boxes = []
        for box in boxes:
            if params.is_geometric_identity:
                out_boxes.append(box)
                continue
            res = transform_box(box, affine, width, height)
            if res is None:
                continue
            hull, _ = res
            if mask is not None:
                hull = _refine_with_mask(box, hull, mask, affine, params, width, height)
            out_boxes.append(BoxAnnotation.from_xyxy(box.class_id, hull, width, height).clamped())

    if not params.is_photometric_identity:
        adjusted = out_image.astype(np.float32) * params.contrast + params.brightness * 255.0
        out_image = np.clip(np.rint(adjusted), 0, 255).astype(image.dtype)
    return out_image, out_boxes, out_mask


def apply_augmentation(image, boxes, mask, spec: AugmentationSpec, draw: np.random.Generator):
    """Sample one augmentation from ``spec`` using ``draw`` and apply it.

    May return an empty box list when every box leaves the frame.
    """
    return apply_params(image, boxes, mask, sample_params(spec, draw))


def augment_sample(sample: Sample, spec: AugmentationSpec, draw: np.random.Generator) -> Sample:
    image, boxes, mask = apply_augmentation(sample.image, sample.boxes, sample.mask, spec, draw)
    return Sample(sample.id, image, boxes, mask)


def image_stream(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Independent random stream per (seed, epoch, image) so worker count never changes draws."""
    return np.random.default_rng([seed, epoch, index])
