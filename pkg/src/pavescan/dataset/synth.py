"""Procedural pavement images with exact boxes and masks.

Each instance is rendered inside its own rectangle; rectangles never overlap, so
an instance's box is always the tight bounding box of its mask pixels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .records import BoxAnnotation, DatasetManifest, ImageRecord, write_box_file, write_manifest, write_mask
from .taxonomy import ALLIGATOR_CRACK, BOWL_DEPRESSION, CLASSES, CRACK, DELAMINATION, SCALING

log = logging.getLogger(__name__)

DEFAULT_SIZE = (600, 400)
PLACEMENT_MARGIN = 6
MAX_PLACEMENT_TRIES = 40


@dataclass
class Instance:
    class_id: int
    mask: np.ndarray  # bool, full image size
    box: tuple[int, int, int, int]  # x1, y1, x2, y2 pixel edges (exclusive max)


@dataclass
class SyntheticScene:
    image: np.ndarray
    mask: np.ndarray
    instances: list[Instance]

    def boxes(self) -> list[BoxAnnotation]:
        h, w = self.mask.shape
        return [BoxAnnotation.from_xyxy(inst.class_id, inst.box, w, h).clamped() for inst in self.instances]


def tight_box(mask: np.ndarray) -> tuple[int, int, int, int] | None:
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def _asphalt(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    base = rng.uniform(95, 150)
    coarse = cv2.resize(
        rng.normal(0, 1, (height // 16 + 2, width // 16 + 2)).astype(np.float32),
        (width, height),
        interpolation=cv2.INTER_CUBIC,
    )
    fine = rng.normal(0, 5.0, (height, width)).astype(np.float32)
    gray = base + 9.0 * coarse + fine
    tint = rng.uniform(-4, 4, 3).astype(np.float32)
    return gray[..., None] + tint[None, None, :]


def _irregular_polygon(rng, w, h, n=12, lo=0.7, hi=1.0, smooth=True) -> np.ndarray:
    """Star-shaped polygon inscribed in a w x h rectangle (local coordinates)."""
    angles = np.sort(rng.uniform(0, 2 * np.pi, n)) if not smooth else np.linspace(0, 2 * np.pi, n, endpoint=False)
    radii = rng.uniform(lo, hi, n)
    if smooth:
        radii = (radii + np.roll(radii, 1) + np.roll(radii, -1)) / 3
    cx, cy = (w - 1) / 2, (h - 1) / 2
    pts = np.stack([cx + radii * cx * np.cos(angles), cy + radii * cy * np.sin(angles)], axis=1)
    return np.round(pts).astype(np.int32)


def _render_crack(rng, w, h):
    thickness = int(rng.integers(1, 5))
    n_seg = int(rng.integers(3, 8))
    horizontal = w >= h
    length = w if horizontal else h
    pts = []
    pos = rng.uniform(0.2, 0.8) * (h if horizontal else w)
    for i in range(n_seg + 1):
        along = i * (length - 1) / n_seg
        pos += rng.normal(0, 0.12 * (h if horizontal else w))
        pos = float(np.clip(pos, thickness, (h if horizontal else w) - 1 - thickness))
        pts.append((along, pos) if horizontal else (pos, along))
    canvas = np.zeros((h, w), np.uint8)
    cv2.polylines(canvas, [np.round(np.array(pts)).astype(np.int32)], False, 255, thickness, cv2.LINE_AA)
    alpha = canvas.astype(np.float32) / 255
    mask = canvas >= 128
    depth = rng.uniform(55, 85)
    return mask, -depth * alpha


def _render_alligator(rng, w, h):
    region = np.zeros((h, w), np.uint8)
    cv2.fillPoly(region, [_irregular_polygon(rng, w, h, lo=0.75, hi=1.0)], 1)
    cell = rng.uniform(11, 18)
    nx, ny = int(w / cell) + 2, int(h / cell) + 2
    gx, gy = np.meshgrid(np.arange(nx) * cell, np.arange(ny) * cell)
    gx = gx + rng.uniform(-0.35, 0.35, gx.shape) * cell
    gy = gy + rng.uniform(-0.35, 0.35, gy.shape) * cell
    lines = np.zeros((h, w), np.uint8)
    thickness = int(rng.integers(1, 3))
    for j in range(ny):
        for i in range(nx):
            p = (int(round(gx[j, i])), int(round(gy[j, i])))
            if i + 1 < nx:
                cv2.line(lines, p, (int(round(gx[j, i + 1])), int(round(gy[j, i + 1]))), 255, thickness, cv2.LINE_AA)
            if j + 1 < ny:
                cv2.line(lines, p, (int(round(gx[j + 1, i])), int(round(gy[j + 1, i]))), 255, thickness, cv2.LINE_AA)
    alpha = lines.astype(np.float32) / 255 * region
    depth = rng.uniform(55, 80)
    return region.astype(bool), -depth * alpha - 6.0 * region


def _render_bowl(rng, w, h):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    cx, cy = (w - 1) / 2, (h - 1) / 2
    ax, ay = 0.98 * w / 2, 0.98 * h / 2
    r2 = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2
    mask = r2 < 1
    depth = rng.uniform(55, 85)
    shade = np.where(mask, depth * np.clip(1 - r2, 0, 1) ** 0.6, 0)
    return mask, -shade.astype(np.float32)


def _render_delamination(rng, w, h):
    canvas = np.zeros((h, w), np.uint8)
    cv2.fillPoly(canvas, [_irregular_polygon(rng, w, h, n=int(rng.integers(7, 12)), lo=0.5, hi=1.0, smooth=False)], 1)
    mask = canvas.astype(bool)
    level = rng.uniform(45, 60)
    return mask, mask.astype(np.float32) * -level


def _render_scaling(rng, w, h):
    region = np.zeros((h, w), np.uint8)
    cv2.fillPoly(region, [_irregular_polygon(rng, w, h, lo=0.8, hi=1.0)], 1)
    speckle = rng.uniform(-1, 1, (h, w)).astype(np.float32)
    pits = (rng.uniform(0, 1, (h, w)) < 0.12).astype(np.float32)
    delta = 38 * speckle - 45 * pits + 10
    return region.astype(bool), delta * region


_RENDERERS = {
    ALLIGATOR_CRACK.id: (_render_alligator, (0.22, 0.40), (0.25, 0.45)),
    BOWL_DEPRESSION.id: (_render_bowl, (0.10, 0.22), (0.12, 0.30)),
    DELAMINATION.id: (_render_delamination, (0.10, 0.22), (0.12, 0.30)),
    CRACK.id: (_render_crack, None, None),
    SCALING.id: (_render_scaling, (0.30, 0.55), (0.35, 0.65)),
}


def _region_size(rng, class_id, width, height) -> tuple[int, int]:
    if class_id == CRACK.id:
        if rng.uniform() < 0.5:
            return int(rng.uniform(0.3, 0.6) * width), int(rng.uniform(0.06, 0.2) * height)
        return int(rng.uniform(0.06, 0.2) * width), int(rng.uniform(0.35, 0.7) * height)
    _, wr, hr = _RENDERERS[class_id]
    return int(rng.uniform(*wr) * width), int(rng.uniform(*hr) * height)


def _overlaps(rect, placed) -> bool:
    x1, y1, x2, y2 = rect
    m = PLACEMENT_MARGIN
    return any(x1 < px2 + m and px1 < x2 + m and y1 < py2 + m and py1 < y2 + m for px1, py1, px2, py2 in placed)


def synthesize_scene(
    rng: np.random.Generator,
    size: tuple[int, int] = DEFAULT_SIZE,
    class_mix=None,
    max_instances: int = 3,
) -> SyntheticScene:
    width, height = size
    mix = np.ones(len(CLASSES)) if class_mix is None else np.asarray(class_mix, dtype=float)
    mix = mix / mix.sum()
    image = _asphalt(rng, width, height)
    mask = np.zeros((height, width), np.uint8)
    n = int(rng.integers(1, max_instances + 1))
    wanted = [int(c) for c in rng.choice(CLASSES.ids, size=n, p=mix)]
    placed: list[tuple[int, int, int, int]] = []
    instances: list[Instance] = []
    for class_id in wanted:
        if class_id == SCALING.id and any(i.class_id == SCALING.id for i in instances):
            continue
        for _ in range(MAX_PLACEMENT_TRIES):
            w, h = _region_size(rng, class_id, width, height)
            w, h = max(w, 8), max(h, 8)
            x1 = int(rng.integers(0, width - w + 1))
            y1 = int(rng.integers(0, height - h + 1))
            rect = (x1, y1, x1 + w, y1 + h)
            if not _overlaps(rect, placed):
                break
        else:
            continue
        render = _RENDERERS[class_id][0]
        local_mask, delta = render(rng, w, h)
        box = tight_box(local_mask)
        if box is None:
            continue
        placed.append(rect)
        image[y1 : y1 + h, x1 : x1 + w] += delta[..., None]
        full = np.zeros((height, width), bool)
        full[y1 : y1 + h, x1 : x1 + w] = local_mask
        mask[full] = class_id
        bx1, by1, bx2, by2 = box
        instances.append(Instance(class_id, full, (x1 + bx1, y1 + by1, x1 + bx2, y1 + by2)))
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    return SyntheticScene(image=image, mask=mask, instances=instances)


def generate_synthetic(
    n_images: int,
    out,
    size: tuple[int, int] = DEFAULT_SIZE,
    seed: int = 0,
    class_mix=None,
    max_instances: int = 3,
) -> DatasetManifest:
    """Write ``n_images`` synthetic survey images with boxes and masks under ``out``."""
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    out = Path(out)
    for sub in ("images", "labels", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n_images):
        rng = np.random.default_rng([seed, i])
        scene = synthesize_scene(rng, size, class_mix, max_instances)
        rec_id = f"syn_{i:05d}"
        image_rel, mask_rel = f"images/{rec_id}.png", f"masks/{rec_id}.png"
        cv2.imwrite(str(out / image_rel), cv2.cvtColor(scene.image, cv2.COLOR_RGB2BGR))
        write_mask(out / mask_rel, scene.mask)
        boxes = scene.boxes()
        write_box_file(out / "labels" / f"{rec_id}.txt", boxes)
        records.append(ImageRecord(rec_id, image_rel, size[0], size[1], tuple(boxes), mask_rel))
    manifest = DatasetManifest(records=tuple(records), seed=seed, root=out)
    write_manifest(manifest, out)
    log.info("wrote %d synthetic images to %s", n_images, out)
    return manifest
