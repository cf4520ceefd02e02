"""Contrast Limited Adaptive Histogram Equalization on 8-bit images."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import cv2
import numpy as np

log = logging.getLogger(__name__)

MODES = ("grayscale", "luminance")


@dataclass(frozen=True)
class ClaheParams:
    clip_limit: float = 2.0
    tiles: tuple[int, int] = (8, 8)
    mode: str = "grayscale"

    def __post_init__(self):
        if not self.clip_limit > 0:
            raise ValueError(f"clip_limit must be > 0, got {self.clip_limit}")
        rows, cols = self.tiles
        if rows < 1 or cols < 1:
            raise ValueError(f"tiles must be >= (1, 1), got {self.tiles}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def rgb_to_luma(image: np.ndarray) -> np.ndarray:
    """Rounded 0.299R + 0.587G + 0.114B."""
    rgb = image.astype(np.float64)
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.rint(y), 0, 255).astype(np.uint8)


def _tile_edges(n: int, tiles: int) -> np.ndarray:
    return np.linspace(0, n, tiles + 1).round().astype(int)


def tile_mappings(gray: np.ndarray, params: ClaheParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-tile gray-level mappings, shape (rows, cols, 256), plus tile row/col edges."""
    h, w = gray.shape
    rows, cols = params.tiles
    if rows > h or cols > w:
        log.warning("CLAHE tiles %s larger than %dx%d image; using (1, 1)", params.tiles, w, h)
        rows, cols = 1, 1
    y_edges, x_edges = _tile_edges(h, rows), _tile_edges(w, cols)
    maps = np.empty((rows, cols, 256), dtype=np.float64)
    for r in range(rows):
        for c in range(cols):
            tile = gray[y_edges[r] : y_edges[r + 1], x_edges[c] : x_edges[c + 1]]
            hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
            n = tile.size
            if math.isfinite(params.clip_limit):
                limit = params.clip_limit * n / 256
                excess = np.maximum(hist - limit, 0).sum()
                hist = np.minimum(hist, limit) + excess / 256
            maps[r, c] = 255.0 * np.cumsum(hist) / n
    return maps, y_edges, x_edges


def _interp_weights(n: int, edges: np.ndarray):
    """Lower tile index and weight of the upper neighbour for each pixel coordinate."""
    centers = (edges[:-1] + edges[1:]) / 2 - 0.5
    pos = np.arange(n, dtype=np.float64)
    if len(centers) == 1:
        return np.zeros(n, int), np.zeros(n, int), np.zeros(n)
    lo = np.clip(np.searchsorted(centers, pos, side="right") - 1, 0, len(centers) - 2)
    frac = np.clip((pos - centers[lo]) / (centers[lo + 1] - centers[lo]), 0.0, 1.0)
    return lo, lo + 1, frac


def equalize_channel(gray: np.ndarray, params: ClaheParams) -> np.ndarray:
    maps, y_edges, x_edges = tile_mappings(gray, params)
    y0, y1, fy = _interp_weights(gray.shape[0], y_edges)
    x0, x1, fx = _interp_weights(gray.shape[1], x_edges)
    v = gray.astype(np.intp)
    Y0, Y1 = y0[:, None], y1[:, None]
    X0, X1 = x0[None, :], x1[None, :]
    FY, FX = fy[:, None], fx[None, :]
    out = (
        (1 - FY) * (1 - FX) * maps[Y0, X0, v]
        + (1 - FY) * FX * maps[Y0, X1, v]
        + FY * (1 - FX) * maps[Y1, X0, v]
        + FY * FX * maps[Y1, X1, v]
    )
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def clahe(image: np.ndarray, params: ClaheParams | None = None) -> np.ndarray:
    """Apply CLAHE to an 8-bit grayscale or RGB image.

    ``grayscale`` mode returns a single-channel image of the equalized luma;
    ``luminance`` mode equalizes luma and keeps the chroma of an RGB input.
    """
    params = params or ClaheParams()
    if image.size == 0:
        raise ValueError("empty image")
    if image.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got {image.dtype}")
    if image.ndim == 2:
        return equalize_channel(image, params)
    if params.mode == "grayscale":
        return equalize_channel(rgb_to_luma(image), params)
    ycc = cv2.cvtColor(image, cv2.COLOR_RGB2YCrCb)
    ycc[..., 0] = equalize_channel(ycc[..., 0], params)
    return cv2.cvtColor(ycc, cv2.COLOR_YCrCb2RGB)


def as_rgb(image: np.ndarray) -> np.ndarray:
    return np.repeat(image[..., None], 3, axis=2) if image.ndim == 2 else image
