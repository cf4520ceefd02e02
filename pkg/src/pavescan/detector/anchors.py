from __future__ import annotations

import numpy as np

from .config import AnchorSet


def shape_iou(wh: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """IoU of (N, 2) box shapes against (K, 2) anchor shapes, all centered at the origin."""
    wh = np.asarray(wh, dtype=np.float64).reshape(-1, 2)
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 2)
    inter = np.minimum(wh[:, None, 0], anchors[None, :, 0]) * np.minimum(wh[:, None, 1], anchors[None, :, 1])
    union = (wh[:, 0] * wh[:, 1])[:, None] + (anchors[:, 0] * anchors[:, 1])[None, :] - inter
    return inter / union


def mean_anchor_distance(wh, anchors) -> float:
    """Mean of 1 - IoU between each box shape and its nearest anchor."""
    return float(np.mean(1 - shape_iou(wh, anchors).max(axis=1)))


def _lloyd(wh: np.ndarray, centroids: np.ndarray, iterations: int) -> np.ndarray:
    assign = None
    for _ in range(iterations):
        new_assign = np.argmax(shape_iou(wh, centroids), axis=1)
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
        for k in range(len(centroids)):
            members = wh[assign == k]
            if len(members):
                centroids[k] = members.mean(axis=0)
    return centroids


def kmeans_anchors(
    boxes,
    k: int,
    iterations: int = 300,
    seed: int = 0,
    strides=(8, 16, 32),
    restarts: int = 5,
) -> AnchorSet:
    """Cluster box shapes (w, h in pixels) with the 1 - IoU distance.

    Centroids are member means; the best of ``restarts`` seeded runs is kept.
    Anchors come back sorted by area and split across the first ``min(k, len(strides))``
    strides, smallest anchors on the finest stride.
    """
    wh = np.asarray(boxes, dtype=np.float64).reshape(-1, 2)
    if len(wh) == 0:
        raise ValueError("no boxes to cluster")
    if np.any(wh <= 0):
        raise ValueError("box shapes must be positive")
    distinct = np.unique(wh, axis=0)
    if k > len(distinct):
        raise ValueError(f"k={k} exceeds the {len(distinct)} distinct box shapes")
    rng = np.random.default_rng(seed)
    best, best_cost = None, np.inf
    for _ in range(max(restarts, 1)):
        init = distinct[rng.choice(len(distinct), size=k, replace=False)].copy()
        centroids = _lloyd(wh, init, iterations)
        cost = mean_anchor_distance(wh, centroids)
        if cost < best_cost:
            best, best_cost = centroids, cost
    strides = tuple(strides)[: min(k, len(strides))]
    return AnchorSet.from_flat([tuple(a) for a in best], strides)
