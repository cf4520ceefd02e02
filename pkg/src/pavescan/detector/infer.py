from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import numpy as np

from ..preprocess.resize import prepare_image
from .boxes import Detection
from .checkpoint import load_checkpoint
from .train import predict_prepared


@lru_cache(maxsize=4)
def _cached(path: str):
    return load_checkpoint(path)


def infer_detector(image: np.ndarray, checkpoint, conf_threshold: float = 0.25, nms_threshold: float = 0.45,
                   max_candidates: int | None = None) -> list[Detection]:
    """Detect distresses in one RGB image; boxes come back in the image's own pixels.

    ``checkpoint`` is a checkpoint directory or an already loaded
    (model, config, classes) tuple.
    """
    model, config, _ = _cached(str(Path(checkpoint).resolve())) if isinstance(checkpoint, (str, Path)) else checkpoint
    h, w = image.shape[:2]
    s = config.input_size
    prepared = prepare_image(image, (s, s), config.preprocess)
    dets = predict_prepared(model, [prepared], config, conf_threshold, nms_threshold, max_candidates)[0]
    sx, sy = w / s, h / s
    out = []
    for d in dets:
        x1, y1, x2, y2 = d.box
        box = (min(max(x1 * sx, 0.0), w), min(max(y1 * sy, 0.0), h), min(max(x2 * sx, 0.0), w), min(max(y2 * sy, 0.0), h))
        if box[2] > box[0] and box[3] > box[1]:
            out.append(Detection(d.class_id, d.score, box))
    return out
