from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..preprocess.resize import prepare_image
from .train import load_checkpoint, to_tensors


@lru_cache(maxsize=4)
def _cached(path: str):
    return load_checkpoint(path)


@torch.no_grad()
def predict_mask(image: np.ndarray, checkpoint) -> tuple[np.ndarray, np.ndarray]:
    """Label mask (H, W) and per-pixel class distribution (H, W, C) at the image's own size.

    Probabilities are softmaxed at network resolution and resized bilinearly,
    which keeps every pixel a convex combination of distributions. Argmax ties
    go to the lower class id.
    """
    model, config, _ = _cached(str(Path(checkpoint).resolve())) if isinstance(checkpoint, (str, Path)) else checkpoint
    model.eval()
    h, w = image.shape[:2]
    x = to_tensors([prepare_image(image, tuple(config.input_size), config.preprocess)])
    probs = torch.softmax(model(x).double(), dim=1)
    if probs.shape[-2:] != (h, w):
        probs = F.interpolate(probs, size=(h, w), mode="bilinear", align_corners=False)
    probs = probs[0].permute(1, 2, 0).numpy()
    return probs.argmax(axis=-1).astype(np.uint8), probs
