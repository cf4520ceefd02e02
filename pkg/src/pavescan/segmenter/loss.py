from __future__ import annotations

import logging

import numpy as np
import torch
import torch.nn.functional as F

from ..dataset.records import DatasetManifest, read_mask
from ..dataset.taxonomy import NUM_MASK_CLASSES

log = logging.getLogger(__name__)


def weights_from_counts(counts, power: float = 1.0) -> np.ndarray:
    """Normalized inverse-frequency weights from per-class pixel counts.

    w_c = f_c^-power / mean(f^-power); classes with no pixels get the largest
    weight among present classes.
    """
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("no labelled pixels")
    present = counts > 0
    inv = np.zeros_like(counts)
    inv[present] = (counts[present] / total) ** -power
    if not present.all():
        log.warning("classes %s have no pixels; giving them the largest present weight",
                    np.nonzero(~present)[0].tolist())
        inv[~present] = inv[present].max()
    return inv / inv.mean()


def class_weights_from_frequency(manifest: DatasetManifest, power: float = 1.0,
                                 n_classes: int = NUM_MASK_CLASSES, split: str = "train") -> np.ndarray:
    """Weights from the pixel frequency of each mask class over one split (background included)."""
    counts = np.zeros(n_classes, dtype=np.int64)
    seen = 0
    for rec in manifest.split(split):
        if rec.mask_path is None:
            continue
        mask = read_mask(manifest.resolve(rec.mask_path))
        counts += np.bincount(mask.ravel(), minlength=n_classes)[:n_classes]
        seen += 1
    if seen == 0:
        raise ValueError(f"no masks in the {split} split")
    return weights_from_counts(counts, power)


def _check_labels(labels, n_classes: int):
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= n_classes):
        raise ValueError(f"labels outside 0..{n_classes - 1}")


def weighted_cross_entropy(probs, labels, weights):
    """sum_p w[y_p] * -ln(probs[p, y_p]) / sum_p w[y_p].

    ``probs`` is (..., C) with the class axis last; ``labels`` is the matching
    (...) integer grid. Works on numpy arrays or torch tensors.
    """
    if isinstance(probs, torch.Tensor):
        labels = torch.as_tensor(labels, device=probs.device).long()
        w = torch.as_tensor(weights, dtype=probs.dtype, device=probs.device)
        _check_labels(labels, probs.shape[-1])
        p = torch.gather(probs, -1, labels.unsqueeze(-1)).squeeze(-1)
        wy = w[labels]
        return (wy * -torch.log(p)).sum() / wy.sum()
    probs, labels, w = np.asarray(probs, np.float64), np.asarray(labels), np.asarray(weights, np.float64)
    if probs.shape[:-1] != labels.shape:
        raise ValueError(f"probabilities {probs.shape} do not match labels {labels.shape}")
    _check_labels(torch.from_numpy(labels.astype(np.int64)), probs.shape[-1])
    p = np.take_along_axis(probs, labels[..., None].astype(np.int64), axis=-1)[..., 0]
    wy = w[labels]
    return float((wy * -np.log(p)).sum() / wy.sum())


def weighted_cross_entropy_logits(logits: torch.Tensor, labels: torch.Tensor, weights) -> torch.Tensor:
    """Same loss from (B, C, H, W) logits, via log-softmax for numerical safety."""
    _check_labels(labels, logits.shape[1])
    w = torch.as_tensor(weights, dtype=logits.dtype, device=logits.device)
    return F.cross_entropy(logits, labels.long(), weight=w, reduction="mean")
