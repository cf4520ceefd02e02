"""Process-level helpers shared by the training loops and the CLI."""

from __future__ import annotations

import os
import random
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import torch

WORKERS_ENV = "PAVESCAN_NUM_WORKERS"


class TrainingError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    """A checkpoint directory is incomplete or inconsistent with its config."""


def num_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(n, 1)


def parallel_map(fn, items) -> list:
    """Ordered map; fans out to threads when more than one worker is configured.

    Each item must carry its own random stream so the result does not depend
    on the worker count.
    """
    items = list(items)
    n = num_workers()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def cosine_lr(t: float, total: float, lr_max: float, lr_min: float) -> float:
    """lr_min + (lr_max - lr_min) * (1 + cos(pi * t / total)) / 2, with t clipped to [0, total]."""
    if total <= 0:
        return lr_max
    t = min(max(t, 0.0), total)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + float(np.cos(np.pi * t / total)))
