from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np

from .records import DatasetError, DatasetManifest
from .taxonomy import CLASSES

log = logging.getLogger(__name__)


def stratified_split(manifest: DatasetManifest, val_fraction: float = 0.2, seed: int = 0) -> DatasetManifest:
    """Assign train/val per modal class so each class keeps ~val_fraction of its images.

    Each stratum sends round(n * val_fraction) images to val; strata with fewer
    than two images go entirely to train.
    """
    if not 0 < val_fraction < 1:
        raise DatasetError(f"val_fraction must be in (0, 1), got {val_fraction}")
    assigned = [r.id for r in manifest.records if r.split != "unassigned"]
    if assigned:
        raise DatasetError(f"records already assigned a split: {assigned[:5]}")

    strata: dict[int, list[str]] = defaultdict(list)
    for rec in manifest.records:
        strata[rec.modal_class()].append(rec.id)

    rng = np.random.default_rng(seed)
    val_ids: set[str] = set()
    for class_id in sorted(strata):
        ids = sorted(strata[class_id])
        if len(ids) < 2:
            name = "no boxes" if class_id == 0 else manifest.classes.name(class_id)
            log.warning("class %s has %d image(s); all go to train", name, len(ids))
            continue
        n_val = math.floor(len(ids) * val_fraction + 0.5)
        order = rng.permutation(len(ids))
        val_ids.update(ids[i] for i in order[:n_val])

    records = tuple(replace(r, split="val" if r.id in val_ids else "train") for r in manifest.records)
    return replace(manifest, records=records, seed=seed)


@dataclass
class ClassStats:
    """Per-class image/annotation counts by split, with a total row."""

    rows: dict[str, dict[str, int]] = field(default_factory=dict)

    COLUMNS = ("train_images", "train_annotations", "val_images", "val_annotations")

    @property
    def totals(self) -> dict[str, int]:
        return {col: sum(row[col] for row in self.rows.values()) for col in self.COLUMNS}

    def format_table(self) -> str:
        head = f"{'Class':<16}{'Train img':>10}{'Train ann':>10}{'Val img':>10}{'Val ann':>10}"
        lines = [head, "-" * len(head)]
        for name, row in list(self.rows.items()) + [("Total", self.totals)]:
            lines.append(f"{name:<16}" + "".join(f"{row[c]:>10d}" for c in self.COLUMNS))
        return "\n".join(lines)


def class_stats(manifest: DatasetManifest) -> ClassStats:
    rows = {c.name: dict.fromkeys(ClassStats.COLUMNS, 0) for c in manifest.classes}
    for rec in manifest.records:
        if rec.split not in ("train", "val"):
            continue
        counts = np.bincount([b.class_id for b in rec.boxes], minlength=len(CLASSES) + 1)
        for c in manifest.classes:
            if counts[c.id]:
                rows[c.name][f"{rec.split}_images"] += 1
                rows[c.name][f"{rec.split}_annotations"] += int(counts[c.id])
    return ClassStats(rows)
