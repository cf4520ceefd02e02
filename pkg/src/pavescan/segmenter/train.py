from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from ..dataset.records import DatasetManifest, load_sample
from ..dataset.taxonomy import CLASSES, ClassTable
from ..metrics.segmentation import SegEvalReport, seg_confusion, seg_report
from ..preprocess.augment import AugmentationSpec, apply_augmentation, image_stream
from ..preprocess.resize import prepare_image, resize_mask
from ..runtime import CheckpointError, TrainingError, parallel_map, seed_everything
from .config import SegmenterConfig
from .loss import class_weights_from_frequency, weighted_cross_entropy_logits
from .model import DeepLabLite, build_segmenter

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "train_loss", "val_loss", "lr")
WEIGHTS, CONFIG, CLASS_TABLE = "weights.pt", "config.json", "classes.json"


def early_stop_epoch(val_losses, patience: int, min_delta: float = 1e-4) -> tuple[int | None, int]:
    """Replay the plateau rule over a val-loss sequence.

    Returns (epoch after which training stops or None, best epoch), both
    1-based. A loss counts as an improvement only when it beats the best so far
    by more than ``min_delta``.
    """
    best, best_epoch, bad = math.inf, 0, 0
    for epoch, loss in enumerate(val_losses, start=1):
        if loss < best - min_delta:
            best, best_epoch, bad = loss, epoch, 0
        else:
            bad += 1
            if bad >= patience:
                return epoch, best_epoch
    return None, best_epoch


class EarlyStopping:
    """Incremental form of ``early_stop_epoch`` for use inside a training loop."""

    def __init__(self, patience: int, min_delta: float = 1e-4):
        self.patience, self.min_delta = patience, min_delta
        self.history: list[float] = []

    def update(self, val_loss: float) -> bool:
        """Record one epoch; True when training should stop now."""
        self.history.append(val_loss)
        stop, _ = early_stop_epoch(self.history, self.patience, self.min_delta)
        return stop is not None

    @property
    def best_epoch(self) -> int:
        return early_stop_epoch(self.history, self.patience, self.min_delta)[1]

    @property
    def improved(self) -> bool:
        return bool(self.history) and self.best_epoch == len(self.history)


@dataclass
class PreparedMask:
    id: str
    image: np.ndarray
    mask: np.ndarray


@dataclass
class SegTrainResult:
    log_path: Path
    best_checkpoint: Path
    last_checkpoint: Path
    best_epoch: int
    stopped_early: bool
    history: list[dict]
    class_weights: list[float]


def prepare_masked(manifest: DatasetManifest, records, config: SegmenterConfig) -> list[PreparedMask]:
    size = tuple(config.input_size)

    def one(rec):
        if rec.mask_path is None:
            raise TrainingError(f"record {rec.id} has no mask")
        sample = load_sample(manifest, rec)
        return PreparedMask(rec.id, prepare_image(sample.image, size, config.preprocess), resize_mask(sample.mask, size))

    return parallel_map(one, records)


def _augmented(item, config: SegmenterConfig, epoch: int):
    index, p = item
    spec = config.augmentation
    if spec == AugmentationSpec.identity() and config.crop is None:
        return p.image, p.mask
    rng = image_stream(config.seed, epoch, index)
    image, _, mask = apply_augmentation(p.image, None, p.mask, spec, rng)
    if config.crop is not None:
        cw, ch = config.crop
        x0 = int(rng.integers(0, image.shape[1] - cw + 1))
        y0 = int(rng.integers(0, image.shape[0] - ch + 1))
        image, mask = image[y0 : y0 + ch, x0 : x0 + cw], mask[y0 : y0 + ch, x0 : x0 + cw]
    return image, mask


def to_tensors(images, masks=None):
    x = torch.from_numpy(np.stack(images).astype(np.float32) / 255.0).permute(0, 3, 1, 2).contiguous()
    if masks is None:
        return x
    return x, torch.from_numpy(np.stack(masks).astype(np.int64))


@torch.no_grad()
def _mean_loss(model, prepared, weights, batch) -> float:
    model.eval()
    total, weight_sum = 0.0, 0.0
    w = torch.as_tensor(weights, dtype=torch.float32)
    for start in range(0, len(prepared), batch):
        chunk = prepared[start : start + batch]
        x, y = to_tensors([p.image for p in chunk], [p.mask for p in chunk])
        loss = weighted_cross_entropy_logits(model(x), y, w)
        wsum = float(w[y].sum())
        total += float(loss) * wsum
        weight_sum += wsum
    return total / weight_sum


@torch.no_grad()
def predict_prepared(model, images, batch: int = 4) -> list[np.ndarray]:
    """Label masks at network-input resolution; ties go to the lower class id."""
    model.eval()
    out = []
    for start in range(0, len(images), batch):
        logits = model(to_tensors(images[start : start + batch])).double()
        out.extend(torch.softmax(logits, dim=1).argmax(dim=1).numpy().astype(np.uint8))
    return out


def evaluate_prepared(model, prepared, n_classes: int) -> SegEvalReport:
    preds = predict_prepared(model, [p.image for p in prepared])
    confusion = sum(seg_confusion(pr, p.mask, n_classes) for pr, p in zip(preds, prepared))
    return seg_report(confusion)


def save_checkpoint(model: DeepLabLite, config: SegmenterConfig, out, classes: ClassTable = CLASSES, extra=None) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out / WEIGHTS)
    (out / CONFIG).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / CLASS_TABLE).write_text(json.dumps(classes.to_list(), indent=2) + "\n", encoding="utf-8")
    if extra is not None:
        (out / "meta.json").write_text(json.dumps(extra, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_checkpoint(path) -> tuple[DeepLabLite, SegmenterConfig, ClassTable]:
    path = Path(path)
    for name in (WEIGHTS, CONFIG, CLASS_TABLE):
        if not (path / name).is_file():
            raise CheckpointError(f"{path}: missing {name}")
    config = SegmenterConfig.from_dict(json.loads((path / CONFIG).read_text(encoding="utf-8")))
    classes = ClassTable.from_list(json.loads((path / CLASS_TABLE).read_text(encoding="utf-8")))
    if classes.n_mask_classes != config.num_classes:
        raise CheckpointError(f"{path}: class table implies {classes.n_mask_classes} mask classes, config has {config.num_classes}")
    model = build_segmenter(config)
    try:
        model.load_state_dict(torch.load(path / WEIGHTS, map_location="cpu", weights_only=True))
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: weights do not match config: {exc}") from exc
    model.eval()
    return model, config, classes


def train_segmenter(manifest: DatasetManifest, config: SegmenterConfig, out, progress=None) -> SegTrainResult:
    """Adam training with weighted cross-entropy and plateau early stopping on val loss.

    Writes ``train_log.csv`` and ``best/`` (lowest val loss) and ``last/`` checkpoints.
    """
    out = Path(out)
    train_recs, val_recs = manifest.split("train"), manifest.split("val")
    if not train_recs:
        raise TrainingError("empty train split")
    seed_everything(config.seed)
    if config.class_weights is None:
        weights = class_weights_from_frequency(manifest, config.class_weight_power, config.num_classes)
        config = replace(config, class_weights=tuple(float(w) for w in weights))
    weights = torch.tensor(config.class_weights, dtype=torch.float32)
    train = prepare_masked(manifest, train_recs, config)
    val = prepare_masked(manifest, val_recs, config)
    model = build_segmenter(config)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    stopper = EarlyStopping(config.patience, config.min_delta)

    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.csv"
    best_dir, last_dir = out / "best", out / "last"
    history, stopped = [], False
    with log_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for epoch in range(config.max_epochs):
            model.train()
            order = np.random.default_rng([config.seed, 104729, epoch]).permutation(len(train))
            running, seen = 0.0, 0
            for start in range(0, len(order), config.batch):
                chunk = [int(i) for i in order[start : start + config.batch]]
                items = parallel_map(lambda i: _augmented((i, train[i]), config, epoch), chunk)
                x, y = to_tensors([im for im, _ in items], [m for _, m in items])
                loss = weighted_cross_entropy_logits(model(x), y, weights)
                value = float(loss.detach())
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss in epoch {epoch + 1} on batch {[train[i].id for i in chunk]}")
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                running += value * len(chunk)
                seen += len(chunk)
            row = {"epoch": epoch + 1, "train_loss": running / seen, "val_loss": None, "lr": config.lr}
            if val:
                row["val_loss"] = _mean_loss(model, val, config.class_weights, config.batch)
            writer.writerow([row["epoch"]] + [_fmt(row[c]) for c in LOG_COLUMNS[1:]])
            fh.flush()
            history.append(row)
            if progress is not None:
                progress(row)
            monitored = row["val_loss"] if val else row["train_loss"]
            stop = stopper.update(monitored)
            if stopper.improved:
                save_checkpoint(model, config, best_dir, manifest.classes, {"epoch": epoch + 1, "val_loss": monitored})
            if stop:
                stopped = True
                log.info("early stop after epoch %d (best epoch %d)", epoch + 1, stopper.best_epoch)
                break
    save_checkpoint(model, config, last_dir, manifest.classes, {"epoch": len(history)})
    return SegTrainResult(log_path, best_dir, last_dir, stopper.best_epoch, stopped, history,
                          [float(w) for w in config.class_weights])


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))
