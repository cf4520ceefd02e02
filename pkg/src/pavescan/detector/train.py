from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from ..dataset.records import DatasetManifest, ImageRecord, load_sample
from ..metrics.detection import DetectionEvalReport, detection_report
from ..preprocess.augment import AugmentationSpec, apply_augmentation, image_stream
from ..preprocess.resize import prepare_image, resize_mask
from ..runtime import TrainingError, cosine_lr, parallel_map, seed_everything
from .anchors import kmeans_anchors
from .boxes import diou_nms
from .checkpoint import save_checkpoint
from .config import DetectorConfig
from .loss import collate_targets, detection_loss
from .model import build_compact_backbone
from .targets import assign_targets, decode_predictions

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "loss", "box", "obj", "cls", "lr", "val_mAP")
EVAL_MAX_CANDIDATES = 500


@dataclass
class Prepared:
    """One record resized to the network input, ready for augmentation."""

    id: str
    image: np.ndarray  # (S, S, 3) uint8
    boxes: list
    mask: np.ndarray | None


@dataclass
class TrainResult:
    log_path: Path
    best_checkpoint: Path
    last_checkpoint: Path
    best_map: float
    history: list[dict]


def prepare_records(manifest: DatasetManifest, records: list[ImageRecord], config: DetectorConfig) -> list[Prepared]:
    size = (config.input_size, config.input_size)

    def one(rec):
        sample = load_sample(manifest, rec)
        mask = None if sample.mask is None else resize_mask(sample.mask, size)
        return Prepared(rec.id, prepare_image(sample.image, size, config.preprocess), list(sample.boxes), mask)

    return parallel_map(one, records)


def anchors_for(prepared: list[Prepared], config: DetectorConfig) -> DetectorConfig:
    """Fill in k-means anchors from the training boxes when the config has none."""
    if config.anchors is not None:
        return config
    s = config.input_size
    wh = [(b.w * s, b.h * s) for p in prepared for b in p.boxes]
    if not wh:
        raise TrainingError("training split has no boxes to fit anchors to")
    k = min(config.anchors_per_scale * len(config.strides), len({tuple(x) for x in wh}))
    if k < len(config.strides):
        raise TrainingError(f"need at least {len(config.strides)} distinct box shapes for anchors, found {k}")
    anchors = kmeans_anchors(wh, k, seed=config.seed, strides=config.strides)
    return replace(config, anchors=anchors)


def _augmented(item, spec: AugmentationSpec, seed: int, iteration: int):
    index, p = item
    if spec == AugmentationSpec.identity():
        return p.image, p.boxes
    image, boxes, _ = apply_augmentation(p.image, p.boxes, p.mask, spec, image_stream(seed, iteration, index))
    if p.boxes and not boxes:
        return p.image, p.boxes  # every box left the frame; fall back to the clean sample
    return image, boxes


def to_tensor(images) -> torch.Tensor:
    arr = np.stack(images).astype(np.float32) / 255.0
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


class BatchSampler:
    """Walks seeded permutations of the training set, one epoch after another."""

    def __init__(self, n: int, batch: int, seed: int):
        self.n, self.batch, self.seed = n, batch, seed
        self.epoch, self.order, self.pos = 0, None, n

    def next(self) -> list[int]:
        out = []
        while len(out) < self.batch:
            if self.pos >= self.n:
                self.order = np.random.default_rng([self.seed, 7919, self.epoch]).permutation(self.n)
                self.epoch += 1
                self.pos = 0
            out.append(int(self.order[self.pos]))
            self.pos += 1
        return out


@torch.no_grad()
def predict_prepared(model, images: list[np.ndarray], config: DetectorConfig, conf_threshold: float,
                     nms_threshold: float, max_candidates: int | None = None, batch: int = 8):
    """Detections in network-input pixels for already prepared images."""
    model.eval()
    out = []
    for start in range(0, len(images), batch):
        raw = model(to_tensor(images[start : start + batch]))
        for i in range(raw[0].shape[0]):
            per_scale = [r[i].numpy() for r in raw]
            dets = decode_predictions(per_scale, config.anchors, conf_threshold, max_candidates)
            out.append(diou_nms(dets, nms_threshold))
    return out


def evaluate_prepared(model, prepared: list[Prepared], config: DetectorConfig, iou_threshold: float = 0.5,
                      report_conf: float | None = None, ap_method: str = "all_point") -> DetectionEvalReport:
    dets = predict_prepared(model, [p.image for p in prepared], config, config.eval_conf,
                            config.nms_threshold, EVAL_MAX_CANDIDATES)
    size = (config.input_size, config.input_size)
    return detection_report(
        dets,
        [p.boxes for p in prepared],
        iou_threshold=iou_threshold,
        report_conf=config.conf_threshold if report_conf is None else report_conf,
        ap_method=ap_method,
        image_sizes=[size] * len(prepared),
    )


def _make_optimizer(model, config: DetectorConfig):
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        (no_decay if p.ndim <= 1 else decay).append(p)
    groups = [{"params": decay, "weight_decay": config.weight_decay}, {"params": no_decay, "weight_decay": 0.0}]
    if config.optimizer == "sgd":
        return torch.optim.SGD(groups, lr=config.lr_max, momentum=0.9, nesterov=True)
    return torch.optim.Adam(groups, lr=config.lr_max)


def train_detector(manifest: DatasetManifest, config: DetectorConfig, out, progress=None) -> TrainResult:
    """Train on the manifest's train split, evaluating mAP@0.5 on its val split.

    Writes ``train_log.csv`` plus ``best/`` and ``last/`` checkpoints under ``out``.
    """
    out = Path(out)
    train_recs, val_recs = manifest.split("train"), manifest.split("val")
    if not train_recs:
        raise TrainingError("empty train split")
    seed_everything(config.seed)
    train = prepare_records(manifest, train_recs, config)
    val = prepare_records(manifest, val_recs, config)
    config = anchors_for(train, config)
    model = build_compact_backbone(config)
    optimizer = _make_optimizer(model, config)
    sampler = BatchSampler(len(train), config.batch, config.seed)
    micro = config.batch // config.subdivisions
    total = config.max_iterations

    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.csv"
    history, best_map = [], -1.0
    best_dir, last_dir = out / "best", out / "last"
    with log_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for it in range(total):
            lr = cosine_lr(it, total, config.lr_max, config.lr_min)
            for group in optimizer.param_groups:
                group["lr"] = lr
            model.train()
            optimizer.zero_grad(set_to_none=True)
            indices = sampler.next()
            sums = np.zeros(4)
            for start in range(0, config.batch, micro):
                chunk = indices[start : start + micro]
                items = parallel_map(lambda i: _augmented((i, train[i]), config.augmentation, config.seed, it), chunk)
                x = to_tensor([img for img, _ in items])
                targets = collate_targets([assign_targets(b, config.anchors, config) for _, b in items])
                terms = detection_loss(model(x), targets, config.anchors, config)
                values = [float(t.detach()) for t in terms]
                if not all(math.isfinite(v) for v in values):
                    ids = [train[i].id for i in chunk]
                    raise TrainingError(f"non-finite loss at iteration {it} on batch {ids}: "
                                        + ", ".join(f"{v:.4g}" for v in values))
                (terms[0] / config.subdivisions).backward()
                sums += [v / config.subdivisions for v in values]
            optimizer.step()

            row = {"iteration": it, "loss": float(sums[0]), "box": float(sums[1]), "obj": float(sums[2]), "cls": float(sums[3]),
                   "lr": float(lr), "val_mAP": None}
            last = it == total - 1
            if val and ((it + 1) % config.eval_interval == 0 or last):
                row["val_mAP"] = evaluate_prepared(model, val, config).mAP
                if row["val_mAP"] > best_map:
                    best_map = row["val_mAP"]
                    save_checkpoint(model, config, best_dir, manifest.classes, {"iteration": it, "val_mAP": best_map})
            writer.writerow([_fmt(row[c]) for c in LOG_COLUMNS])
            history.append(row)
            if progress is not None:
                progress(row)
    save_checkpoint(model, config, last_dir, manifest.classes, {"iteration": total - 1})
    if best_map < 0:
        # no validation split: the final weights are the best we have
        save_checkpoint(model, config, best_dir, manifest.classes, {"iteration": total - 1})
        best_map = float("nan")
    return TrainResult(log_path, best_dir, last_dir, best_map, history)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))
