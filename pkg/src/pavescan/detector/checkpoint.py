from __future__ import annotations

import json
from pathlib import Path

import torch

from ..dataset.taxonomy import CLASSES, ClassTable
from ..runtime import CheckpointError
from .config import DetectorConfig
from .model import CompactDetector, build_compact_backbone

WEIGHTS = "weights.pt"
CONFIG = "config.json"
CLASS_TABLE = "classes.json"


def save_checkpoint(model: CompactDetector, config: DetectorConfig, out, classes: ClassTable = CLASSES, extra=None) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out / WEIGHTS)
    (out / CONFIG).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / CLASS_TABLE).write_text(json.dumps(classes.to_list(), indent=2) + "\n", encoding="utf-8")
    if extra is not None:
        (out / "meta.json").write_text(json.dumps(extra, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_checkpoint(path) -> tuple[CompactDetector, DetectorConfig, ClassTable]:
    """Rebuild the model from a checkpoint directory, in eval mode."""
    path = Path(path)
    for name in (WEIGHTS, CONFIG, CLASS_TABLE):
        if not (path / name).is_file():
            raise CheckpointError(f"{path}: missing {name}")
    config = DetectorConfig.from_dict(json.loads((path / CONFIG).read_text(encoding="utf-8")))
    classes = ClassTable.from_list(json.loads((path / CLASS_TABLE).read_text(encoding="utf-8")))
    if len(classes.ids) != config.num_classes:
        raise CheckpointError(f"{path}: class table has {len(classes.ids)} classes, config expects {config.num_classes}")
    if config.anchors is None:
        raise CheckpointError(f"{path}: config carries no anchors")
    model = build_compact_backbone(config)
    state = torch.load(path / WEIGHTS, map_location="cpu", weights_only=True)
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: weights do not match config: {exc}") from exc
    model.eval()
    return model, config, classes
