from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from ..preprocess.augment import AugmentationSpec
from ..preprocess.resize import PreprocessConfig


@dataclass(frozen=True)
class AnchorSet:
    """Anchor shapes in input pixels, one group per detection scale."""

    anchors: tuple[tuple[tuple[float, float], ...], ...]
    strides: tuple[int, ...]

    def __post_init__(self):
        if len(self.anchors) != len(self.strides):
            raise ValueError("one anchor group per stride is required")
        flat = self.flat()
        if any(len(group) == 0 for group in self.anchors):
            raise ValueError("every scale needs at least one anchor")
        if any(w <= 0 or h <= 0 for w, h in flat):
            raise ValueError("anchor sizes must be positive")
        areas = [w * h for w, h in flat]
        if areas != sorted(areas):
            raise ValueError("anchors must be sorted by area")

    def flat(self) -> list[tuple[float, float]]:
        return [a for group in self.anchors for a in group]

    def locate(self, flat_index: int) -> tuple[int, int]:
        """(scale, anchor-within-scale) for an index into ``flat()``."""
        for s, group in enumerate(self.anchors):
            if flat_index < len(group):
                return s, flat_index
            flat_index -= len(group)
        raise IndexError(flat_index)

    @classmethod
    def from_flat(cls, anchors, strides) -> "AnchorSet":
        ordered = sorted((float(w), float(h)) for w, h in anchors)
        ordered.sort(key=lambda a: a[0] * a[1])
        n = len(strides)
        base, extra = divmod(len(ordered), n)
        groups, start = [], 0
        for s in range(n):
            size = base + (1 if s < extra else 0)
            groups.append(tuple(ordered[start : start + size]))
            start += size
        return cls(tuple(groups), tuple(int(s) for s in strides))

    def to_list(self) -> list:
        return [[list(a) for a in group] for group in self.anchors]


@dataclass(frozen=True)
class DetectorConfig:
    input_size: int = 256
    strides: tuple[int, ...] = (8, 16, 32)
    anchors: AnchorSet | None = None
    anchors_per_scale: int = 3
    num_classes: int = 5
    width: int = 16
    assign_iou: float = 0.3
    ignore_iou: float = 0.0  # > 0 enables the ignore region for objectness
    lambda_box: float = 1.0
    lambda_obj: float = 1.0
    lambda_cls: float = 0.5
    label_smoothing: float = 0.1
    batch: int = 8
    subdivisions: int = 1
    max_iterations: int = 2000
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    weight_decay: float = 5e-4
    optimizer: str = "adam"
    eval_interval: int = 100
    eval_conf: float = 0.005
    conf_threshold: float = 0.25
    nms_threshold: float = 0.45
    head_init: str = "prior"
    seed: int = 0
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    augmentation: AugmentationSpec = field(default_factory=lambda: AugmentationSpec(rotate_limit=10.0))

    def __post_init__(self):
        if self.batch % self.subdivisions:
            raise ValueError(f"batch {self.batch} not divisible by subdivisions {self.subdivisions}")
        if not 0 <= self.label_smoothing < 0.5:
            raise ValueError(f"label_smoothing must be in [0, 0.5), got {self.label_smoothing}")
        if self.input_size % max(self.strides):
            raise ValueError(f"input_size {self.input_size} not divisible by stride {max(self.strides)}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.head_init not in ("prior", "zero"):
            raise ValueError(f"unknown head_init {self.head_init!r}")
        if self.anchors is not None and tuple(self.anchors.strides) != tuple(self.strides):
            raise ValueError("anchor strides differ from config strides")

    @property
    def grid_sizes(self) -> list[int]:
        return [self.input_size // s for s in self.strides]

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["strides"] = list(self.strides)
        d["anchors"] = None if self.anchors is None else self.anchors.to_list()
        d["preprocess"] = self.preprocess.to_dict()
        d["augmentation"] = asdict(self.augmentation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown detector config keys: {sorted(unknown)}")
        if "strides" in d:
            d["strides"] = tuple(int(s) for s in d["strides"])
        strides = d.get("strides", cls.strides)
        if d.get("anchors") is not None:
            d["anchors"] = AnchorSet(tuple(tuple(tuple(a) for a in g) for g in d["anchors"]), tuple(strides))
        if "preprocess" in d:
            d["preprocess"] = PreprocessConfig.from_dict(d["preprocess"])
        if "augmentation" in d:
            d["augmentation"] = AugmentationSpec(**d["augmentation"])
        return cls(**d)

