from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from ..dataset.taxonomy import NUM_MASK_CLASSES
from ..preprocess.augment import AugmentationSpec
from ..preprocess.resize import PreprocessConfig


@dataclass(frozen=True)
class AsppConfig:
    rates: tuple[int, ...] = (6, 12, 18)
    branch_channels: int = 64
    include_image_pooling: bool = True

    def __post_init__(self):
        if any(int(r) != r or r < 1 for r in self.rates):
            raise ValueError(f"atrous rates must be integers >= 1, got {self.rates}")
        if len(set(self.rates)) != len(self.rates):
            raise ValueError(f"atrous rates must be distinct, got {self.rates}")
        if self.branch_channels < 1:
            raise ValueError("branch_channels must be >= 1")


@dataclass(frozen=True)
class SegmenterConfig:
    input_size: tuple[int, int] = (384, 256)  # width, height fed to the network
    output_stride: int = 16
    width: int = 16
    num_classes: int = NUM_MASK_CLASSES
    aspp: AsppConfig = field(default_factory=AsppConfig)
    class_weights: tuple[float, ...] | None = None  # None: inverse pixel frequency of the train split
    class_weight_power: float = 1.0
    lr: float = 5e-4
    batch: int = 4
    max_epochs: int = 40
    patience: int = 10
    min_delta: float = 1e-4
    crop: tuple[int, int] | None = None  # random training crop (width, height) inside the resized image
    seed: int = 0
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    augmentation: AugmentationSpec = field(default_factory=lambda: AugmentationSpec(rotate_limit=10.0))

    def __post_init__(self):
        if self.output_stride not in (8, 16):
            raise ValueError(f"output_stride must be 8 or 16, got {self.output_stride}")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if any(s % self.output_stride for s in self.input_size):
            raise ValueError(f"input_size {self.input_size} not divisible by output_stride {self.output_stride}")
        if self.class_weights is not None:
            if len(self.class_weights) != self.num_classes:
                raise ValueError(f"need {self.num_classes} class weights, got {len(self.class_weights)}")
            if any(w <= 0 for w in self.class_weights):
                raise ValueError("class weights must be positive")
        if self.crop is not None and any(c > s or c % self.output_stride for c, s in zip(self.crop, self.input_size)):
            raise ValueError(f"crop {self.crop} must fit input_size and be divisible by the output stride")
        if self.patience < 1 or self.max_epochs < 1:
            raise ValueError("patience and max_epochs must be >= 1")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["input_size"] = list(self.input_size)
        d["aspp"] = {**asdict(self.aspp), "rates": list(self.aspp.rates)}
        d["class_weights"] = None if self.class_weights is None else list(self.class_weights)
        d["crop"] = None if self.crop is None else list(self.crop)
        d["preprocess"] = self.preprocess.to_dict()
        d["augmentation"] = asdict(self.augmentation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SegmenterConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown segmenter config keys: {sorted(unknown)}")
        for key in ("input_size", "crop"):
            if d.get(key) is not None:
                d[key] = tuple(int(v) for v in d[key])
        if d.get("class_weights") is not None:
            d["class_weights"] = tuple(float(v) for v in d["class_weights"])
        if "aspp" in d:
            a = dict(d["aspp"])
            if "rates" in a:
                a["rates"] = tuple(int(r) for r in a["rates"])
            d["aspp"] = AsppConfig(**a)
        if "preprocess" in d:
            d["preprocess"] = PreprocessConfig.from_dict(d["preprocess"])
        if "augmentation" in d:
            d["augmentation"] = AugmentationSpec(**d["augmentation"])
        return cls(**d)
