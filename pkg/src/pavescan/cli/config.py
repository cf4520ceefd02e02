"""Experiment configuration: flat ``key = value`` text with dotted section keys.

    root = data/synthetic
    task = detect
    seed = 1
    preprocess.mode = clahe
    detect.max_iterations = 500
    segment.aspp.rates = 2, 4, 6
    eval.report_conf = 0.25
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from ..detector.config import DetectorConfig
from ..metrics.detection import AP_METHODS
from ..preprocess.resize import PreprocessConfig
from ..segmenter.config import SegmenterConfig

TASKS = ("detect", "segment")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalParams:
    iou_threshold: float = 0.5
    report_conf: float = 0.25
    ap_method: str = "all_point"
    split: str = "val"

    def __post_init__(self):
        if self.ap_method not in AP_METHODS:
            raise ConfigError(f"eval.ap_method must be one of {AP_METHODS}, got {self.ap_method!r}")
        if not 0 < self.iou_threshold <= 1:
            raise ConfigError("eval.iou_threshold must be in (0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    root: str | None = None
    out: str | None = None
    task: str = "detect"
    seed: int = 0
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    detect: DetectorConfig = field(default_factory=DetectorConfig)
    segment: SegmenterConfig = field(default_factory=SegmenterConfig)
    eval: EvalParams = field(default_factory=EvalParams)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")

    def model_config(self, task: str | None = None):
        """The model config for ``task`` with the shared seed and preprocessing folded in."""
        task = task or self.task
        base = self.detect if task == "detect" else self.segment
        return replace(base, seed=self.seed, preprocess=self.preprocess)

    def check_paths(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"{name} is not set")
            if name == "root" and not Path(value).is_dir():
                raise ConfigError(f"root directory {value} does not exist")


# Keys whose dataclass value is not itself flattened (they are folded in from elsewhere).
_SKIP = {"detect.seed", "detect.preprocess", "segment.seed", "segment.preprocess", "detect.anchors"}


def _leaf_type(hint):
    """Strip Optional[...] from a resolved type hint."""
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        return args[0] if len(args) == 1 else hint
    return hint


def _hints(cls):
    import sys

    module = sys.modules[cls.__module__]
    return typing.get_type_hints(cls, vars(module))


def flatten(obj, prefix: str = "") -> dict[str, object]:
    """Dataclass tree -> {dotted key: leaf value}."""
    out = {}
    for f in fields(obj):
        key = prefix + f.name
        if key in _SKIP:
            continue
        value = getattr(obj, f.name)
        if key == "preprocess":
            for k, v in value.to_dict().items():
                out[f"preprocess.{k}"] = v
            continue
        if is_dataclass(value) and not isinstance(value, type):
            out.update(flatten(value, key + "."))
        else:
            out[key] = value
    return out


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(config: ExperimentConfig) -> str:
    lines = [f"{k} = {format_value(v)}" for k, v in flatten(config).items()]
    return "\n".join(lines) + "\n"


def _parse_scalar(text: str, kind):
    t = text.strip()
    if kind is bool:
        if t.lower() in ("true", "yes", "1", "on"):
            return True
        if t.lower() in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind is int:
        return int(t)
    if kind is float:
        return float(t)
    return t


def parse_value(text: str, hint):
    """Parse ``text`` against a field type hint (scalars, tuples, optional values)."""
    t = text.strip()
    optional = typing.get_origin(hint) in (typing.Union, types.UnionType) and type(None) in typing.get_args(hint)
    if optional and t.lower() in ("none", "null", ""):
        return None
    hint = _leaf_type(hint)
    origin = typing.get_origin(hint)
    if origin in (tuple, list):
        args = typing.get_args(hint)
        kind = args[0] if args else str
        parts = [p for p in t.replace("x", ",").split(",")] if kind in (int, float) else t.split(",")
        parts = [p.strip() for p in parts if p.strip()]
        return tuple(_parse_scalar(p, kind) for p in parts)
    if hint in (bool, int, float, str):
        return _parse_scalar(t, hint)
    return t


def _field_hint(cls, name):
    hints = _hints(cls)
    if name not in hints:
        raise KeyError(name)
    return hints[name]


def apply_overrides(config: ExperimentConfig, pairs: dict[str, str]) -> ExperimentConfig:
    """Set dotted keys from text values; unknown keys raise ConfigError naming the key."""
    flat_pre = {}
    for key, text in pairs.items():
        parts = key.split(".")
        if parts[0] == "preprocess" and len(parts) == 2:
            if parts[1] not in PreprocessConfig().to_dict():
                raise ConfigError(f"unknown config key: {key}")
            flat_pre[parts[1]] = text
            continue
        if key in _SKIP:
            raise ConfigError(f"config key {key} cannot be set directly")
        try:
            config = _set(config, parts, text)
        except KeyError:
            raise ConfigError(f"unknown config key: {key}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    if flat_pre:
        d = config.preprocess.to_dict()
        for k, text in flat_pre.items():
            hint = {"mode": str, "clahe_clip": float, "clahe_tiles": tuple[int, ...], "clahe_mode": str}[k]
            d[k] = parse_value(text, hint)
        try:
            config = replace(config, preprocess=PreprocessConfig.from_dict(d))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return config


def _set(obj, parts, text):
    name = parts[0]
    if name not in {f.name for f in fields(obj)}:
        raise KeyError(name)
    current = getattr(obj, name)
    if len(parts) == 1:
        if is_dataclass(current) and not isinstance(current, type):
            raise KeyError(name)
        value = parse_value(text, _field_hint(type(obj), name))
    else:
        if not (is_dataclass(current) and not isinstance(current, type)):
            raise KeyError(".".join(parts))
        value = _set(current, parts[1:], text)
    return dataclasses.replace(obj, **{name: value})


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    pairs = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{n}: empty key")
        pairs[key] = value
    return pairs


def load_config(path=None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Defaults, then the config file, then ``overrides`` (flags win)."""
    pairs = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        pairs.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    pairs.update(overrides or {})
    return apply_overrides(ExperimentConfig(), pairs)
