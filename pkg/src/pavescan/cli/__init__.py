"""Command-line entry point and the report/overlay renderers it uses."""

from .config import ConfigError, EvalParams, ExperimentConfig, dump_config, load_config
from .main import main, run_cli
from .render import DEFAULT_COLORS, OverlayStyle, colorize_mask, render_overlay
from .report import emit_report, load_report

__all__ = [
    "ConfigError",
    "DEFAULT_COLORS",
    "EvalParams",
    "ExperimentConfig",
    "OverlayStyle",
    "colorize_mask",
    "dump_config",
    "emit_report",
    "load_config",
    "load_report",
    "main",
    "render_overlay",
    "run_cli",
]
