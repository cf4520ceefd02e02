from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import DetectorConfig


def mish(x: torch.Tensor) -> torch.Tensor:
    """x * tanh(softplus(x))."""
    return x * torch.tanh(F.softplus(x))


class Mish(nn.Module):
    def forward(self, x):
        return mish(x)


class ConvBlock(nn.Sequential):
    def __init__(self, c_in: int, c_out: int, k: int = 3, stride: int = 1):
        super().__init__(
            nn.Conv2d(c_in, c_out, k, stride=stride, padding=k // 2, bias=False),
            nn.BatchNorm2d(c_out),
            Mish(),
        )


class CompactDetector(nn.Module):
    """Five stride-2 stages, top-down feature fusion, one 1x1 head per output stride.

    ``forward`` returns a list (finest stride first) of tensors shaped
    (batch, anchors, grid, grid, 5 + classes).
    """

    def __init__(self, config: DetectorConfig):
        super().__init__()
        self.config = config
        n_stages = int(round(math.log2(max(config.strides))))
        if 2**n_stages != max(config.strides) or any(s & (s - 1) for s in config.strides):
            raise ValueError(f"strides must be powers of two, got {config.strides}")
        w = config.width
        chans = [min(w * 2**i, 16 * w) for i in range(n_stages)]
        stages, c_prev = [], 3
        for c in chans:
            stages.append(nn.Sequential(ConvBlock(c_prev, c, 3, stride=2), ConvBlock(c, c, 3)))
            c_prev = c
        self.stages = nn.ModuleList(stages)
        self.out_levels = [int(round(math.log2(s))) - 1 for s in config.strides]
        neck = 4 * w
        self.lateral = nn.ModuleList(ConvBlock(chans[i], neck, 1) for i in self.out_levels)
        self.smooth = nn.ModuleList(ConvBlock(neck, neck, 3) for _ in self.out_levels)
        self.n_anchors = config.anchors_per_scale if config.anchors is None else None
        per_scale = (
            [config.anchors_per_scale] * len(config.strides)
            if config.anchors is None
            else [len(g) for g in config.anchors.anchors]
        )
        self.per_scale = per_scale
        self.heads = nn.ModuleList(nn.Conv2d(neck, a * (5 + config.num_classes), 1) for a in per_scale)
        self._init_heads(config.head_init)

    def _init_heads(self, mode: str):
        c = self.config.num_classes
        for head, a in zip(self.heads, self.per_scale):
            if mode == "zero":
                nn.init.zeros_(head.weight)
                nn.init.zeros_(head.bias)
                continue
            nn.init.normal_(head.weight, std=0.01)
            bias = head.bias.detach().view(a, 5 + c)
            bias.zero_()
            bias[:, 4] = -4.5  # objectness prior of about 1%
            bias[:, 5:] = -math.log(c - 1) if c > 1 else 0.0

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        b, _, hgt, wid = x.shape
        if hgt % max(self.config.strides) or wid % max(self.config.strides):
            raise ValueError(f"input {hgt}x{wid} not divisible by stride {max(self.config.strides)}")
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        outs = [None] * len(self.out_levels)
        top = None
        for i in reversed(range(len(self.out_levels))):
            y = self.lateral[i](feats[self.out_levels[i]])
            if top is not None:
                y = y + F.interpolate(top, size=y.shape[-2:], mode="nearest")
            top = y
            y = self.heads[i](self.smooth[i](y))
            a = self.per_scale[i]
            g_h, g_w = y.shape[-2:]
            outs[i] = y.view(b, a, 5 + self.config.num_classes, g_h, g_w).permute(0, 1, 3, 4, 2).contiguous()
        return outs


def build_compact_backbone(config: DetectorConfig) -> CompactDetector:
    if config.input_size % max(config.strides):
        raise ValueError(f"input_size {config.input_size} not divisible by stride {max(config.strides)}")
    return CompactDetector(config)
