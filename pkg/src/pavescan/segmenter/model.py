from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import AsppConfig, SegmenterConfig


def effective_kernel(k: int, r: int) -> int:
    """Footprint of a k-tap kernel dilated by rate r."""
    if k < 1 or r < 1:
        raise ValueError(f"kernel size and rate must be >= 1, got k={k}, r={r}")
    return k + (k - 1) * (r - 1)


class ConvBnReLU(nn.Sequential):
    def __init__(self, c_in: int, c_out: int, k: int = 3, stride: int = 1, dilation: int = 1):
        pad = dilation * (k // 2)
        super().__init__(
            nn.Conv2d(c_in, c_out, k, stride=stride, padding=pad, dilation=dilation, bias=False),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
        )

    @property
    def conv(self) -> nn.Conv2d:
        return self[0]


class ImagePooling(nn.Module):
    """Global average pool, 1x1 conv, bilinear upsample back to the input grid.

    No batch norm here: a pooled map is a single value per channel, which makes
    batch statistics meaningless for small batches.
    """

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 1)

    def forward(self, x):
        y = F.relu(self.conv(F.adaptive_avg_pool2d(x, 1)))
        return F.interpolate(y, size=x.shape[-2:], mode="bilinear", align_corners=False)


class ASPP(nn.Module):
    def __init__(self, in_channels: int, config: AsppConfig):
        super().__init__()
        if in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        c = config.branch_channels
        self.pointwise = ConvBnReLU(in_channels, c, 1)
        self.atrous = nn.ModuleList(ConvBnReLU(in_channels, c, 3, dilation=r) for r in config.rates)
        self.pooling = ImagePooling(in_channels, c) if config.include_image_pooling else None
        n_branches = 1 + len(config.rates) + (1 if self.pooling is not None else 0)
        self.fuse = ConvBnReLU(n_branches * c, c, 1)

    def branches(self, x) -> list[torch.Tensor]:
        out = [self.pointwise(x)] + [b(x) for b in self.atrous]
        if self.pooling is not None:
            out.append(self.pooling(x))
        return out

    def forward(self, x):
        return self.fuse(torch.cat(self.branches(x), dim=1))


def build_aspp(in_channels: int, config: AsppConfig) -> ASPP:
    return ASPP(in_channels, config)


class Encoder(nn.Module):
    """Stride-2 stages down to the output stride, then atrous stages that keep it."""

    def __init__(self, width: int, output_stride: int):
        super().__init__()
        n_down = {16: 4, 8: 3}[output_stride]
        layers, c_prev = [], 3
        for i in range(n_down):
            c = width * 2**i
            layers += [ConvBnReLU(c_prev, c, 3, stride=2), ConvBnReLU(c, c, 3)]
            c_prev = c
        dilation = 1
        for _ in range(5 - n_down):
            dilation *= 2
            c = min(c_prev * 2, 16 * width)
            layers += [ConvBnReLU(c_prev, c, 3, dilation=dilation), ConvBnReLU(c, c, 3, dilation=dilation)]
            c_prev = c
        self.body = nn.Sequential(*layers)
        self.out_channels = c_prev

    def forward(self, x):
        return self.body(x)


class DeepLabLite(nn.Module):
    """Compact encoder, ASPP, 3x3 refinement, 1x1 classifier, bilinear upsample to the input size."""

    def __init__(self, config: SegmenterConfig):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config.width, config.output_stride)
        self.aspp = build_aspp(self.encoder.out_channels, config.aspp)
        c = config.aspp.branch_channels
        self.refine = ConvBnReLU(c, c, 3)
        self.classifier = nn.Conv2d(c, config.num_classes, 1)

    def forward(self, x):
        size = x.shape[-2:]
        y = self.classifier(self.refine(self.aspp(self.encoder(x))))
        return F.interpolate(y, size=size, mode="bilinear", align_corners=False)


def build_segmenter(config: SegmenterConfig) -> DeepLabLite:
    return DeepLabLite(config)
