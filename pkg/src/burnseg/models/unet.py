"""U-Net with a ResNet-34 backbone.

The encoder is a standard ResNet-34 (7x7 stem, four BasicBlock stages of
depth 3/4/6/3) taking 4-band input; the decoder is the classic 4-level
skip-connected U-Net decoder plus one final upsampling block back to full
resolution. Channel widths scale with ``width_scale`` (rounded up to a
multiple of 8) so tiny CPU-friendly variants share the exact topology of
the full 24.4M-parameter model.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor


def scaled_width(base: int, scale: float) -> int:
    """Scale a channel width, rounding up to a multiple of 8."""
    return max(8, math.ceil(base * scale / 8.0) * 8)


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.downsample = None

    def forward(self, x: Tensor) -> Tensor:
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)), inplace=True)
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity, inplace=True)


def _make_stage(in_ch: int, out_ch: int, depth: int, stride: int) -> nn.Sequential:
    blocks = [BasicBlock(in_ch, out_ch, stride=stride)]
    blocks.extend(BasicBlock(out_ch, out_ch) for _ in range(depth - 1))
    return nn.Sequential(*blocks)


class ResNet34Encoder(nn.Module):
    """Returns five feature maps at strides 2, 4, 8, 16, 32."""

    def __init__(self, in_channels: int, width_scale: float = 1.0):
        super().__init__()
        c = [scaled_width(base, width_scale) for base in (64, 128, 256, 512)]
        self.conv1 = nn.Conv2d(in_channels, c[0], 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(c[0])
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1)
        self.layer1 = _make_stage(c[0], c[0], 3, stride=1)
        self.layer2 = _make_stage(c[0], c[1], 4, stride=2)
        self.layer3 = _make_stage(c[1], c[2], 6, stride=2)
        self.layer4 = _make_stage(c[2], c[3], 3, stride=2)
        self.out_channels = [c[0], c[0], c[1], c[2], c[3]]

    def forward(self, x: Tensor) -> list[Tensor]:
        f1 = F.relu(self.bn1(self.conv1(x)), inplace=True)
        f2 = self.layer1(self.maxpool(f1))
        f3 = self.layer2(f2)
        f4 = self.layer3(f3)
        f5 = self.layer4(f4)
        return [f1, f2, f3, f4, f5]


class DecoderBlock(nn.Module):
    def __init__(self, in_ch: int, skip_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch + skip_ch, out_ch, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)

    def forward(self, x: Tensor, skip: Tensor | None = None) -> Tensor:
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        if skip is not None:
            x = torch.cat([x, skip], dim=1)
        x = F.relu(self.bn1(self.conv1(x)), inplace=True)
        return F.relu(self.bn2(self.conv2(x)), inplace=True)


class UnetDecoder(nn.Module):
    def __init__(self, encoder_channels: list[int], width_scale: float = 1.0):
        super().__init__()
        d = [scaled_width(base, width_scale) for base in (256, 128, 64, 32, 16)]
        c1, c2, c3, c4, c5 = encoder_channels
        self.blocks = nn.ModuleList(
            [
                DecoderBlock(c5, c4, d[0]),
                DecoderBlock(d[0], c3, d[1]),
                DecoderBlock(d[1], c2, d[2]),
                DecoderBlock(d[2], c1, d[3]),
                DecoderBlock(d[3], 0, d[4]),
            ]
        )
        self.out_channels = d[4]

    def forward(self, features: list[Tensor]) -> Tensor:
        f1, f2, f3, f4, f5 = features
        x = self.blocks[0](f5, f4)
        x = self.blocks[1](x, f3)
        x = self.blocks[2](x, f2)
        x = self.blocks[3](x, f1)
        return self.blocks[4](x)
