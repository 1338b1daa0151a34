"""SegFormer with a MiT-B2 backbone and the all-MLP decode head.

Four hierarchical transformer stages (overlapping patch embeddings,
efficient self-attention with spatial reduction, Mix-FFN with a depthwise
convolution) produce features at strides 4/8/16/32. The decode head
projects each stage to a common width, upsamples everything to stride 4
and fuses with a 1x1 convolution; segmentation heads therefore emit at
one quarter of the input resolution and are upsampled x4 afterwards.

MiT-B2 geometry: embedding dims (64, 128, 320, 512), depths (3, 4, 6, 3),
spatial-reduction ratios (8, 4, 2, 1), MLP ratio 4, one attention head
per 64 channels. Widths scale with ``width_scale`` like the U-Net's.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .unet import scaled_width

_DIMS = (64, 128, 320, 512)
_DEPTHS = (3, 4, 6, 3)
_SR_RATIOS = (8, 4, 2, 1)
_MLP_RATIO = 4
_HEAD_DIM = 64
_DECODER_DIM = 768


class OverlapPatchEmbed(nn.Module):
    def __init__(self, in_ch: int, dim: int, kernel: int, stride: int):
        super().__init__()
        self.proj = nn.Conv2d(in_ch, dim, kernel, stride=stride, padding=kernel // 2)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: Tensor) -> tuple[Tensor, int, int]:
        x = self.proj(x)
        _, _, h, w = x.shape
        x = x.flatten(2).transpose(1, 2)
        return self.norm(x), h, w


class EfficientAttention(nn.Module):
    """Self-attention whose keys/values come from a spatially reduced map."""

    def __init__(self, dim: int, heads: int, sr_ratio: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = self.head_dim ** -0.5
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, dim * 2)
        self.proj = nn.Linear(dim, dim)
        self.sr_ratio = sr_ratio
        if sr_ratio > 1:
            self.sr = nn.Conv2d(dim, dim, sr_ratio, stride=sr_ratio)
            self.norm = nn.LayerNorm(dim)

    def forward(self, x: Tensor, h: int, w: int) -> Tensor:
        b, n, c = x.shape
        q = self.q(x).reshape(b, n, self.heads, self.head_dim).permute(0, 2, 1, 3)
        if self.sr_ratio > 1:
            red = x.permute(0, 2, 1).reshape(b, c, h, w)
            red = self.sr(red).reshape(b, c, -1).permute(0, 2, 1)
            red = self.norm(red)
        else:
            red = x
        kv = (
            self.kv(red)
            .reshape(b, -1, 2, self.heads, self.head_dim)
            .permute(2, 0, 3, 1, 4)
        )
        k, v = kv[0], kv[1]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class MixFFN(nn.Module):
    """Feed-forward with a 3x3 depthwise convolution between the linears."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.dwconv = nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: Tensor, h: int, w: int) -> Tensor:
        b, n, _ = x.shape
        x = self.fc1(x)
        x = x.transpose(1, 2).reshape(b, -1, h, w)
        x = self.dwconv(x)
        x = x.flatten(2).transpose(1, 2)
        return self.fc2(F.gelu(x))


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, sr_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = EfficientAttention(dim, heads, sr_ratio)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = MixFFN(dim, dim * _MLP_RATIO)

    def forward(self, x: Tensor, h: int, w: int) -> Tensor:
        x = x + self.attn(self.norm1(x), h, w)
        return x + self.ffn(self.norm2(x), h, w)


class _Stage(nn.Module):
    def __init__(self, in_ch: int, dim: int, depth: int, heads: int,
                 sr_ratio: int, kernel: int, stride: int):
        super().__init__()
        self.embed = OverlapPatchEmbed(in_ch, dim, kernel, stride)
        self.blocks = nn.ModuleList(
            TransformerBlock(dim, heads, sr_ratio) for _ in range(depth)
        )
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: Tensor) -> Tensor:
        tokens, h, w = self.embed(x)
        for block in self.blocks:
            tokens = block(tokens, h, w)
        tokens = self.norm(tokens)
        b, _, c = tokens.shape
        return tokens.permute(0, 2, 1).reshape(b, c, h, w)


class MixVisionTransformer(nn.Module):
    """Hierarchical transformer encoder returning four feature maps."""

    def __init__(self, in_channels: int, width_scale: float = 1.0):
        super().__init__()
        dims = [scaled_width(d, width_scale) for d in _DIMS]
        heads = [max(1, d // _HEAD_DIM) for d in dims]
        stages = []
        prev = in_channels
        for i, dim in enumerate(dims):
            stages.append(
                _Stage(
                    prev, dim, _DEPTHS[i], heads[i], _SR_RATIOS[i],
                    kernel=7 if i == 0 else 3,
                    stride=4 if i == 0 else 2,
                )
            )
            prev = dim
        self.stages = nn.ModuleList(stages)
        self.out_dims = dims

    def forward(self, x: Tensor) -> list[Tensor]:
        features = []
        for stage in self.stages:
            x = stage(x)
            features.append(x)
        return features


class AllMlpDecoder(nn.Module):
    """Project every stage to a common width at stride 4 and fuse."""

    def __init__(self, in_dims: list[int], width_scale: float = 1.0):
        super().__init__()
        embed = scaled_width(_DECODER_DIM, width_scale)
        self.linears = nn.ModuleList(nn.Linear(d, embed) for d in in_dims)
        self.fuse = nn.Conv2d(len(in_dims) * embed, embed, 1, bias=False)
        self.bn = nn.BatchNorm2d(embed)
        self.out_channels = embed

    def forward(self, features: list[Tensor]) -> Tensor:
        target = features[0].shape[2:]
        projected = []
        for linear, feat in zip(self.linears, features):
            b, c, h, w = feat.shape
            tok = linear(feat.flatten(2).transpose(1, 2))
            out = tok.transpose(1, 2).reshape(b, -1, h, w)
            if out.shape[2:] != target:
                out = F.interpolate(
                    out, size=target, mode="bilinear", align_corners=False
                )
            projected.append(out)
        fused = self.fuse(torch.cat(projected[::-1], dim=1))
        return F.relu(self.bn(fused), inplace=True)
