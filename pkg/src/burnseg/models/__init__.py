"""Encoder-decoder segmentation models with a burned-area head and an
optional land-cover head sharing the decoder features.

Both heads consume the same final decoder feature map, so burned-area
logits never depend on the land-cover head: it can be dropped after
training without changing inference output in any bit.

Initialization is a deterministic function of (config, seed): every
parameter tensor is drawn from its own generator keyed by the parameter
name, so two builds agree bitwise and adding or removing the auxiliary
head never shifts the other tensors' values.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, replace
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from ..errors import (
    BadConfigError,
    NoLcHeadError,
    NonFiniteInputError,
    RasterIOError,
    ShapeError,
)
from .segformer import AllMlpDecoder, MixVisionTransformer
from .unet import ResNet34Encoder, UnetDecoder, scaled_width

__all__ = [
    "Architecture",
    "ModelConfig",
    "SegmentationModel",
    "build_model",
    "count_params",
    "drop_lc_head",
    "save_checkpoint",
    "load_checkpoint",
    "load_backbone_weights",
    "scaled_width",
]

ENCODER_STRIDE = 32

#: Reference trainable parameter counts at width_scale 1.0 without the
#: auxiliary head.
REFERENCE_PARAMS = {"unet_rn34": 24.4e6, "segformer_b2": 27.4e6}


class Architecture(enum.Enum):
    UNET_RN34 = "unet_rn34"
    SEGFORMER_B2 = "segformer_b2"


@dataclass(frozen=True)
class ModelConfig:
    architecture: Architecture = Architecture.UNET_RN34
    in_channels: int = 4
    num_lc_classes: int = 12
    width_scale: float = 1.0
    with_lc_head: bool = False

    def __post_init__(self) -> None:
        if isinstance(self.architecture, str):
            object.__setattr__(self, "architecture", Architecture(self.architecture))
        if self.in_channels != 4:
            raise BadConfigError("models take exactly 4 input bands (B, G, R, NIR)")
        if not self.width_scale > 0:
            raise BadConfigError("width_scale must be positive")
        if self.num_lc_classes < 2:
            raise BadConfigError("num_lc_classes must be at least 2")


class SegmentationModel(nn.Module):
    """Shared encoder-decoder with independent 1-channel burned-area and
    optional num_lc_classes-channel land-cover heads."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.init_seed = seed
        if config.architecture is Architecture.UNET_RN34:
            self.encoder = ResNet34Encoder(config.in_channels, config.width_scale)
            self.decoder = UnetDecoder(self.encoder.out_channels, config.width_scale)
            head_kernel = 3
            self.head_upsample = 1
        else:
            self.encoder = MixVisionTransformer(config.in_channels, config.width_scale)
            self.decoder = AllMlpDecoder(self.encoder.out_dims, config.width_scale)
            head_kernel = 1
            self.head_upsample = 4
        dec_ch = self.decoder.out_channels
        self.ba_head = nn.Conv2d(dec_ch, 1, head_kernel, padding=head_kernel // 2)
        if config.with_lc_head:
            self.lc_head = nn.Conv2d(
                dec_ch, config.num_lc_classes, head_kernel, padding=head_kernel // 2
            )
        else:
            self.lc_head = None
        _init_parameters(self, seed)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor | None]:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"expected (B, {self.config.in_channels}, H, W), got {tuple(x.shape)}"
            )
        if x.shape[2] % ENCODER_STRIDE or x.shape[3] % ENCODER_STRIDE:
            raise ShapeError(
                f"input size {x.shape[2]}x{x.shape[3]} not divisible by "
                f"{ENCODER_STRIDE}"
            )
        if not torch.isfinite(x).all():
            raise NonFiniteInputError("input batch contains non-finite values")
        features = self.encoder(x)
        decoded = self.decoder(features)
        ba = self.ba_head(decoded)
        lc = self.lc_head(decoded) if self.lc_head is not None else None
        if self.head_upsample > 1:
            ba = F.interpolate(
                ba, scale_factor=self.head_upsample, mode="bilinear",
                align_corners=False,
            )
            if lc is not None:
                lc = F.interpolate(
                    lc, scale_factor=self.head_upsample, mode="bilinear",
                    align_corners=False,
                )
        return ba, lc


def _param_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _init_parameters(model: nn.Module, seed: int) -> None:
    """Per-tensor seeded init: conv kernels Kaiming-normal (fan-in), linear
    weights N(0, 0.02), norm weights 1, biases 0."""
    with torch.no_grad():
        for name, p in model.named_parameters():
            gen = torch.Generator().manual_seed(_param_seed(seed, name))
            if p.ndim == 4:
                fan_in = p.shape[1] * p.shape[2] * p.shape[3]
                p.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
            elif p.ndim == 2:
                p.normal_(0.0, 0.02, generator=gen)
            elif name.endswith("bias"):
                p.zero_()
            else:
                p.fill_(1.0)


def build_model(config: ModelConfig, seed: int = 0) -> SegmentationModel:
    """Construct a model with deterministic seeded initialization."""
    return SegmentationModel(config, seed=seed)


def count_params(model: nn.Module) -> int:
    """Number of trainable parameter elements."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def drop_lc_head(model: SegmentationModel) -> SegmentationModel:
    """Return a copy without the auxiliary land-cover head.

    Shared weights and batch-norm statistics are carried over verbatim,
    so burned-area logits are bitwise identical to the original model's.
    """
    if not model.config.with_lc_head:
        raise NoLcHeadError("model has no land-cover head to drop")
    stripped = SegmentationModel(
        replace(model.config, with_lc_head=False), seed=model.init_seed
    )
    state = {
        k: v for k, v in model.state_dict().items() if not k.startswith("lc_head.")
    }
    stripped.load_state_dict(state, strict=True)
    stripped.train(model.training)
    return stripped


CHECKPOINT_VERSION = 1


def save_checkpoint(model: SegmentationModel, path: str | Path, extra: dict | None = None) -> None:
    """Single-file archive: format version, config, named tensors."""
    cfg = model.config
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "config": {
                "architecture": cfg.architecture.value,
                "in_channels": cfg.in_channels,
                "num_lc_classes": cfg.num_lc_classes,
                "width_scale": cfg.width_scale,
                "with_lc_head": cfg.with_lc_head,
            },
            "init_seed": model.init_seed,
            "state_dict": model.state_dict(),
            "extra": extra or {},
        },
        str(path),
    )


def load_checkpoint(path: str | Path) -> tuple[SegmentationModel, dict]:
    path = Path(path)
    if not path.exists():
        raise RasterIOError(f"no checkpoint at {path}")
    payload = torch.load(str(path), map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise BadConfigError(f"unsupported checkpoint version {version}")
    config = ModelConfig(**payload["config"])
    model = SegmentationModel(config, seed=payload.get("init_seed", 0))
    model.load_state_dict(payload["state_dict"], strict=True)
    model.eval()
    return model, payload.get("extra", {})


def load_backbone_weights(model: SegmentationModel, path: str | Path) -> None:
    """Load encoder weights from an external state-dict file.

    Weight files for 3-band inputs are adapted to the 4-band models by
    duplicating the first band's kernel slice for the NIR channel.
    """
    path = Path(path)
    if not path.exists():
        raise RasterIOError(f"no weight file at {path}")
    state = torch.load(str(path), map_location="cpu", weights_only=True)
    own = model.encoder.state_dict()
    adapted = {}
    for key, value in state.items():
        if (
            key in own
            and value.ndim == 4
            and own[key].shape[1] == 4
            and value.shape[1] == 3
            and own[key].shape[0] == value.shape[0]
            and own[key].shape[2:] == value.shape[2:]
        ):
            value = torch.cat([value, value[:, :1]], dim=1)
        adapted[key] = value
    model.encoder.load_state_dict(adapted, strict=True)
