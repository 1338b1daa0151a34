"""Soft Dice losses and the single/multi-task objective.

The burned-area head is scored with binary soft Dice on sigmoid
probabilities; the land-cover head with multi-class soft Dice on softmax
probabilities, averaged over the classes actually present in the batch
target (absent classes would contribute meaningless epsilon-dominated
terms). The multi-task objective is the weighted sum

    total = ba_loss + lambda_lc * lc_loss

which reduces to the single-task objective at lambda_lc = 0.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from .errors import MissingLcError, ShapeError


class Framework(enum.Enum):
    STL = "STL"
    MTL = "MTL"


@dataclass(frozen=True)
class LossConfig:
    """lambda_lc weighs the auxiliary land-cover term (0.3 suits the
    U-Net, 0.2 the SegFormer); dice_smooth is the epsilon in both Dice
    numerator and denominator."""

    lambda_lc: float = 0.3
    dice_smooth: float = 1.0

    def __post_init__(self) -> None:
        if self.lambda_lc < 0:
            raise ValueError("lambda_lc must be non-negative")
        if self.dice_smooth <= 0:
            raise ValueError("dice_smooth must be positive")


def default_lambda_lc(architecture: str) -> float:
    return 0.2 if "segformer" in architecture.lower() else 0.3


def dice_loss(
    probs: Tensor, target: Tensor, smooth: float = 1.0, valid: Tensor | None = None
) -> Tensor:
    """Soft Dice loss, 1 - mean_c (2*sum(p_c*g_c) + eps) / (sum(p_c) + sum(g_c) + eps).

    probs: (B, C, H, W) probabilities - sigmoid output for C == 1, softmax
    for C > 1. target: binary (B, H, W) or (B, 1, H, W) for C == 1, class
    indices (B, H, W) for C > 1. Sums run over batch and pixels jointly;
    for C > 1 the mean covers only classes present in the target. Pixels
    where ``valid`` is 0 are excluded from every sum (both probabilities
    and targets are zeroed there).
    """
    if probs.ndim != 4:
        raise ShapeError(f"probs must be (B, C, H, W), got {tuple(probs.shape)}")
    channels = probs.shape[1]
    if channels == 1:
        if target.ndim == 3:
            target = target.unsqueeze(1)
        if target.shape != (probs.shape[0], 1, *probs.shape[2:]):
            raise ShapeError(
                f"target shape {tuple(target.shape)} does not match probs "
                f"{tuple(probs.shape)}"
            )
        onehot = target.to(probs.dtype)
    else:
        if target.shape != (probs.shape[0], *probs.shape[2:]):
            raise ShapeError(
                f"target shape {tuple(target.shape)} does not match probs "
                f"{tuple(probs.shape)}"
            )
        onehot = (
            F.one_hot(target.long(), num_classes=channels)
            .permute(0, 3, 1, 2)
            .to(probs.dtype)
        )
    if valid is not None:
        if valid.ndim == 3:
            valid = valid.unsqueeze(1)
        mask = valid.to(probs.dtype)
        probs = probs * mask
        onehot = onehot * mask
    inter = (probs * onehot).sum(dim=(0, 2, 3))
    psum = probs.sum(dim=(0, 2, 3))
    gsum = onehot.sum(dim=(0, 2, 3))
    per_class = (2.0 * inter + smooth) / (psum + gsum + smooth)
    if channels > 1:
        present = gsum > 0
        if present.any():
            return 1.0 - per_class[present].mean()
    return 1.0 - per_class.mean()


def combined_loss(
    ba_probs: Tensor,
    lc_probs: Tensor | None,
    y_ba: Tensor,
    y_lc: Tensor | None,
    cfg: LossConfig,
    framework: Framework,
    valid: Tensor | None = None,
) -> Tensor:
    """Single-task: the burned-area Dice loss. Multi-task: burned-area
    plus lambda_lc times the land-cover Dice loss."""
    ba = dice_loss(ba_probs, y_ba, smooth=cfg.dice_smooth, valid=valid)
    if framework is Framework.STL:
        return ba
    if lc_probs is None or y_lc is None:
        raise MissingLcError("MTL loss requires land-cover predictions and labels")
    lc = dice_loss(lc_probs, y_lc, smooth=cfg.dice_smooth, valid=valid)
    return ba + cfg.lambda_lc * lc
