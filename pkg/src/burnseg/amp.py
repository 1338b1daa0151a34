"""Mixed-precision support: dynamic loss scaling and the precision policy.

Half precision runs where it is cheap and safe, full precision where the
dynamic range matters. The per-operation policy:

    float16: convolution, linear / matmul
    float32: batch norm, layer norm, softmax, sigmoid on logits,
             reductions, losses, optimizer state and parameter master
             copies

On this backend the policy is enforced by ``torch.autocast``; parameters
stay float32 and only the listed ops compute in half precision.

Loss scaling multiplies the loss before backpropagation and divides the
gradients after, so small half-precision gradients do not underflow.
The scale adapts: any non-finite gradient skips the optimizer step and
halves the scale; a full window of clean steps doubles it.
"""

from __future__ import annotations

from contextlib import nullcontext
from dataclasses import dataclass
from typing import Iterable, Sequence

import torch
from torch import Tensor

HALF_PRECISION_OPS = frozenset({"conv2d", "linear", "matmul"})
FULL_PRECISION_OPS = frozenset(
    {"batch_norm", "layer_norm", "softmax", "reduction", "loss"}
)


def autocast(enabled: bool, device_type: str = "cpu"):
    """Context manager applying the half-precision policy when enabled."""
    if not enabled:
        return nullcontext()
    return torch.autocast(device_type=device_type, dtype=torch.float16)


@dataclass
class LossScaler:
    """Dynamic loss-scale state machine.

    scale halves (down to min_scale) whenever a non-finite gradient shows
    up, and doubles after growth_interval consecutive clean steps.
    """

    scale: float = 2.0 ** 16
    growth_interval: int = 2000
    backoff_factor: float = 0.5
    growth_factor: float = 2.0
    min_scale: float = 1.0
    steps_since_overflow: int = 0

    def update(self, found_overflow: bool) -> None:
        if found_overflow:
            self.scale = max(self.scale * self.backoff_factor, self.min_scale)
            self.steps_since_overflow = 0
        else:
            self.steps_since_overflow += 1
            if self.steps_since_overflow >= self.growth_interval:
                self.scale = self.scale * self.growth_factor
                self.steps_since_overflow = 0


def has_overflow(grads: Iterable[Tensor | None]) -> bool:
    return any(g is not None and not torch.isfinite(g).all() for g in grads)


def scaled_backward(
    loss: Tensor, scaler: LossScaler, params: Sequence[Tensor]
) -> tuple[list[Tensor] | None, LossScaler]:
    """Backpropagate scale*loss and return unscaled gradients.

    Returns (gradients, scaler). On overflow the step must be skipped:
    gradients come back as None, the scale backs off, and the scaler
    counter resets. Overflow is a handled state, never an exception.
    """
    grads = torch.autograd.grad(loss * scaler.scale, list(params))
    if has_overflow(grads):
        scaler.update(True)
        return None, scaler
    inv = 1.0 / scaler.scale
    unscaled = [g * inv for g in grads]
    scaler.update(False)
    return unscaled, scaler
