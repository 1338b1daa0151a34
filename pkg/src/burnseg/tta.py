"""Test-time augmentation and timed scene prediction.

The TTA procedure per patch: apply each configured geometric transform,
predict on the transformed patch, invert the transform on the output
probability map, and average the maps. Transforms come from the dihedral
group of the square, so every one has an exact, lossless inverse and the
full 8-transform average is equivariant under the whole group.

Averaging happens in probability space (post-sigmoid), accumulated
sequentially in the listed transform order so results are reproducible
bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

from .amp import autocast
from .errors import NonSquareError, UnknownTransformError
from .patching import PatchSet
from .raster import RasterGrid, RasterKind


def _rot90(t: Tensor) -> Tensor:
    return torch.rot90(t, 1, dims=(-2, -1))


def _rot180(t: Tensor) -> Tensor:
    return torch.rot90(t, 2, dims=(-2, -1))


def _rot270(t: Tensor) -> Tensor:
    return torch.rot90(t, 3, dims=(-2, -1))


def _hflip(t: Tensor) -> Tensor:
    return torch.flip(t, dims=(-1,))


def _vflip(t: Tensor) -> Tensor:
    return torch.flip(t, dims=(-2,))


def _transpose(t: Tensor) -> Tensor:
    return t.transpose(-2, -1)


def _anti_transpose(t: Tensor) -> Tensor:
    return _rot180(t.transpose(-2, -1))


#: name -> (transform, inverse). All eight symmetries of the square.
TRANSFORMS: dict[str, tuple] = {
    "identity": (lambda t: t, lambda t: t),
    "rot90": (_rot90, _rot270),
    "rot180": (_rot180, _rot180),
    "rot270": (_rot270, _rot90),
    "hflip": (_hflip, _hflip),
    "vflip": (_vflip, _vflip),
    "transpose": (_transpose, _transpose),
    "anti_transpose": (_anti_transpose, _anti_transpose),
}

ALL_TRANSFORMS = tuple(TRANSFORMS)


def apply_transform(name: str, t: Tensor) -> Tensor:
    if name not in TRANSFORMS:
        raise UnknownTransformError(f"unknown transform {name!r}")
    return TRANSFORMS[name][0](t).contiguous()


def invert_transform(name: str, t: Tensor) -> Tensor:
    """Exact inverse: invert_transform(n, apply_transform(n, x)) == x."""
    if name not in TRANSFORMS:
        raise UnknownTransformError(f"unknown transform {name!r}")
    return TRANSFORMS[name][1](t).contiguous()


@dataclass(frozen=True)
class TtaConfig:
    transforms: tuple[str, ...] = ALL_TRANSFORMS
    enabled: bool = True
    threshold: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "transforms", tuple(self.transforms))
        for name in self.transforms:
            if name not in TRANSFORMS:
                raise UnknownTransformError(f"unknown transform {name!r}")
        if self.enabled and "identity" not in self.transforms:
            raise ValueError("enabled TTA must include the identity transform")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("threshold must lie strictly between 0 and 1")

    @property
    def active_transforms(self) -> tuple[str, ...]:
        return self.transforms if self.enabled else ("identity",)


@dataclass(frozen=True)
class PredictionRun:
    """Output maps and telemetry of one scene prediction."""

    probability_map: RasterGrid
    binary_map: RasterGrid
    wall_clock_seconds: float
    patches_processed: int
    model_invocations: int
    tta: TtaConfig
    mixed_precision: bool = False


def tta_predict(model, patch: Tensor, cfg: TtaConfig) -> Tensor:
    """Averaged burned-area probability map for one (C, H, W) patch.

    For each transform t: p_t = invert(t, sigmoid(model(t(patch)))); the
    result is the mean of the p_t in listed order.
    """
    if patch.ndim != 3:
        raise ValueError(f"patch must be (C, H, W), got {tuple(patch.shape)}")
    if patch.shape[-2] != patch.shape[-1]:
        raise NonSquareError(
            f"TTA needs square patches, got {patch.shape[-2]}x{patch.shape[-1]}"
        )
    names = cfg.active_transforms
    acc: Tensor | None = None
    with torch.no_grad():
        for name in names:
            x = apply_transform(name, patch).unsqueeze(0)
            ba_logits, _ = model(x)
            prob = torch.sigmoid(ba_logits.float())[0, 0]
            prob = invert_transform(name, prob)
            acc = prob if acc is None else acc + prob
    return acc / float(len(names))


def predict_scene(
    model,
    patchset: PatchSet,
    tta: TtaConfig,
    mixed_precision: bool = False,
) -> PredictionRun:
    """Predict every patch (with TTA when enabled), mosaic, threshold.

    The wall clock covers model compute, TTA and mosaicking on a
    monotonic timer; a warm-up forward on the first patch runs before the
    timed section and disk I/O is excluded by construction.
    """
    from .patching import mosaic

    from .train import impute_nodata

    model.eval()
    names = tta.active_transforms
    tensors = [
        torch.from_numpy(
            impute_nodata(np.ascontiguousarray(p.values), p.nodata)
        ).float()
        for p in patchset.patches
    ]

    with torch.no_grad(), autocast(mixed_precision):
        model(tensors[0].unsqueeze(0))  # warm-up, excluded from timing

    invocations = 0
    prob_patches = []
    start = time.perf_counter()
    with autocast(mixed_precision):
        for tensor, patch in zip(tensors, patchset.patches):
            prob = tta_predict(model, tensor, tta)
            invocations += len(names)
            prob_patches.append(
                RasterGrid(
                    prob.numpy().astype(np.float32)[np.newaxis],
                    patch.transform,
                    RasterKind.PROBABILITY_MAP,
                )
            )
    prob_set = PatchSet(
        patches=tuple(prob_patches),
        placements=patchset.placements,
        source_width=patchset.source_width,
        source_height=patchset.source_height,
        spec=patchset.spec,
        source_transform=patchset.source_transform,
        kind=RasterKind.PROBABILITY_MAP,
    )
    probability_map = mosaic(prob_set)
    elapsed = time.perf_counter() - start

    binary = (probability_map.values >= tta.threshold).astype(np.uint8)
    binary_map = RasterGrid(
        binary, probability_map.transform, RasterKind.BINARY_MASK
    )
    return PredictionRun(
        probability_map=probability_map,
        binary_map=binary_map,
        wall_clock_seconds=elapsed,
        patches_processed=len(patchset),
        model_invocations=invocations,
        tta=tta,
        mixed_precision=mixed_precision,
    )
