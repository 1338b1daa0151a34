"""Single- and multi-task training with optional mixed precision.

The loop minimizes the Dice-based objective with AdamW at a constant
learning rate, applies flip/rotation augmentation, tracks Dice/IoU/loss
per epoch for both splits, and keeps the weights of the best
validation-Dice epoch (later epoch wins ties). Full-precision runs are
bitwise reproducible for a fixed seed on the same platform.

Mixed precision follows the policy in :mod:`burnseg.amp`: half-precision
convolutions under loss scaling, full-precision everything fragile.
Validation always runs in full precision so model selection is
comparable across precision modes.
"""

from __future__ import annotations

import copy
import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import Tensor

from .amp import LossScaler, autocast, scaled_backward
from .errors import EmptyDatasetError, NanLossError, NonSquareError
from .losses import Framework, LossConfig, combined_loss
from .metrics import ConfusionCounts
from .patching import PatchSet


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    epochs: int = 20
    aug_probability: float = 0.5
    seed: int = 0
    mixed_precision: bool = False

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("rates must be positive")
        if not (0.0 <= self.aug_probability <= 1.0):
            raise ValueError("aug_probability must lie in [0, 1]")


def default_learning_rate(architecture: str) -> float:
    return 6e-5 if "segformer" in architecture.lower() else 1e-4


#: Consecutive skipped mixed-precision steps at minimum scale that abort
#: training.
MAX_SKIPS_AT_MIN_SCALE = 3


@dataclass
class SegmentationDataset:
    """In-memory training tensors: 4-band images, binary burned-area
    targets, optional land-cover targets, and a validity mask excluding
    nodata pixels from the losses and metrics."""

    images: Tensor
    ba: Tensor
    lc: Tensor | None
    valid: Tensor

    def __len__(self) -> int:
        return self.images.shape[0]


def impute_nodata(values: np.ndarray, nodata, fill: float = 0.0) -> np.ndarray:
    """Replace declared-nodata pixels with a neutral fill value."""
    if nodata is None:
        return values
    if isinstance(nodata, float) and np.isnan(nodata):
        return np.where(np.isnan(values), fill, values)
    return np.where(values == nodata, fill, values)


def dataset_from_patchsets(
    images: PatchSet,
    ba: PatchSet,
    lc: PatchSet | None = None,
    indices: Sequence[int] | None = None,
) -> SegmentationDataset:
    """Stack selected patches into training tensors.

    Image nodata pixels are imputed to 0; burned-area nodata pixels are
    marked invalid and replaced by 0 in the target; land-cover nodata
    pixels are folded into the validity mask as well.
    """
    if indices is None:
        indices = range(len(images))
    indices = list(indices)
    if not indices:
        raise EmptyDatasetError("no patches selected")
    img_nodata = images.patches[0].nodata
    img = torch.from_numpy(
        np.stack(
            [
                impute_nodata(
                    np.ascontiguousarray(images.patches[i].values), img_nodata
                )
                for i in indices
            ]
        )
    ).float()
    ba_nodata = ba.patches[0].nodata
    ba_arr = np.stack([ba.patches[i].values[0] for i in indices])
    valid = np.ones_like(ba_arr, dtype=bool)
    if ba_nodata is not None:
        valid &= ba_arr != ba_nodata
    ba_t = torch.from_numpy(np.where(valid, ba_arr, 0).astype(np.float32)).unsqueeze(1)
    lc_t = None
    if lc is not None:
        lc_arr = np.stack([lc.patches[i].values[0] for i in indices])
        lc_nodata = lc.patches[0].nodata
        if lc_nodata is not None:
            valid &= lc_arr != lc_nodata
        lc_t = torch.from_numpy(np.where(valid, lc_arr, 0).astype(np.int64))
    return SegmentationDataset(
        images=img,
        ba=ba_t,
        lc=lc_t,
        valid=torch.from_numpy(valid.astype(np.float32)).unsqueeze(1),
    )


def augment(
    tensors: Sequence[Tensor], p: float, rng: torch.Generator
) -> list[Tensor]:
    """Apply one random flip/rotation draw to every tensor identically.

    Each of horizontal flip, vertical flip and a 90-degree rotation is
    applied independently with probability p. All tensors must share the
    trailing (H, W) geometry; rotation requires square inputs.
    """
    draws = torch.rand(3, generator=rng)
    do_h, do_v, do_r = (bool(d < p) for d in draws)
    out = []
    for t in tensors:
        if t is None:
            out.append(None)
            continue
        if do_r and t.shape[-2] != t.shape[-1]:
            raise NonSquareError("rotation augmentation needs square patches")
        if do_h:
            t = torch.flip(t, dims=(-1,))
        if do_v:
            t = torch.flip(t, dims=(-2,))
        if do_r:
            t = torch.rot90(t, 1, dims=(-2, -1))
        out.append(t)
    return out


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_dice: float
    train_iou: float
    val_loss: float
    val_dice: float
    val_iou: float
    seconds: float


@dataclass
class TrainResult:
    history: list[EpochStats]
    best_state: dict
    best_epoch: int
    best_val_dice: float
    skipped_steps: int = 0


def _batch_metrics(ba_probs: Tensor, target: Tensor, valid: Tensor) -> ConfusionCounts:
    pred = (ba_probs >= 0.5) & (valid > 0)
    truth = (target > 0.5) & (valid > 0)
    keep = valid > 0
    tp = int((pred & truth).sum())
    fp = int((pred & ~truth & keep).sum())
    fn = int((~pred & truth).sum())
    tn = int((~pred & ~truth & keep).sum())
    return ConfusionCounts(tp, fp, fn, tn)


def _counts_dice_iou(counts: ConfusionCounts) -> tuple[float, float]:
    from .metrics import dice, iou

    return dice(counts), iou(counts)


def _forward_loss(
    model, images: Tensor, ba: Tensor, lc: Tensor | None, valid: Tensor,
    loss_cfg: LossConfig, framework: Framework, mixed_precision: bool,
) -> tuple[Tensor, Tensor]:
    with autocast(mixed_precision):
        ba_logits, lc_logits = model(images)
    ba_probs = torch.sigmoid(ba_logits.float())
    lc_probs = (
        torch.softmax(lc_logits.float(), dim=1) if lc_logits is not None else None
    )
    loss = combined_loss(ba_probs, lc_probs, ba, lc, loss_cfg, framework, valid=valid)
    return loss, ba_probs


def evaluate_dataset(
    model, dataset: SegmentationDataset, loss_cfg: LossConfig,
    framework: Framework, batch_size: int = 8,
) -> tuple[float, float, float]:
    """(loss, dice, iou) over a dataset in full precision, no augmentation."""
    was_training = model.training
    model.eval()
    counts = ConfusionCounts(0, 0, 0, 0)
    losses = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            sl = slice(start, start + batch_size)
            lc = dataset.lc[sl] if dataset.lc is not None else None
            loss, ba_probs = _forward_loss(
                model, dataset.images[sl], dataset.ba[sl], lc, dataset.valid[sl],
                loss_cfg, framework, mixed_precision=False,
            )
            losses.append(float(loss) * dataset.images[sl].shape[0])
            counts = counts + _batch_metrics(ba_probs, dataset.ba[sl], dataset.valid[sl])
    model.train(was_training)
    d, i = _counts_dice_iou(counts)
    mean_loss = float(np.sum(losses) / max(1, len(dataset)))
    return mean_loss, d, i


def train(
    model,
    train_set: SegmentationDataset,
    val_set: SegmentationDataset,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
) -> TrainResult:
    """Train the model, returning per-epoch history and the best weights.

    The framework follows the model: multi-task when the land-cover head
    exists (requires land-cover targets), single-task otherwise. Raises
    NanLossError on a non-finite full-precision loss, or in mixed
    precision after MAX_SKIPS_AT_MIN_SCALE consecutive skipped steps at
    the minimum loss scale.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise EmptyDatasetError("train and validation sets must be non-empty")
    framework = Framework.MTL if model.config.with_lc_head else Framework.STL
    if framework is Framework.MTL and train_set.lc is None:
        raise EmptyDatasetError("multi-task training requires land-cover targets")

    rng = torch.Generator().manual_seed(train_cfg.seed)
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=train_cfg.learning_rate,
        weight_decay=train_cfg.weight_decay,
    )
    scaler = LossScaler() if train_cfg.mixed_precision else None
    params = [p for p in model.parameters() if p.requires_grad]

    history: list[EpochStats] = []
    best_state: dict = {}
    best_epoch = -1
    best_val_dice = -1.0
    consecutive_skips = 0
    total_skips = 0

    for epoch in range(train_cfg.epochs):
        t0 = time.perf_counter()
        model.train()
        perm = torch.randperm(len(train_set), generator=rng)
        epoch_losses: list[float] = []
        counts = ConfusionCounts(0, 0, 0, 0)
        for start in range(0, len(train_set), train_cfg.batch_size):
            idx = perm[start: start + train_cfg.batch_size]
            images, ba, lc, valid = [], [], [], []
            for i in idx.tolist():
                sample = [
                    train_set.images[i],
                    train_set.ba[i],
                    train_set.lc[i] if train_set.lc is not None else None,
                    train_set.valid[i],
                ]
                sample = augment(sample, train_cfg.aug_probability, rng)
                images.append(sample[0])
                ba.append(sample[1])
                if sample[2] is not None:
                    lc.append(sample[2])
                valid.append(sample[3])
            images_t = torch.stack(images)
            ba_t = torch.stack(ba)
            lc_t = torch.stack(lc) if lc else None
            valid_t = torch.stack(valid)

            loss, ba_probs = _forward_loss(
                model, images_t, ba_t, lc_t, valid_t, loss_cfg, framework,
                train_cfg.mixed_precision,
            )
            if scaler is None:
                if not torch.isfinite(loss):
                    raise NanLossError(
                        f"non-finite loss {float(loss)!r} at epoch {epoch}"
                    )
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
            else:
                grads, scaler = scaled_backward(loss, scaler, params)
                if grads is None:
                    total_skips += 1
                    if scaler.scale <= scaler.min_scale:
                        consecutive_skips += 1
                        if consecutive_skips >= MAX_SKIPS_AT_MIN_SCALE:
                            raise NanLossError(
                                "mixed-precision training diverged: "
                                f"{consecutive_skips} skipped steps at minimum "
                                f"loss scale {scaler.min_scale}"
                            )
                    continue
                consecutive_skips = 0
                optimizer.zero_grad(set_to_none=True)
                for p, g in zip(params, grads):
                    p.grad = g
                optimizer.step()
            with torch.no_grad():
                epoch_losses.append(float(loss) * images_t.shape[0])
                counts = counts + _batch_metrics(ba_probs.detach(), ba_t, valid_t)

        train_loss = float(np.sum(epoch_losses) / len(train_set))
        train_dice, train_iou = _counts_dice_iou(counts)
        val_loss, val_dice, val_iou = evaluate_dataset(
            model, val_set, loss_cfg, framework, train_cfg.batch_size
        )
        seconds = time.perf_counter() - t0
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=train_loss,
                train_dice=train_dice,
                train_iou=train_iou,
                val_loss=val_loss,
                val_dice=val_dice,
                val_iou=val_iou,
                seconds=seconds,
            )
        )
        if val_dice >= best_val_dice:
            best_val_dice = val_dice
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())

    return TrainResult(
        history=history,
        best_state=best_state,
        best_epoch=best_epoch,
        best_val_dice=best_val_dice,
        skipped_steps=total_skips,
    )


HISTORY_COLUMNS = ["epoch", "split", "dice", "iou", "loss", "seconds"]


def write_history_csv(history: Sequence[EpochStats], path: str | Path) -> None:
    """Two rows per epoch (train and val); seconds is per-epoch wall clock."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for s in history:
            writer.writerow(
                [s.epoch, "train", f"{s.train_dice:.6f}", f"{s.train_iou:.6f}",
                 f"{s.train_loss:.6f}", f"{s.seconds:.3f}"]
            )
            writer.writerow(
                [s.epoch, "val", f"{s.val_dice:.6f}", f"{s.val_iou:.6f}",
                 f"{s.val_loss:.6f}", f"{s.seconds:.3f}"]
            )
