"""Command-line entry point chaining the workflow stages.

    burnseg synth    --config cfg.yaml    generate synthetic scenes
    burnseg prepare  --config cfg.yaml    rasterize, mask, resample, patchify
    burnseg split    --config cfg.yaml    block-wise train/val/test split
    burnseg train    --config cfg.yaml    fit the model, save checkpoint+history
    burnseg predict  --config cfg.yaml    TTA inference and mosaicked maps
    burnseg evaluate --config cfg.yaml    Dice/IoU/time report CSV

Every command reads the same config file; ``--seed N`` overrides the
running stage's seed. Artifacts live under the configured run directory
with a manifest recording the config hash and tool version. On failure
the exit code is nonzero and stderr carries a machine-readable error
category.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .blocksplit import (
    Split,
    assign_patches,
    assign_splits,
    build_block_grid,
    load_split,
    save_split,
    split_indices,
)
from .config import PipelineConfig, load_config
from .errors import BurnsegError, RasterIOError
from .io import read_raster, read_vector, write_raster
from .losses import LossConfig, default_lambda_lc
from .metrics import evaluate_run, write_report_csv
from .models import (
    ModelConfig,
    build_model,
    drop_lc_head,
    load_backbone_weights,
    load_checkpoint,
    save_checkpoint,
)
from .patching import PatchSpec, load_patchset, patchify, save_patchset
from .raster import (
    LandCoverScheme,
    RasterKind,
    apply_lc_scheme,
    binarize_delineation,
    clip_to_aoi,
    resample_nearest,
    subtract_cloud,
)
from .synth import SynthConfig, generate_scene, write_scene
from .train import (
    SegmentationDataset,
    TrainConfig,
    dataset_from_patchsets,
    default_learning_rate,
    evaluate_dataset,
    train,
    write_history_csv,
)
from .losses import Framework
from .tta import TtaConfig, predict_scene


def _scene_dirs(cfg: PipelineConfig, role: str) -> list[Path]:
    base = cfg.run_dir / "scenes"
    return sorted(base.glob(f"{role}_*"))


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise RasterIOError(f"missing {what}: {path}")
    return path


def _update_manifest(cfg: PipelineConfig, command: str, seed_override) -> None:
    path = cfg.run_dir / "manifest.json"
    manifest = {"tool": "burnseg", "version": __version__, "commands": []}
    if path.exists():
        manifest = json.loads(path.read_text())
    manifest["version"] = __version__
    manifest["config_sha256"] = cfg.source_sha256
    manifest.setdefault("commands", []).append(
        {
            "command": command,
            "seed_override": seed_override,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        }
    )
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))


def cmd_synth(cfg: PipelineConfig, seed: int | None = None) -> None:
    """Generate train_* and predict_* scene bundles under scenes/."""
    s = cfg.synth
    base_seed = s.seed if seed is None else seed
    synth_cfg = SynthConfig(
        scene_size=s.scene_size,
        pixel_size=s.pixel_size,
        lc_pixel_size=s.lc_pixel_size,
        crs_id=s.crs_id,
        num_scars=s.num_scars,
        scar_radius=s.scar_radius,
        num_clouds=s.num_clouds,
        cloud_radius=s.cloud_radius,
        burned_fraction_range=s.burned_fraction_range,
        num_lc_regions=s.num_lc_regions,
        noise_sigma=s.noise_sigma,
    )
    side = s.scene_size * s.pixel_size + 10 * s.pixel_size
    roles = ["train"] * s.num_train_scenes + ["predict"] * s.num_predict_scenes
    counters = {"train": 0, "predict": 0}
    for i, role in enumerate(roles):
        origin = (synth_cfg.origin[0] + i * side, synth_cfg.origin[1])
        bundle = generate_scene(synth_cfg, base_seed + 1000 * i, origin=origin)
        name = f"{role}_{counters[role]:03d}"
        counters[role] += 1
        write_scene(bundle, cfg.run_dir / "scenes" / name)


def _prepare_scene(cfg: PipelineConfig, scene_dir: Path, overlap: float) -> None:
    image = read_raster(scene_dir / "image.tif", kind=RasterKind.IMAGE)
    cloud = read_raster(scene_dir / "cloud.tif", kind=RasterKind.BINARY_MASK)
    lc = read_raster(scene_dir / "lc.tif", kind=RasterKind.CATEGORY_MAP)
    ba_polys, ba_crs = read_vector(scene_dir / "ba.geojson")
    aoi, aoi_crs = read_vector(scene_dir / "aoi.geojson")

    ba = binarize_delineation(ba_polys, image, polygons_crs=ba_crs)
    ba = subtract_cloud(ba, cloud)
    lc_fine = resample_nearest(lc, image.transform, image.width, image.height)
    lc_idx = apply_lc_scheme(lc_fine, cloud, LandCoverScheme.worldcover())

    image_c = clip_to_aoi(image, aoi, aoi_crs=aoi_crs)
    ba_c = clip_to_aoi(ba, aoi, aoi_crs=aoi_crs)
    lc_c = clip_to_aoi(lc_idx, aoi, aoi_crs=aoi_crs)
    cloud_c = clip_to_aoi(cloud, aoi, aoi_crs=aoi_crs)

    out = cfg.run_dir / "prepared" / scene_dir.name
    out.mkdir(parents=True, exist_ok=True)
    write_raster(ba_c, out / "ba.tif")
    write_raster(cloud_c, out / "cloud.tif")
    spec = PatchSpec(
        patch_size=cfg.prepare.patch_size,
        overlap_fraction=overlap,
        pad_value=cfg.prepare.pad_value,
    )
    save_patchset(patchify(image_c, spec), out / "image")
    save_patchset(patchify(ba_c, spec), out / "ba")
    save_patchset(patchify(lc_c, spec), out / "lc")


def cmd_prepare(cfg: PipelineConfig, seed: int | None = None) -> None:
    """Binarize, cloud-subtract, resample, clip and patchify every scene."""
    train_dirs = _scene_dirs(cfg, "train")
    predict_dirs = _scene_dirs(cfg, "predict")
    if not train_dirs and not predict_dirs:
        raise RasterIOError(f"no scenes under {cfg.run_dir / 'scenes'}")
    for scene_dir in train_dirs + predict_dirs:
        for name in ("image.tif", "cloud.tif", "lc.tif", "ba.geojson", "aoi.geojson"):
            _require(scene_dir / name, f"input for {scene_dir.name}")
    for scene_dir in train_dirs:
        _prepare_scene(cfg, scene_dir, cfg.prepare.train_overlap)
    for scene_dir in predict_dirs:
        _prepare_scene(cfg, scene_dir, cfg.prepare.predict_overlap)


def cmd_split(cfg: PipelineConfig, seed: int | None = None) -> None:
    """Block-split each training scene and report burned fractions."""
    base_seed = cfg.split.seed if seed is None else seed
    out_dir = cfg.run_dir / "splits"
    out_dir.mkdir(parents=True, exist_ok=True)
    train_dirs = _scene_dirs(cfg, "train")
    if not train_dirs:
        raise RasterIOError("no prepared training scenes to split")
    for i, scene_dir in enumerate(train_dirs):
        prepared = _require(
            cfg.run_dir / "prepared" / scene_dir.name, "prepared scene"
        )
        aoi, _ = read_vector(scene_dir / "aoi.geojson")
        images = load_patchset(prepared / "image")
        ba = load_patchset(prepared / "ba")
        grid = build_block_grid(aoi, cfg.split.block_size, aoi_id=scene_dir.name)
        assignment = assign_splits(grid, cfg.split.fractions, base_seed + i)
        assignment = assign_patches(images, grid, assignment)
        fractions = {}
        for split in Split:
            idx = split_indices(assignment, split)
            if not idx:
                fractions[split.value] = float("nan")
                continue
            burned = valid = 0
            for j in idx:
                vals = ba.patches[j].values[0]
                keep = ba.patches[j].valid_mask()
                burned += int((vals[keep] == 1).sum())
                valid += int(keep.sum())
            fractions[split.value] = burned / valid if valid else float("nan")
        save_split(
            assignment, grid, out_dir / f"{scene_dir.name}.json",
            burned_fractions=fractions,
        )


def _model_config(cfg: PipelineConfig) -> ModelConfig:
    m = cfg.model
    return ModelConfig(
        architecture=m.architecture,
        in_channels=m.in_channels,
        num_lc_classes=m.num_lc_classes,
        width_scale=m.width_scale,
        with_lc_head=m.with_lc_head,
    )


def _concat_datasets(parts: list[SegmentationDataset]) -> SegmentationDataset:
    return SegmentationDataset(
        images=torch.cat([p.images for p in parts]),
        ba=torch.cat([p.ba for p in parts]),
        lc=(
            torch.cat([p.lc for p in parts])
            if all(p.lc is not None for p in parts)
            else None
        ),
        valid=torch.cat([p.valid for p in parts]),
    )


def _load_split_datasets(
    cfg: PipelineConfig, with_lc: bool
) -> dict[Split, SegmentationDataset | None]:
    parts: dict[Split, list[SegmentationDataset]] = {s: [] for s in Split}
    for scene_dir in _scene_dirs(cfg, "train"):
        prepared = _require(cfg.run_dir / "prepared" / scene_dir.name, "prepared scene")
        split_file = _require(
            cfg.run_dir / "splits" / f"{scene_dir.name}.json", "split file"
        )
        assignment, _ = load_split(split_file)
        images = load_patchset(prepared / "image")
        ba = load_patchset(prepared / "ba")
        lc = load_patchset(prepared / "lc") if with_lc else None
        for split in Split:
            idx = split_indices(assignment, split)
            if idx:
                parts[split].append(dataset_from_patchsets(images, ba, lc, idx))
    return {
        s: _concat_datasets(p) if p else None for s, p in parts.items()
    }


def cmd_train(cfg: PipelineConfig, seed: int | None = None) -> None:
    """Fit the configured model; write checkpoint and history CSV."""
    t = cfg.train
    model_cfg = _model_config(cfg)
    datasets = _load_split_datasets(cfg, with_lc=model_cfg.with_lc_head)
    train_set = datasets[Split.TRAIN]
    val_set = datasets[Split.VAL] or train_set
    train_cfg = TrainConfig(
        batch_size=t.batch_size,
        learning_rate=(
            t.learning_rate
            if t.learning_rate is not None
            else default_learning_rate(cfg.model.architecture)
        ),
        weight_decay=t.weight_decay,
        epochs=t.epochs,
        aug_probability=t.aug_probability,
        seed=t.seed if seed is None else seed,
        mixed_precision=t.mixed_precision,
    )
    loss_cfg = LossConfig(
        lambda_lc=(
            t.lambda_lc
            if t.lambda_lc is not None
            else default_lambda_lc(cfg.model.architecture)
        ),
        dice_smooth=t.dice_smooth,
    )
    model = build_model(model_cfg, seed=cfg.model.init_seed)
    if cfg.model.pretrained_weights:
        load_backbone_weights(model, cfg.model.pretrained_weights)
    result = train(model, train_set, val_set, train_cfg, loss_cfg)
    model.load_state_dict(result.best_state)

    extra = {
        "best_epoch": result.best_epoch,
        "best_val_dice": result.best_val_dice,
        "skipped_steps": result.skipped_steps,
        "seed": train_cfg.seed,
    }
    if datasets[Split.TEST] is not None:
        framework = Framework.MTL if model_cfg.with_lc_head else Framework.STL
        _, test_dice, test_iou = evaluate_dataset(
            model, datasets[Split.TEST], loss_cfg, framework, t.batch_size
        )
        extra["test_dice"] = test_dice
        extra["test_iou"] = test_iou
    out = cfg.run_dir / "train"
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "checkpoint.pt", extra=extra)
    write_history_csv(result.history, out / "history.csv")


def cmd_predict(cfg: PipelineConfig, seed: int | None = None) -> None:
    """Run TTA inference on every prediction scene; write maps + report."""
    checkpoint = _require(cfg.run_dir / "train" / "checkpoint.pt", "checkpoint")
    model, _ = load_checkpoint(checkpoint)
    if model.config.with_lc_head:
        model = drop_lc_head(model)  # auxiliary head is a training aid only
    tta = TtaConfig(
        transforms=cfg.predict.tta_transforms,
        enabled=cfg.predict.tta_enabled,
        threshold=cfg.predict.threshold,
    )
    predict_dirs = _scene_dirs(cfg, "predict")
    if not predict_dirs:
        raise RasterIOError("no prediction scenes")
    for scene_dir in predict_dirs:
        prepared = _require(cfg.run_dir / "prepared" / scene_dir.name, "prepared scene")
        images = load_patchset(prepared / "image")
        run = predict_scene(model, images, tta, cfg.predict.mixed_precision)
        out = cfg.run_dir / "predict" / scene_dir.name
        out.mkdir(parents=True, exist_ok=True)
        write_raster(run.probability_map, out / "probability.tif")
        write_raster(run.binary_map, out / "binary.tif")
        report = {
            "wall_clock_seconds": run.wall_clock_seconds,
            "inference_minutes": run.wall_clock_seconds / 60.0,
            "patches_processed": run.patches_processed,
            "model_invocations": run.model_invocations,
            "tta_enabled": tta.enabled,
            "tta_transforms": list(tta.active_transforms),
            "threshold": tta.threshold,
            "mixed_precision": cfg.predict.mixed_precision,
        }
        (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))


def _labels(cfg: PipelineConfig) -> tuple[str, str, str]:
    e = cfg.evaluate
    framework = e.framework_label or (
        "MTL" if cfg.model.with_lc_head else "STL"
    )
    model = e.model_label or (
        "UNet-RN34" if "unet" in cfg.model.architecture else "SegFormer-B2"
    )
    if e.technique_label is not None:
        technique = e.technique_label
    else:
        parts = []
        if cfg.predict.tta_enabled:
            parts.append("TTA")
        if cfg.predict.mixed_precision:
            parts.append("MP")
        technique = "+".join(parts) if parts else "None"
    return framework, model, technique


def cmd_evaluate(cfg: PipelineConfig, seed: int | None = None) -> None:
    """Score predictions against prepared ground truth; write report CSV."""
    framework, model_label, technique = _labels(cfg)
    reports = []
    predict_dirs = _scene_dirs(cfg, "predict")
    if not predict_dirs:
        raise RasterIOError("no prediction scenes")
    for scene_dir in predict_dirs:
        pred_dir = _require(cfg.run_dir / "predict" / scene_dir.name, "prediction")
        prepared = _require(cfg.run_dir / "prepared" / scene_dir.name, "prepared scene")
        binary = read_raster(pred_dir / "binary.tif", kind=RasterKind.BINARY_MASK)
        truth = read_raster(prepared / "ba.tif", kind=RasterKind.BINARY_MASK)
        cloud = read_raster(prepared / "cloud.tif", kind=RasterKind.BINARY_MASK)
        timing = json.loads((pred_dir / "report.json").read_text())
        report = evaluate_run(
            binary,
            truth,
            framework=framework,
            model=model_label,
            technique=technique,
            valid=(cloud.values[0] != 1) & cloud.valid_mask(),
        )
        reports.append(
            dataclasses.replace(
                report, inference_minutes=timing["inference_minutes"]
            )
        )
    out = cfg.run_dir / "evaluate"
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(reports, out / "report.csv")


_COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "split": cmd_split,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="burnseg",
        description="Burned-area delineation pipeline",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="pipeline config YAML")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the running stage's seed")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg.run_dir.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](cfg, seed=args.seed)
        _update_manifest(cfg, args.command, args.seed)
    except BurnsegError as exc:
        print(
            json.dumps({"error": exc.code, "message": str(exc)}),
            file=sys.stderr,
        )
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
