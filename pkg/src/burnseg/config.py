"""Pipeline configuration: one YAML file, stage-scoped sections.

Unknown keys are rejected everywhere so typos fail loudly before any
stage runs. A single file drives every command, which keeps full runs
reproducible; the CLI records the file's hash in the run manifest.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import BadConfigError

CONFIG_VERSION = 1


def _coerce_pair(value, name: str) -> tuple:
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return tuple(value)
    raise BadConfigError(f"{name} must be a pair, got {value!r}")


@dataclass(frozen=True)
class SynthSection:
    seed: int = 7
    num_train_scenes: int = 2
    num_predict_scenes: int = 1
    scene_size: int = 320
    pixel_size: float = 1.5
    lc_pixel_size: float = 10.0
    crs_id: str = "EPSG:32634"
    num_scars: tuple = (2, 5)
    scar_radius: tuple = (16.0, 48.0)
    num_clouds: tuple = (1, 2)
    cloud_radius: tuple = (10.0, 22.0)
    burned_fraction_range: tuple = (0.02, 0.40)
    num_lc_regions: int = 6
    noise_sigma: float = 0.015

    def __post_init__(self) -> None:
        for name in ("num_scars", "scar_radius", "num_clouds", "cloud_radius",
                     "burned_fraction_range"):
            object.__setattr__(self, name, _coerce_pair(getattr(self, name), name))
        if self.num_train_scenes < 1 or self.num_predict_scenes < 0:
            raise BadConfigError("need at least one training scene")


@dataclass(frozen=True)
class PrepareSection:
    patch_size: int = 64
    train_overlap: float = 0.0
    predict_overlap: float = 0.2
    pad_value: float = 0.0


@dataclass(frozen=True)
class SplitSection:
    block_size: float = 192.0
    fractions: tuple = (0.7, 0.2, 0.1)
    seed: int = 11

    def __post_init__(self) -> None:
        fr = self.fractions
        if not (isinstance(fr, (list, tuple)) and len(fr) == 3):
            raise BadConfigError("fractions must be a [train, val, test] triple")
        object.__setattr__(self, "fractions", tuple(float(f) for f in fr))


@dataclass(frozen=True)
class ModelSection:
    architecture: str = "unet_rn34"
    width_scale: float = 0.1
    with_lc_head: bool = True
    num_lc_classes: int = 12
    in_channels: int = 4
    init_seed: int = 0
    pretrained_weights: str | None = None


@dataclass(frozen=True)
class TrainSection:
    batch_size: int = 8
    learning_rate: float | None = None   # None -> per-architecture default
    weight_decay: float = 1e-4
    epochs: int = 20
    aug_probability: float = 0.5
    seed: int = 3
    mixed_precision: bool = False
    lambda_lc: float | None = None       # None -> per-architecture default
    dice_smooth: float = 1.0


@dataclass(frozen=True)
class PredictSection:
    tta_enabled: bool = True
    tta_transforms: tuple = (
        "identity", "rot90", "rot180", "rot270",
        "hflip", "vflip", "transpose", "anti_transpose",
    )
    threshold: float = 0.5
    mixed_precision: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "tta_transforms", tuple(self.tta_transforms))


@dataclass(frozen=True)
class EvaluateSection:
    framework_label: str | None = None   # None -> STL/MTL from model section
    model_label: str | None = None       # None -> from architecture
    technique_label: str | None = None   # None -> from predict section


_SECTIONS = {
    "synth": SynthSection,
    "prepare": PrepareSection,
    "split": SplitSection,
    "model": ModelSection,
    "train": TrainSection,
    "predict": PredictSection,
    "evaluate": EvaluateSection,
}


@dataclass(frozen=True)
class PipelineConfig:
    run_dir: Path
    version: int = CONFIG_VERSION
    synth: SynthSection = field(default_factory=SynthSection)
    prepare: PrepareSection = field(default_factory=PrepareSection)
    split: SplitSection = field(default_factory=SplitSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    predict: PredictSection = field(default_factory=PredictSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    source_sha256: str = ""


def _build_section(cls, data, name: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise BadConfigError(f"section '{name}' must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise BadConfigError(f"unknown key(s) {unknown} in section '{name}'")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise BadConfigError(f"bad section '{name}': {exc}") from exc


def config_from_mapping(data: dict, source_sha256: str = "") -> PipelineConfig:
    if not isinstance(data, dict):
        raise BadConfigError("config root must be a mapping")
    known = set(_SECTIONS) | {"run_dir", "version"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise BadConfigError(f"unknown top-level key(s) {unknown}")
    if "run_dir" not in data:
        raise BadConfigError("config requires run_dir")
    version = data.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise BadConfigError(f"unsupported config version {version}")
    sections = {
        name: _build_section(cls, data.get(name), name)
        for name, cls in _SECTIONS.items()
    }
    return PipelineConfig(
        run_dir=Path(data["run_dir"]),
        version=version,
        source_sha256=source_sha256,
        **sections,
    )


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise BadConfigError(f"no config file at {path}")
    raw = path.read_bytes()
    data = yaml.safe_load(raw)
    return config_from_mapping(data, source_sha256=hashlib.sha256(raw).hexdigest())
