"""Fixed-size patch extraction and overlap-averaged mosaicking.

Scenes are tiled into patch_size x patch_size windows on a regular stride;
the last window along each axis is shifted inward to end exactly at the
raster border, so no pixels are synthesized unless the scene is smaller
than one patch (then a single padded patch is produced). Mosaicking puts
per-patch probability maps back together, averaging where windows overlap
and ignoring padded regions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptySetError, RasterIOError
from .raster import GeoTransform, RasterGrid, RasterKind


@dataclass(frozen=True)
class PatchSpec:
    """Tiling parameters. overlap_fraction 0.0 suits training scenes,
    0.2 prediction scenes that will be mosaicked."""

    patch_size: int = 512
    overlap_fraction: float = 0.0
    pad_value: float = 0.0

    def __post_init__(self) -> None:
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        if not (0.0 <= self.overlap_fraction < 1.0):
            raise ValueError("overlap_fraction must lie in [0, 1)")

    @property
    def stride(self) -> int:
        return max(1, math.floor(self.patch_size * (1.0 - self.overlap_fraction)))


@dataclass(frozen=True)
class PatchSet:
    """Ordered patches plus the placement index enabling exact mosaicking.

    ``placements[i]`` is the (row_offset, col_offset) of patch i in source
    pixel coordinates. Padding exists only when the source is smaller than
    one patch; a patch pixel (r, c) at placement (ro, co) is real iff
    ro + r < source_height and co + c < source_width.
    """

    patches: tuple[RasterGrid, ...]
    placements: tuple[tuple[int, int], ...]
    source_width: int
    source_height: int
    spec: PatchSpec
    source_transform: GeoTransform
    kind: RasterKind

    def __post_init__(self) -> None:
        if len(self.patches) != len(self.placements):
            raise ValueError("patches and placements must have equal length")
        if len(set(self.placements)) != len(self.placements):
            raise ValueError("placements must be unique")
        for ro, co in self.placements:
            if ro < 0 or co < 0:
                raise ValueError("placements must be non-negative")

    def __len__(self) -> int:
        return len(self.patches)


def _axis_offsets(size: int, patch: int, stride: int) -> list[int]:
    """Window offsets along one axis: stride grid, last window snapped to
    the border; a single offset 0 when the axis fits in one patch."""
    if size <= patch:
        return [0]
    offsets = list(range(0, size - patch + 1, stride))
    if offsets[-1] != size - patch:
        offsets.append(size - patch)
    return offsets


def patchify(raster: RasterGrid, spec: PatchSpec) -> PatchSet:
    """Tile a raster into patches. Every source pixel is covered by at
    least one patch; identical inputs always yield identical placements."""
    ps = spec.patch_size
    rows = _axis_offsets(raster.height, ps, spec.stride)
    cols = _axis_offsets(raster.width, ps, spec.stride)
    patches: list[RasterGrid] = []
    placements: list[tuple[int, int]] = []
    for ro in rows:
        for co in cols:
            window = raster.values[:, ro: ro + ps, co: co + ps]
            if window.shape[1] < ps or window.shape[2] < ps:
                padded = np.full(
                    (raster.bands, ps, ps), spec.pad_value, dtype=raster.values.dtype
                )
                padded[:, : window.shape[1], : window.shape[2]] = window
                window = padded
            else:
                window = np.array(window)
            patches.append(
                RasterGrid(
                    window,
                    raster.transform.shifted(ro, co),
                    raster.kind,
                    nodata=raster.nodata,
                )
            )
            placements.append((ro, co))
    return PatchSet(
        patches=tuple(patches),
        placements=tuple(placements),
        source_width=raster.width,
        source_height=raster.height,
        spec=spec,
        source_transform=raster.transform,
        kind=raster.kind,
    )


def mosaic(predictions: PatchSet) -> RasterGrid:
    """Reassemble per-patch maps into one scene map.

    Each output pixel is the arithmetic mean of every patch value covering
    it; padded patch regions never contribute. Accumulation runs in
    float64 so that k identical float32 values average back to the exact
    input value.
    """
    if len(predictions) == 0:
        raise EmptySetError("cannot mosaic an empty patch set")
    bands = predictions.patches[0].bands
    h, w = predictions.source_height, predictions.source_width
    ps = predictions.spec.patch_size
    acc = np.zeros((bands, h, w), dtype=np.float64)
    count = np.zeros((h, w), dtype=np.float64)
    for patch, (ro, co) in zip(predictions.patches, predictions.placements):
        vr = min(ps, h - ro)
        vc = min(ps, w - co)
        if vr <= 0 or vc <= 0:
            continue
        acc[:, ro: ro + vr, co: co + vc] += patch.values[:, :vr, :vc]
        count[ro: ro + vr, co: co + vc] += 1.0
    covered = count > 0
    out = np.zeros((bands, h, w), dtype=np.float64)
    np.divide(acc, count, out=out, where=covered)
    return RasterGrid(
        out.astype(np.float32),
        predictions.source_transform,
        RasterKind.PROBABILITY_MAP,
    )


# ---------------------------------------------------------------------------
# Persistence: a directory of GeoTIFF patches plus a JSON sidecar index.

_INDEX_NAME = "index.json"


def save_patchset(patchset: PatchSet, directory: str | Path) -> None:
    from .io import write_raster

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, patch in enumerate(patchset.patches):
        name = f"patch_{i:05d}.tif"
        write_raster(patch, directory / name)
        files.append(name)
    tf = patchset.source_transform
    index = {
        "format_version": 1,
        "patch_size": patchset.spec.patch_size,
        "overlap_fraction": patchset.spec.overlap_fraction,
        "pad_value": patchset.spec.pad_value,
        "source_width": patchset.source_width,
        "source_height": patchset.source_height,
        "kind": patchset.kind.value,
        "source_transform": {
            "origin_x": tf.origin_x,
            "origin_y": tf.origin_y,
            "pixel_size_x": tf.pixel_size_x,
            "pixel_size_y": tf.pixel_size_y,
            "crs_id": tf.crs_id,
        },
        "placements": [list(p) for p in patchset.placements],
        "files": files,
    }
    with open(directory / _INDEX_NAME, "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)


def load_patchset(directory: str | Path) -> PatchSet:
    from .io import read_raster

    directory = Path(directory)
    index_path = directory / _INDEX_NAME
    if not index_path.exists():
        raise RasterIOError(f"no patch index at {index_path}")
    with open(index_path) as fh:
        index = json.load(fh)
    spec = PatchSpec(
        patch_size=index["patch_size"],
        overlap_fraction=index["overlap_fraction"],
        pad_value=index["pad_value"],
    )
    kind = RasterKind(index["kind"])
    patches = tuple(
        read_raster(directory / name, kind=kind) for name in index["files"]
    )
    return PatchSet(
        patches=patches,
        placements=tuple((r, c) for r, c in index["placements"]),
        source_width=index["source_width"],
        source_height=index["source_height"],
        spec=spec,
        source_transform=GeoTransform(**index["source_transform"]),
        kind=kind,
    )
