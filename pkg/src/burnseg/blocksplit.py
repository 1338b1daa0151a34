"""Block-wise train/validation/test splitting of patches.

An AOI is covered by axis-aligned square blocks anchored at its bounding
box; blocks are shuffled by a portable PRNG and partitioned by largest
remainder apportionment, and every patch inherits the split of the block
containing its center. Patches whose centers share a block always share a
split, which keeps the sets spatially independent.

Reproducibility is guaranteed by a fully specified generator: block order
comes from a Fisher-Yates shuffle driven by the SplitMix64 sequence
(Steele et al.'s finalizer; state advances by 0x9E3779B97F4A7C15, the
draw at position i selects ``index j = z_i mod (i + 1)``). The same seed
gives the same assignment on any platform.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from shapely.geometry import box
from shapely.geometry.base import BaseGeometry

from .errors import BadFractionsError, EmptyAoiError, RasterIOError
from .patching import PatchSet


class Split(enum.Enum):
    TRAIN = "TRAIN"
    VAL = "VAL"
    TEST = "TEST"


_M64 = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _M64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return state, z ^ (z >> 31)


def _shuffle(items: list, seed: int) -> list:
    """Deterministic Fisher-Yates shuffle on a copy of items."""
    out = list(items)
    state = seed & _M64
    for i in range(len(out) - 1, 0, -1):
        state, z = _splitmix64(state)
        j = z % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


def largest_remainder_counts(fractions: tuple[float, ...], total: int) -> list[int]:
    """Apportion ``total`` items to fractions by the largest-remainder rule.

    Remainder ties break toward the earlier fraction, so the result is
    deterministic.
    """
    raw = [f * total for f in fractions]
    counts = [math.floor(r) for r in raw]
    leftover = total - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


@dataclass(frozen=True)
class BlockGrid:
    """Axis-aligned square blocks covering (and clipped to) one AOI.

    ``blocks`` maps block_id -> (minx, miny, maxx, maxy). Block ids encode
    the grid position so dropped blocks leave gaps in the id sequence.
    """

    block_size: float
    blocks: dict[int, tuple[float, float, float, float]]
    aoi_id: str
    anchor: tuple[float, float]
    n_cols: int

    def block_id_at(self, x: float, y: float) -> int | None:
        """Id of the block containing (x, y) under half-open [min, max)
        intervals, or None if the point falls outside every kept block."""
        col = math.floor((x - self.anchor[0]) / self.block_size)
        row = math.floor((y - self.anchor[1]) / self.block_size)
        if col < 0 or row < 0 or col >= self.n_cols:
            return None
        block_id = row * self.n_cols + col
        return block_id if block_id in self.blocks else None


def build_block_grid(
    aoi: BaseGeometry, block_size: float = 2000.0, aoi_id: str = "aoi"
) -> BlockGrid:
    """Cover the AOI bounding box with blocks, dropping the ones that do
    not intersect the AOI itself."""
    if aoi.is_empty:
        raise EmptyAoiError("AOI geometry is empty")
    minx, miny, maxx, maxy = aoi.bounds
    n_cols = max(1, math.ceil((maxx - minx) / block_size))
    n_rows = max(1, math.ceil((maxy - miny) / block_size))
    blocks: dict[int, tuple[float, float, float, float]] = {}
    for row in range(n_rows):
        for col in range(n_cols):
            bbox = (
                minx + col * block_size,
                miny + row * block_size,
                minx + (col + 1) * block_size,
                miny + (row + 1) * block_size,
            )
            if aoi.intersects(box(*bbox)):
                blocks[row * n_cols + col] = bbox
    return BlockGrid(
        block_size=block_size,
        blocks=blocks,
        aoi_id=aoi_id,
        anchor=(minx, miny),
        n_cols=n_cols,
    )


@dataclass(frozen=True)
class SplitAssignment:
    """Blocks (and, once assigned, patches) mapped to their split."""

    fractions: tuple[float, float, float]
    seed: int
    block_to_split: dict[int, Split]
    patch_to_split: dict[int, Split] = field(default_factory=dict)
    excluded_patches: tuple[int, ...] = ()


def assign_splits(
    grid: BlockGrid,
    fractions: tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> SplitAssignment:
    """Randomly partition blocks into train/val/test.

    Blocks are shuffled deterministically from ``seed`` and cut at the
    largest-remainder counts for ``fractions``, so per-split block counts
    are exact and the assignment reproduces bitwise on every run.
    """
    if any(f < 0 or f > 1 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractionsError(f"fractions must sum to 1, got {fractions}")
    ids = _shuffle(sorted(grid.blocks), seed)
    n_train, n_val, _ = largest_remainder_counts(tuple(fractions), len(ids))
    block_to_split = {}
    for pos, block_id in enumerate(ids):
        if pos < n_train:
            block_to_split[block_id] = Split.TRAIN
        elif pos < n_train + n_val:
            block_to_split[block_id] = Split.VAL
        else:
            block_to_split[block_id] = Split.TEST
    return SplitAssignment(
        fractions=tuple(fractions), seed=seed, block_to_split=block_to_split
    )


def assign_patches(
    patchset: PatchSet, grid: BlockGrid, assignment: SplitAssignment
) -> SplitAssignment:
    """Map every patch to the split of the block containing its center.

    Patch centers are taken in map coordinates via the source transform.
    Patches whose center falls outside all kept blocks are excluded and
    reported in ``excluded_patches``.
    """
    tf = patchset.source_transform
    half = patchset.spec.patch_size / 2.0
    patch_to_split: dict[int, Split] = {}
    excluded: list[int] = []
    for i, (ro, co) in enumerate(patchset.placements):
        x = tf.origin_x + (co + half) * tf.pixel_size_x
        y = tf.origin_y - (ro + half) * tf.pixel_size_y
        block_id = grid.block_id_at(x, y)
        if block_id is None:
            excluded.append(i)
        else:
            patch_to_split[i] = assignment.block_to_split[block_id]
    return replace(
        assignment,
        patch_to_split=patch_to_split,
        excluded_patches=tuple(excluded),
    )


def split_indices(assignment: SplitAssignment, split: Split) -> list[int]:
    return sorted(i for i, s in assignment.patch_to_split.items() if s is split)


# ---------------------------------------------------------------------------
# Persistence


def save_split(
    assignment: SplitAssignment, grid: BlockGrid, path: str | Path,
    burned_fractions: dict[str, float] | None = None,
) -> None:
    payload = {
        "format_version": 1,
        "aoi_id": grid.aoi_id,
        "seed": assignment.seed,
        "fractions": list(assignment.fractions),
        "block_size": grid.block_size,
        "anchor": list(grid.anchor),
        "n_cols": grid.n_cols,
        "blocks": [
            {
                "id": block_id,
                "bbox": list(grid.blocks[block_id]),
                "split": assignment.block_to_split[block_id].value,
            }
            for block_id in sorted(grid.blocks)
        ],
        "patches": {
            str(i): s.value for i, s in sorted(assignment.patch_to_split.items())
        },
        "excluded_patches": list(assignment.excluded_patches),
    }
    if burned_fractions is not None:
        payload["burned_fractions"] = burned_fractions
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def load_split(path: str | Path) -> tuple[SplitAssignment, BlockGrid]:
    path = Path(path)
    if not path.exists():
        raise RasterIOError(f"no split file at {path}")
    with open(path) as fh:
        payload = json.load(fh)
    grid = BlockGrid(
        block_size=payload["block_size"],
        blocks={b["id"]: tuple(b["bbox"]) for b in payload["blocks"]},
        aoi_id=payload["aoi_id"],
        anchor=tuple(payload["anchor"]),
        n_cols=payload["n_cols"],
    )
    assignment = SplitAssignment(
        fractions=tuple(payload["fractions"]),
        seed=payload["seed"],
        block_to_split={b["id"]: Split(b["split"]) for b in payload["blocks"]},
        patch_to_split={int(i): Split(s) for i, s in payload["patches"].items()},
        excluded_patches=tuple(payload["excluded_patches"]),
    )
    return assignment, grid
