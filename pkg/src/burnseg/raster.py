"""Georeferenced raster data model and the preparation operations.

The :class:`RasterGrid` is the universal carrier for imagery, masks, land
cover maps and probability maps. All types here are immutable after
construction and all operations are pure functions, so they are safe to
call from concurrent workers.

No reprojection is performed anywhere: inputs must share a CRS and a
mismatch is a hard error. Rasterization uses the pixel-center rule with
boundary points counting as inside.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import shapely
from shapely.geometry import Polygon, box
from shapely.geometry.base import BaseGeometry
from shapely.ops import unary_union

from .errors import (
    CrsMismatchError,
    GridMismatchError,
    NoOverlapError,
    UnknownCodeError,
)

#: Nodata sentinel for mask and category rasters (clipping creates
#: out-of-AOI pixels that need one).
MASK_NODATA = 255


class RasterKind(enum.Enum):
    IMAGE = "IMAGE"
    BINARY_MASK = "BINARY_MASK"
    CATEGORY_MAP = "CATEGORY_MAP"
    PROBABILITY_MAP = "PROBABILITY_MAP"


@dataclass(frozen=True)
class GeoTransform:
    """Pixel-grid to map-coordinate mapping for a north-up raster.

    ``pixel_size_y`` is stored positive; the negative north-up convention
    is applied only at the GeoTIFF I/O boundary. The map origin is the
    outer corner of pixel (0, 0), i.e. the top-left corner of the raster.
    """

    origin_x: float
    origin_y: float
    pixel_size_x: float
    pixel_size_y: float
    crs_id: str

    def __post_init__(self) -> None:
        if not (self.pixel_size_x > 0 and self.pixel_size_y > 0):
            raise ValueError("pixel sizes must be positive")
        if not self.crs_id:
            raise ValueError("crs_id must be non-empty")

    def pixel_center(self, row: float, col: float) -> tuple[float, float]:
        """Map coordinates of the center of pixel (row, col)."""
        x = self.origin_x + (col + 0.5) * self.pixel_size_x
        y = self.origin_y - (row + 0.5) * self.pixel_size_y
        return x, y

    def shifted(self, row_offset: int, col_offset: int) -> "GeoTransform":
        """Transform for a window whose top-left pixel is (row_offset, col_offset)."""
        return GeoTransform(
            origin_x=self.origin_x + col_offset * self.pixel_size_x,
            origin_y=self.origin_y - row_offset * self.pixel_size_y,
            pixel_size_x=self.pixel_size_x,
            pixel_size_y=self.pixel_size_y,
            crs_id=self.crs_id,
        )


@dataclass(frozen=True)
class RasterGrid:
    """A band-major (bands, height, width) pixel grid with georeferencing.

    Values are frozen (the backing array is marked read-only); operations
    return new grids. ``nodata`` pixels are exempt from the per-kind value
    constraints.
    """

    values: np.ndarray
    transform: GeoTransform
    kind: RasterKind
    nodata: float | int | None = None

    def __post_init__(self) -> None:
        vals = np.asarray(self.values)
        if vals.ndim == 2:
            vals = vals[np.newaxis]
        if vals.ndim != 3:
            raise ValueError(f"values must be 2D or 3D, got ndim={vals.ndim}")
        if vals.size == 0:
            raise ValueError("raster must be non-empty")
        _check_kind_values(vals, self.kind, self.nodata)
        vals = vals.copy() if not vals.flags.owndata else vals
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(minx, miny, maxx, maxy) of the raster footprint in map units."""
        tf = self.transform
        return (
            tf.origin_x,
            tf.origin_y - self.height * tf.pixel_size_y,
            tf.origin_x + self.width * tf.pixel_size_x,
            tf.origin_y,
        )

    def center_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """1D arrays of pixel-center x (per column) and y (per row)."""
        tf = self.transform
        xs = tf.origin_x + (np.arange(self.width) + 0.5) * tf.pixel_size_x
        ys = tf.origin_y - (np.arange(self.height) + 0.5) * tf.pixel_size_y
        return xs, ys

    def valid_mask(self) -> np.ndarray:
        """Boolean (height, width) mask of pixels not equal to nodata (band 0)."""
        if self.nodata is None:
            return np.ones((self.height, self.width), dtype=bool)
        band = self.values[0]
        if isinstance(self.nodata, float) and math.isnan(self.nodata):
            return ~np.isnan(band)
        return band != self.nodata


def _check_kind_values(vals: np.ndarray, kind: RasterKind, nodata) -> None:
    if kind is RasterKind.BINARY_MASK:
        ok = np.isin(vals, (0, 1))
        if nodata is not None:
            ok |= vals == nodata
        if not ok.all():
            raise ValueError("BINARY_MASK values must be 0 or 1 (or nodata)")
    elif kind is RasterKind.PROBABILITY_MAP:
        with np.errstate(invalid="ignore"):
            ok = (vals >= 0) & (vals <= 1)
        if nodata is not None:
            if isinstance(nodata, float) and math.isnan(nodata):
                ok |= np.isnan(vals)
            else:
                ok |= vals == nodata
        if not ok.all():
            raise ValueError("PROBABILITY_MAP values must lie in [0, 1] (or nodata)")
    elif kind is RasterKind.CATEGORY_MAP:
        if not np.issubdtype(vals.dtype, np.integer):
            raise ValueError("CATEGORY_MAP requires an integer dtype")
        if (vals < 0).any():
            raise ValueError("CATEGORY_MAP values must be non-negative")


def grids_aligned(a: RasterGrid, b: RasterGrid) -> bool:
    return (
        a.width == b.width
        and a.height == b.height
        and a.transform == b.transform
    )


def _require_aligned(a: RasterGrid, b: RasterGrid) -> None:
    if not grids_aligned(a, b):
        raise GridMismatchError(
            f"grid geometry mismatch: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def _default_nodata(raster: RasterGrid) -> float | int:
    if raster.kind in (RasterKind.BINARY_MASK, RasterKind.CATEGORY_MAP):
        return MASK_NODATA
    if np.issubdtype(raster.values.dtype, np.integer):
        return 0
    return float("nan")


@dataclass(frozen=True)
class LandCoverScheme:
    """Mapping from source land-cover codes to contiguous class indices.

    The last index is reserved for the cloud class that preparation adds
    on top of the land-cover legend.
    """

    code_to_index: Mapping[int, int] = field(
        default_factory=lambda: {
            10: 0, 20: 1, 30: 2, 40: 3, 50: 4, 60: 5,
            70: 6, 80: 7, 90: 8, 95: 9, 100: 10,
        }
    )
    cloud_index: int = 11
    num_classes: int = 12

    def __post_init__(self) -> None:
        indices = sorted(self.code_to_index.values())
        if indices != list(range(self.num_classes - 1)):
            raise ValueError(
                "code_to_index must be a bijection onto 0..num_classes-2"
            )
        if self.cloud_index != self.num_classes - 1:
            raise ValueError("cloud_index must equal num_classes - 1")

    @classmethod
    def worldcover(cls) -> "LandCoverScheme":
        """The 11-code ESA WorldCover legend plus a cloud class."""
        return cls()


def _as_geometry(polygons) -> BaseGeometry:
    if isinstance(polygons, BaseGeometry):
        return polygons
    geoms = list(polygons)
    if not geoms:
        return Polygon()
    return unary_union(geoms)


def _center_membership(
    geom: BaseGeometry, xs: np.ndarray, ys: np.ndarray
) -> np.ndarray:
    """(len(ys), len(xs)) bool grid of pixel centers inside the geometry.

    Boundary points count as inside. Only the columns/rows whose centers
    fall inside the geometry envelope are tested.
    """
    out = np.zeros((len(ys), len(xs)), dtype=bool)
    if geom.is_empty:
        return out
    minx, miny, maxx, maxy = geom.bounds
    ci = np.nonzero((xs >= minx) & (xs <= maxx))[0]
    ri = np.nonzero((ys >= miny) & (ys <= maxy))[0]
    if ci.size == 0 or ri.size == 0:
        return out
    gx, gy = np.meshgrid(xs[ci], ys[ri])
    shapely.prepare(geom)
    inside = shapely.intersects_xy(geom, gx.ravel(), gy.ravel())
    out[np.ix_(ri, ci)] = inside.reshape(len(ri), len(ci))
    return out


def clip_to_aoi(
    raster: RasterGrid,
    aoi: BaseGeometry,
    aoi_crs: str | None = None,
    nodata: float | int | None = None,
) -> RasterGrid:
    """Clip a raster to an AOI polygon.

    The output covers the pixel-aligned bounding box of the intersection
    between the AOI and the raster extent; pixels whose center falls
    outside the AOI are set to nodata.

    Raises:
        CrsMismatchError: aoi_crs given and different from the raster CRS.
        NoOverlapError: AOI and raster extent do not intersect.
    """
    tf = raster.transform
    if aoi_crs is not None and aoi_crs != tf.crs_id:
        raise CrsMismatchError(f"AOI CRS {aoi_crs!r} != raster CRS {tf.crs_id!r}")
    inter = aoi.intersection(box(*raster.extent))
    if inter.is_empty:
        raise NoOverlapError("AOI does not intersect the raster extent")

    minx, miny, maxx, maxy = inter.bounds
    col0 = max(0, math.floor((minx - tf.origin_x) / tf.pixel_size_x))
    col1 = min(raster.width, math.ceil((maxx - tf.origin_x) / tf.pixel_size_x))
    row0 = max(0, math.floor((tf.origin_y - maxy) / tf.pixel_size_y))
    row1 = min(raster.height, math.ceil((tf.origin_y - miny) / tf.pixel_size_y))
    if col1 <= col0 or row1 <= row0:
        raise NoOverlapError("AOI intersection is degenerate")

    window = np.array(raster.values[:, row0:row1, col0:col1])
    out_tf = tf.shifted(row0, col0)
    xs = out_tf.origin_x + (np.arange(col1 - col0) + 0.5) * tf.pixel_size_x
    ys = out_tf.origin_y - (np.arange(row1 - row0) + 0.5) * tf.pixel_size_y
    inside = _center_membership(aoi, xs, ys)
    if nodata is not None:
        fill = nodata
    elif raster.nodata is not None:
        fill = raster.nodata
    else:
        fill = _default_nodata(raster)
    if not inside.all():
        window[:, ~inside] = fill
        out_nodata = fill
    else:
        out_nodata = raster.nodata
    return RasterGrid(window, out_tf, raster.kind, nodata=out_nodata)


def binarize_delineation(
    polygons: BaseGeometry | Iterable[BaseGeometry],
    template: RasterGrid,
    polygons_crs: str | None = None,
) -> RasterGrid:
    """Rasterize delineation polygons onto the template grid.

    A pixel is 1 iff its center falls inside (or on the boundary of) any
    polygon. The output shares the template's grid geometry.
    """
    if polygons_crs is not None and polygons_crs != template.transform.crs_id:
        raise CrsMismatchError(
            f"polygon CRS {polygons_crs!r} != raster CRS {template.transform.crs_id!r}"
        )
    geom = _as_geometry(polygons)
    xs, ys = template.center_coords()
    inside = _center_membership(geom, xs, ys)
    return RasterGrid(
        inside.astype(np.uint8)[np.newaxis],
        template.transform,
        RasterKind.BINARY_MASK,
    )


def subtract_cloud(ba_mask: RasterGrid, cloud_mask: RasterGrid) -> RasterGrid:
    """Remove cloud pixels from a burned-area mask: out = ba AND NOT cloud."""
    _require_aligned(ba_mask, cloud_mask)
    ba = ba_mask.values[0]
    cloud = cloud_mask.values[0]
    out = np.where(cloud == 1, 0, ba).astype(ba.dtype)
    if ba_mask.nodata is not None:
        out = np.where(ba == ba_mask.nodata, ba_mask.nodata, out).astype(ba.dtype)
    return RasterGrid(
        out[np.newaxis], ba_mask.transform, RasterKind.BINARY_MASK,
        nodata=ba_mask.nodata,
    )


def resample_nearest(
    source: RasterGrid,
    target_transform: GeoTransform,
    width: int,
    height: int,
) -> RasterGrid:
    """Resample a category map to a target grid by nearest pixel center.

    Ties (a target center exactly equidistant between two source centers)
    break toward the smaller source index, row-major. Values are gathered,
    never interpolated, so no new category appears.
    """
    stf = source.transform
    if stf.crs_id != target_transform.crs_id:
        raise CrsMismatchError(
            f"source CRS {stf.crs_id!r} != target CRS {target_transform.crs_id!r}"
        )
    xs = target_transform.origin_x + (np.arange(width) + 0.5) * target_transform.pixel_size_x
    ys = target_transform.origin_y - (np.arange(height) + 0.5) * target_transform.pixel_size_y
    # Continuous source indices; center of source pixel k sits at k.
    tcol = (xs - stf.origin_x) / stf.pixel_size_x - 0.5
    trow = (stf.origin_y - ys) / stf.pixel_size_y - 0.5
    # ceil(t - 0.5) is the nearest integer with ties toward the smaller one.
    col_idx = np.clip(np.ceil(tcol - 0.5), 0, source.width - 1).astype(np.int64)
    row_idx = np.clip(np.ceil(trow - 0.5), 0, source.height - 1).astype(np.int64)
    out = source.values[:, row_idx[:, np.newaxis], col_idx[np.newaxis, :]]
    return RasterGrid(
        np.ascontiguousarray(out), target_transform, source.kind,
        nodata=source.nodata,
    )


def apply_lc_scheme(
    lc: RasterGrid,
    cloud: RasterGrid,
    scheme: LandCoverScheme,
) -> RasterGrid:
    """Remap land-cover codes to contiguous indices and stamp in clouds.

    Pixels where the cloud mask is 1 become the cloud class. Nodata pixels
    in the source stay nodata.

    Raises:
        UnknownCodeError: a non-nodata value is outside the scheme.
    """
    _require_aligned(lc, cloud)
    codes = lc.values[0]
    valid = lc.valid_mask()
    present = np.unique(codes[valid])
    unknown = sorted(set(int(c) for c in present) - set(scheme.code_to_index))
    if unknown:
        raise UnknownCodeError(f"land-cover codes not in scheme: {unknown}")

    lut = np.full(max(scheme.code_to_index, default=0) + 1, MASK_NODATA, dtype=np.uint8)
    for code, idx in scheme.code_to_index.items():
        lut[code] = idx
    out = np.full(codes.shape, MASK_NODATA, dtype=np.uint8)
    out[valid] = lut[codes[valid].astype(np.int64)]
    out[(cloud.values[0] == 1) & valid] = scheme.cloud_index
    return RasterGrid(
        out[np.newaxis], lc.transform, RasterKind.CATEGORY_MAP, nodata=MASK_NODATA
    )
