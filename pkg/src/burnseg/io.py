"""GeoTIFF raster I/O and GeoJSON / GeoPackage vector reading.

Rasters round-trip bit-exactly (values, transform, nodata, kind) through
standard GeoTIFF tags: ModelPixelScale, ModelTiepoint, a GeoKey directory
carrying the EPSG code and a citation string, GDAL_NODATA, and a small
JSON ImageDescription recording the raster kind. Supported pixel types
are uint8, uint16 and float32.

Vector layers (AOIs, delineations) come from GeoJSON or GeoPackage; the
returned geometry is the union of all features in the layer.
"""

from __future__ import annotations

import json
import sqlite3
from pathlib import Path

import numpy as np
import shapely.wkb
from shapely.geometry import Polygon, mapping, shape
from shapely.geometry.base import BaseGeometry
from shapely.ops import unary_union
import tifffile

from .errors import RasterIOError, UnsupportedFormatError
from .raster import GeoTransform, RasterGrid, RasterKind

_SUPPORTED_DTYPES = (np.uint8, np.uint16, np.float32)

# GeoTIFF tag codes
_MODEL_PIXEL_SCALE = 33550
_MODEL_TIEPOINT = 33922
_GEO_KEY_DIRECTORY = 34735
_GEO_ASCII_PARAMS = 34737
_GDAL_NODATA = 42113

# GeoKey ids
_GT_MODEL_TYPE = 1024
_GT_RASTER_TYPE = 1025
_GT_CITATION = 1026
_GEOGRAPHIC_TYPE = 2048
_PROJECTED_CS_TYPE = 3072


def _epsg_code(crs_id: str) -> int | None:
    if crs_id.upper().startswith("EPSG:"):
        try:
            return int(crs_id.split(":", 1)[1])
        except ValueError:
            return None
    return None


def write_raster(raster: RasterGrid, path: str | Path) -> None:
    """Write a RasterGrid as GeoTIFF.

    Multi-band rasters are stored band-interleaved-by-pixel; the raster
    kind goes into the ImageDescription so reads are self-describing.
    """
    dtype = raster.values.dtype
    if not any(dtype == d for d in _SUPPORTED_DTYPES):
        raise UnsupportedFormatError(
            f"unsupported GeoTIFF dtype {dtype}; use uint8, uint16 or float32"
        )
    tf = raster.transform

    citation = tf.crs_id + "|"
    keys = [
        (_GT_RASTER_TYPE, 0, 1, 1),  # PixelIsArea
        (_GT_CITATION, _GEO_ASCII_PARAMS, len(citation), 0),
    ]
    code = _epsg_code(tf.crs_id)
    if code is not None and 4000 <= code < 5000:
        keys.insert(0, (_GT_MODEL_TYPE, 0, 1, 2))
        keys.append((_GEOGRAPHIC_TYPE, 0, 1, code))
    elif code is not None:
        keys.insert(0, (_GT_MODEL_TYPE, 0, 1, 1))
        keys.append((_PROJECTED_CS_TYPE, 0, 1, code))
    else:
        keys.insert(0, (_GT_MODEL_TYPE, 0, 1, 1))
    keys.sort()
    directory = [1, 1, 0, len(keys)]
    for k in keys:
        directory.extend(k)

    extratags = [
        (_MODEL_PIXEL_SCALE, "d", 3, (tf.pixel_size_x, tf.pixel_size_y, 0.0), True),
        (_MODEL_TIEPOINT, "d", 6, (0.0, 0.0, 0.0, tf.origin_x, tf.origin_y, 0.0), True),
        (_GEO_KEY_DIRECTORY, "H", len(directory), tuple(directory), True),
        (_GEO_ASCII_PARAMS, "s", 0, citation, True),
    ]
    if raster.nodata is not None:
        extratags.append((_GDAL_NODATA, "s", 0, repr(raster.nodata), True))

    data = raster.values
    if data.shape[0] == 1:
        payload = data[0]
    else:
        payload = np.ascontiguousarray(np.moveaxis(data, 0, -1))
    description = json.dumps({"burnseg": {"kind": raster.kind.value}})
    try:
        tifffile.imwrite(
            str(path),
            payload,
            photometric="minisblack",
            planarconfig="contig" if data.shape[0] > 1 else None,
            description=description,
            metadata=None,
            extratags=extratags,
        )
    except OSError as exc:
        raise RasterIOError(f"cannot write {path}: {exc}") from exc


def read_raster(path: str | Path, kind: RasterKind | None = None) -> RasterGrid:
    """Read a GeoTIFF into a RasterGrid.

    ``kind`` overrides the self-described kind; files written by other
    tools default to IMAGE.
    """
    path = Path(path)
    if not path.exists():
        raise RasterIOError(f"no such file: {path}")
    try:
        with tifffile.TiffFile(str(path)) as tif:
            page = tif.pages[0]
            data = page.asarray()
            tags = {tag.code: tag.value for tag in page.tags}
    except (tifffile.TiffFileError, OSError) as exc:
        raise RasterIOError(f"cannot read {path}: {exc}") from exc

    if _MODEL_PIXEL_SCALE not in tags or _MODEL_TIEPOINT not in tags:
        raise UnsupportedFormatError(f"{path} lacks GeoTIFF georeferencing tags")
    scale = tags[_MODEL_PIXEL_SCALE]
    tie = tags[_MODEL_TIEPOINT]
    crs_id = _read_crs(tags)
    transform = GeoTransform(
        origin_x=float(tie[3]) - float(tie[0]) * float(scale[0]),
        origin_y=float(tie[4]) + float(tie[1]) * float(scale[1]),
        pixel_size_x=float(scale[0]),
        pixel_size_y=float(scale[1]),
        crs_id=crs_id,
    )

    if data.ndim == 2:
        values = data[np.newaxis]
    elif data.ndim == 3:
        # contig storage comes back (h, w, bands)
        values = np.ascontiguousarray(np.moveaxis(data, -1, 0))
    else:
        raise UnsupportedFormatError(f"{path}: unexpected array rank {data.ndim}")

    if kind is None:
        kind = _read_kind(tags.get(270))
    nodata = _read_nodata(tags.get(_GDAL_NODATA), values.dtype)
    return RasterGrid(values, transform, kind, nodata=nodata)


def _read_crs(tags: dict) -> str:
    directory = tags.get(_GEO_KEY_DIRECTORY)
    ascii_params = tags.get(_GEO_ASCII_PARAMS, "")
    citation = None
    if directory is not None:
        n = int(directory[3])
        for i in range(n):
            key_id, loc, count, value = directory[4 + 4 * i: 8 + 4 * i]
            if key_id in (_PROJECTED_CS_TYPE, _GEOGRAPHIC_TYPE) and loc == 0:
                return f"EPSG:{int(value)}"
            if key_id == _GT_CITATION and loc == _GEO_ASCII_PARAMS:
                citation = ascii_params[value: value + count]
    if citation is None and ascii_params:
        citation = ascii_params
    if citation:
        return citation.rstrip("|\x00 ")
    raise UnsupportedFormatError("GeoTIFF lacks a readable CRS")


def _read_kind(description) -> RasterKind:
    if isinstance(description, str):
        try:
            meta = json.loads(description)
            return RasterKind(meta["burnseg"]["kind"])
        except (ValueError, KeyError, TypeError):
            pass
    return RasterKind.IMAGE


def _read_nodata(text, dtype):
    if text is None:
        return None
    value = float(str(text).strip().rstrip("\x00"))
    if np.issubdtype(dtype, np.integer):
        return int(value)
    return value


# ---------------------------------------------------------------------------
# Vector layers


def read_vector(path: str | Path) -> tuple[BaseGeometry, str | None]:
    """Read a vector layer, returning (union geometry, crs_id or None)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".geojson", ".json"):
        return read_vector_geojson(path)
    if suffix == ".gpkg":
        return read_vector_gpkg(path)
    raise UnsupportedFormatError(f"unsupported vector format: {path}")


def _parse_crs_name(name: str | None) -> str | None:
    if not name:
        return None
    if "EPSG" in name.upper() and "::" in name:
        return "EPSG:" + name.rsplit(":", 1)[-1]
    return name


def read_vector_geojson(path: str | Path) -> tuple[BaseGeometry, str | None]:
    path = Path(path)
    if not path.exists():
        raise RasterIOError(f"no such file: {path}")
    with open(path) as fh:
        obj = json.load(fh)
    crs = _parse_crs_name(obj.get("crs", {}).get("properties", {}).get("name"))
    if obj.get("type") == "FeatureCollection":
        geoms = [shape(f["geometry"]) for f in obj["features"] if f.get("geometry")]
    elif obj.get("type") == "Feature":
        geoms = [shape(obj["geometry"])]
    else:
        geoms = [shape(obj)]
    if not geoms:
        return Polygon(), crs
    return unary_union(geoms), crs


def write_vector_geojson(
    geometries: BaseGeometry | list[BaseGeometry],
    crs_id: str | None,
    path: str | Path,
) -> None:
    """Write geometries as a GeoJSON FeatureCollection (legacy crs member)."""
    if isinstance(geometries, BaseGeometry):
        geometries = [geometries]
    obj: dict = {
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature", "properties": {}, "geometry": mapping(g)}
            for g in geometries
        ],
    }
    if crs_id:
        code = _epsg_code(crs_id)
        name = f"urn:ogc:def:crs:EPSG::{code}" if code is not None else crs_id
        obj["crs"] = {"type": "name", "properties": {"name": name}}
    with open(path, "w") as fh:
        json.dump(obj, fh)


_GPB_ENVELOPE_SIZES = {0: 0, 1: 32, 2: 48, 3: 48, 4: 64}


def _parse_gpb(blob: bytes) -> BaseGeometry | None:
    """Parse a GeoPackage geometry blob (GPB header + WKB)."""
    if blob is None or len(blob) < 8 or blob[0:2] != b"GP":
        raise UnsupportedFormatError("not a GeoPackage geometry blob")
    flags = blob[3]
    if flags & 0b10000:  # empty-geometry flag
        return None
    envelope = (flags >> 1) & 0b111
    if envelope not in _GPB_ENVELOPE_SIZES:
        raise UnsupportedFormatError(f"invalid GPB envelope indicator {envelope}")
    return shapely.wkb.loads(blob[8 + _GPB_ENVELOPE_SIZES[envelope]:])


def read_vector_gpkg(
    path: str | Path, layer: str | None = None
) -> tuple[BaseGeometry, str | None]:
    path = Path(path)
    if not path.exists():
        raise RasterIOError(f"no such file: {path}")
    con = sqlite3.connect(str(path))
    try:
        cur = con.cursor()
        rows = cur.execute(
            "SELECT table_name, srs_id FROM gpkg_contents WHERE data_type='features'"
            " ORDER BY table_name"
        ).fetchall()
        if not rows:
            raise UnsupportedFormatError(f"{path} holds no feature layer")
        if layer is not None:
            match = [r for r in rows if r[0] == layer]
            if not match:
                raise RasterIOError(f"layer {layer!r} not found in {path}")
            table, srs_id = match[0]
        else:
            table, srs_id = rows[0]
        (geom_col,) = cur.execute(
            "SELECT column_name FROM gpkg_geometry_columns WHERE table_name=?",
            (table,),
        ).fetchone()
        crs = None
        srs = cur.execute(
            "SELECT organization, organization_coordsys_id FROM gpkg_spatial_ref_sys"
            " WHERE srs_id=?",
            (srs_id,),
        ).fetchone()
        if srs is not None and srs[0]:
            crs = f"{srs[0].upper()}:{srs[1]}"
        blobs = cur.execute(
            f'SELECT "{geom_col}" FROM "{table}"'
        ).fetchall()
    finally:
        con.close()
    geoms = []
    for (blob,) in blobs:
        geom = _parse_gpb(blob)
        if geom is not None and not geom.is_empty:
            geoms.append(geom)
    if not geoms:
        return Polygon(), crs
    return unary_union(geoms), crs
