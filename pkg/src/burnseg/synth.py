"""Synthetic 4-band post-fire scenes for desk-scale runs and tests.

Each scene is a procedurally generated bundle: a 4-band image (Blue,
Green, Red, NIR in [0, 1]) whose radiometry follows a coherent land-cover
mosaic, star-shaped burn-scar polygons rendered dark and NIR-poor, bright
cloud blobs, a coarse land-cover code map, and an octagonal AOI. The scar
polygons are the exact ground truth; rasterizing them with the standard
pipeline reproduces the mask the imagery was painted from.

Generator parameters are arbitrary by design: they exist to exercise the
code paths, not to emulate any particular sensor's radiometry. Everything
is drawn from one seeded PCG64 stream, so a seed reproduces a dataset
bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from shapely.geometry import Polygon
from shapely.ops import unary_union

from .raster import GeoTransform, RasterGrid, RasterKind, binarize_delineation, resample_nearest

#: Per-code mean spectra (Blue, Green, Red, NIR).
LC_SPECTRA = {
    10: (0.06, 0.10, 0.06, 0.45),   # tree cover
    20: (0.09, 0.13, 0.11, 0.38),   # shrubland
    30: (0.10, 0.16, 0.14, 0.42),   # grassland
    40: (0.11, 0.17, 0.15, 0.35),   # cropland
    60: (0.20, 0.19, 0.17, 0.28),   # bare / sparse
    80: (0.06, 0.05, 0.04, 0.03),   # water
    90: (0.08, 0.10, 0.09, 0.30),   # wetland
}

_BURN_SPECTRUM = np.array((0.05, 0.06, 0.07, 0.04), dtype=np.float64)
_CLOUD_SPECTRUM = np.array((0.85, 0.85, 0.87, 0.80), dtype=np.float64)


@dataclass(frozen=True)
class SynthConfig:
    scene_size: int = 320
    pixel_size: float = 1.5
    lc_pixel_size: float = 10.0
    crs_id: str = "EPSG:32634"
    origin: tuple[float, float] = (500000.0, 4200000.0)
    num_scars: tuple[int, int] = (2, 5)
    scar_radius: tuple[float, float] = (14.0, 42.0)
    num_clouds: tuple[int, int] = (1, 2)
    cloud_radius: tuple[float, float] = (10.0, 22.0)
    burned_fraction_range: tuple[float, float] = (0.02, 0.40)
    num_lc_regions: int = 6
    noise_sigma: float = 0.015
    aoi_chamfer: float = 0.18

    def __post_init__(self) -> None:
        if self.scene_size < 32:
            raise ValueError("scene_size must be at least 32 pixels")
        lo, hi = self.burned_fraction_range
        if not (0.0 <= lo < hi <= 1.0):
            raise ValueError("burned_fraction_range must be an increasing pair in [0, 1]")


@dataclass(frozen=True)
class SceneBundle:
    image: RasterGrid
    scar_polygons: object          # shapely geometry in map coordinates
    cloud: RasterGrid
    lc: RasterGrid
    aoi: Polygon
    burned_fraction: float


def _blob(rng: np.random.Generator, cx: float, cy: float, radius: float) -> Polygon:
    """Star-shaped polygon: radius modulated by three random harmonics."""
    amps = rng.uniform(0.05, 0.18, size=3)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=3)
    angles = np.linspace(0.0, 2.0 * math.pi, 24, endpoint=False)
    wobble = sum(a * np.sin((k + 1) * angles + p) for k, (a, p) in enumerate(zip(amps, phases)))
    r = radius * (1.0 + wobble)
    xs = cx + r * np.cos(angles)
    ys = cy + r * np.sin(angles)
    return Polygon(zip(xs, ys)).buffer(0)


def _chamfered_aoi(cfg: SynthConfig) -> Polygon:
    """Octagonal AOI: the scene rectangle with chamfered corners."""
    ox, oy = cfg.origin
    side = cfg.scene_size * cfg.pixel_size
    c = cfg.aoi_chamfer * side
    x0, y1 = ox, oy
    x1, y0 = ox + side, oy - side
    return Polygon(
        [
            (x0 + c, y0), (x1 - c, y0), (x1, y0 + c), (x1, y1 - c),
            (x1 - c, y1), (x0 + c, y1), (x0, y1 - c), (x0, y0 + c),
        ]
    )


def _sample_blobs(
    rng: np.random.Generator, cfg: SynthConfig, aoi: Polygon,
    count_range: tuple[int, int], radius_range: tuple[float, float],
):
    n = int(rng.integers(count_range[0], count_range[1] + 1))
    minx, miny, maxx, maxy = aoi.bounds
    blobs = []
    for _ in range(n):
        cx = rng.uniform(minx, maxx)
        cy = rng.uniform(miny, maxy)
        radius = rng.uniform(*radius_range) * cfg.pixel_size
        blobs.append(_blob(rng, cx, cy, radius))
    return blobs


def generate_scene(
    cfg: SynthConfig, seed: int, origin: tuple[float, float] | None = None
) -> SceneBundle:
    """Generate one scene deterministically from (config, seed)."""
    if origin is not None:
        cfg = SynthConfig(**{**cfg.__dict__, "origin": origin})
    rng = np.random.default_rng(seed)
    size = cfg.scene_size
    transform = GeoTransform(
        cfg.origin[0], cfg.origin[1], cfg.pixel_size, cfg.pixel_size, cfg.crs_id
    )
    template = RasterGrid(
        np.zeros((1, size, size), dtype=np.uint8), transform, RasterKind.BINARY_MASK
    )
    aoi = _chamfered_aoi(cfg)

    # Burn scars: resample until the burned fraction lands in range.
    lo, hi = cfg.burned_fraction_range
    scars = None
    fraction = 0.0
    for _ in range(64):
        blobs = _sample_blobs(rng, cfg, aoi, cfg.num_scars, cfg.scar_radius)
        candidate = unary_union(blobs).intersection(aoi)
        fraction = candidate.area / aoi.area
        if lo <= fraction <= hi:
            scars = candidate
            break
    if scars is None:
        raise RuntimeError(
            f"could not hit burned fraction range {cfg.burned_fraction_range}"
        )

    clouds = unary_union(
        _sample_blobs(rng, cfg, aoi, cfg.num_clouds, cfg.cloud_radius)
    )
    cloud_mask = binarize_delineation(clouds, template)
    burn_mask = binarize_delineation(scars, template)

    # Coarse land-cover map: nearest-seed regions with WorldCover codes.
    lc_size = math.ceil(size * cfg.pixel_size / cfg.lc_pixel_size)
    lc_transform = GeoTransform(
        cfg.origin[0], cfg.origin[1], cfg.lc_pixel_size, cfg.lc_pixel_size, cfg.crs_id
    )
    codes = np.array(sorted(LC_SPECTRA), dtype=np.uint8)
    seeds_rc = rng.uniform(0, lc_size, size=(cfg.num_lc_regions, 2))
    seed_codes = codes[rng.integers(0, len(codes), size=cfg.num_lc_regions)]
    rows, cols = np.mgrid[0:lc_size, 0:lc_size]
    d2 = (rows[..., None] - seeds_rc[:, 0]) ** 2 + (cols[..., None] - seeds_rc[:, 1]) ** 2
    lc_codes = seed_codes[np.argmin(d2, axis=-1)].astype(np.uint8)
    lc = RasterGrid(lc_codes[np.newaxis], lc_transform, RasterKind.CATEGORY_MAP)

    # Paint the image: land-cover spectra, burn darkening, texture, clouds.
    lc_fine = resample_nearest(lc, transform, size, size).values[0]
    image = np.zeros((4, size, size), dtype=np.float64)
    for code, spectrum in LC_SPECTRA.items():
        sel = lc_fine == code
        for b in range(4):
            image[b][sel] = spectrum[b]
    texture = gaussian_filter(rng.standard_normal((size, size)), sigma=9.0)
    image += 0.04 * texture
    burned = burn_mask.values[0] == 1
    for b in range(4):
        band = image[b]
        band[burned] = 0.15 * band[burned] + 0.85 * _BURN_SPECTRUM[b]
    image += rng.normal(0.0, cfg.noise_sigma, size=image.shape)
    cloudy = cloud_mask.values[0] == 1
    for b in range(4):
        band = image[b]
        band[cloudy] = 0.08 * band[cloudy] + 0.92 * _CLOUD_SPECTRUM[b]
    image = np.clip(image, 0.0, 1.0).astype(np.float32)

    return SceneBundle(
        image=RasterGrid(image, transform, RasterKind.IMAGE),
        scar_polygons=scars,
        cloud=cloud_mask,
        lc=lc,
        aoi=aoi,
        burned_fraction=fraction,
    )


def generate_scenes(cfg: SynthConfig, seed: int, count: int) -> list[SceneBundle]:
    """Distinct scenes side by side: scene i sits one scene-width plus a
    gap east of scene i-1 and draws from its own derived seed."""
    scenes = []
    side = cfg.scene_size * cfg.pixel_size
    for i in range(count):
        origin = (cfg.origin[0] + i * (side + 10 * cfg.pixel_size), cfg.origin[1])
        scenes.append(generate_scene(cfg, seed + 1000 * i, origin=origin))
    return scenes


def write_scene(bundle: SceneBundle, directory: str | Path) -> None:
    """Persist a scene the way real inputs arrive: image, cloud mask and
    land cover as GeoTIFF, delineation and AOI as GeoJSON."""
    from .io import write_raster, write_vector_geojson

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    crs = bundle.image.transform.crs_id
    write_raster(bundle.image, directory / "image.tif")
    write_raster(bundle.cloud, directory / "cloud.tif")
    write_raster(bundle.lc, directory / "lc.tif")
    write_vector_geojson(bundle.scar_polygons, crs, directory / "ba.geojson")
    write_vector_geojson(bundle.aoi, crs, directory / "aoi.geojson")
