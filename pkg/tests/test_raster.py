import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from matplotlib.path import Path as MplPath
from shapely.geometry import Polygon, box

from burnseg.errors import (
    CrsMismatchError,
    GridMismatchError,
    NoOverlapError,
    UnknownCodeError,
)
from burnseg.raster import (
    GeoTransform,
    LandCoverScheme,
    RasterGrid,
    RasterKind,
    apply_lc_scheme,
    binarize_delineation,
    clip_to_aoi,
    resample_nearest,
    subtract_cloud,
)

CRS = "EPSG:32634"


def make_grid(values, kind=RasterKind.IMAGE, nodata=None, origin=(0.0, 100.0), ps=1.0):
    tf = GeoTransform(origin[0], origin[1], ps, ps, CRS)
    return RasterGrid(np.asarray(values), tf, kind, nodata=nodata)


class TestRasterGrid:
    def test_shape_properties(self):
        r = make_grid(np.zeros((3, 4, 5), np.float32))
        assert (r.bands, r.height, r.width) == (3, 4, 5)

    def test_values_frozen(self):
        r = make_grid(np.zeros((1, 2, 2), np.float32))
        with pytest.raises(ValueError):
            r.values[0, 0, 0] = 1.0

    def test_binary_mask_rejects_twos(self):
        with pytest.raises(ValueError):
            make_grid(np.full((1, 2, 2), 2, np.uint8), RasterKind.BINARY_MASK)

    def test_binary_mask_allows_nodata(self):
        vals = np.array([[[0, 1], [255, 1]]], np.uint8)
        r = make_grid(vals, RasterKind.BINARY_MASK, nodata=255)
        assert r.valid_mask().sum() == 3

    def test_probability_range_enforced(self):
        with pytest.raises(ValueError):
            make_grid(np.full((1, 2, 2), 1.5, np.float32), RasterKind.PROBABILITY_MAP)

    def test_category_needs_integers(self):
        with pytest.raises(ValueError):
            make_grid(np.zeros((1, 2, 2), np.float32), RasterKind.CATEGORY_MAP)

    def test_transform_validation(self):
        with pytest.raises(ValueError):
            GeoTransform(0, 0, -1.0, 1.0, CRS)
        with pytest.raises(ValueError):
            GeoTransform(0, 0, 1.0, 1.0, "")


class TestClipToAoi:
    def test_full_extent_is_identity(self):
        r = make_grid(np.random.rand(1, 100, 100).astype(np.float32))
        out = clip_to_aoi(r, box(*r.extent))
        assert np.array_equal(out.values, r.values)
        assert out.transform == r.transform

    def test_left_half(self):
        r = make_grid(np.ones((1, 100, 100), np.float32))
        out = clip_to_aoi(r, box(0.0, 0.0, 50.0, 100.0))
        assert (out.width, out.height) == (50, 100)
        assert np.all(out.values == 1.0)
        assert out.transform.origin_x == r.transform.origin_x
        assert out.transform.origin_y == r.transform.origin_y

    def test_pentagon_matches_point_in_polygon_oracle(self):
        # checkerboard scene, irregular pentagon in general position
        vals = np.indices((40, 40)).sum(axis=0) % 2
        r = make_grid(vals[np.newaxis].astype(np.uint8), RasterKind.BINARY_MASK,
                      origin=(0.0, 40.0))
        pentagon = Polygon(
            [(3.3, 5.2), (31.7, 2.9), (36.4, 22.8), (19.6, 37.3), (5.1, 28.7)]
        )
        out = clip_to_aoi(r, pentagon)

        path = MplPath(np.asarray(pentagon.exterior.coords))
        for row in range(out.height):
            for col in range(out.width):
                x, y = out.transform.pixel_center(row, col)
                inside = path.contains_point((x, y))
                if inside:
                    src_col = int(x)  # ps=1, origin 0
                    src_row = int(40.0 - y)
                    assert out.values[0, row, col] == vals[src_row, src_col]
                else:
                    assert out.values[0, row, col] == out.nodata

    def test_no_overlap(self):
        r = make_grid(np.zeros((1, 10, 10), np.float32))
        with pytest.raises(NoOverlapError):
            clip_to_aoi(r, box(1000, 1000, 1010, 1010))

    def test_crs_mismatch(self):
        r = make_grid(np.zeros((1, 10, 10), np.float32))
        with pytest.raises(CrsMismatchError):
            clip_to_aoi(r, box(*r.extent), aoi_crs="EPSG:4326")


class TestBinarizeDelineation:
    def test_empty_set_gives_zeros(self):
        template = make_grid(np.zeros((1, 16, 16), np.uint8), RasterKind.BINARY_MASK)
        out = binarize_delineation([], template)
        assert out.values.sum() == 0

    def test_full_extent_gives_ones(self):
        template = make_grid(np.zeros((1, 16, 16), np.uint8), RasterKind.BINARY_MASK)
        out = binarize_delineation(box(*template.extent), template)
        assert out.values.sum() == 16 * 16

    def test_square_pixel_count_analytic(self):
        # 10x10-pixel axis-aligned square on a 32x32 unit grid: the square
        # [5, 15] x [5, 15] contains exactly the 100 centers at X.5 offsets.
        template = make_grid(np.zeros((1, 32, 32), np.uint8),
                             RasterKind.BINARY_MASK, origin=(0.0, 32.0))
        out = binarize_delineation(box(5.0, 5.0, 15.0, 15.0), template)
        assert int(out.values.sum()) == 100

    def test_boundary_center_counts_as_inside(self):
        # polygon edge passing exactly through a pixel center
        template = make_grid(np.zeros((1, 3, 3), np.uint8), RasterKind.BINARY_MASK,
                             origin=(0.0, 3.0))
        out = binarize_delineation(box(0.5, 0.5, 1.5, 1.5), template)
        # all four corners and the center of the box are pixel centers
        assert int(out.values.sum()) == 4  # centers (0.5,.5),(1.5,.5),(.5,1.5),(1.5,1.5) on boundary... see note
        # the box covers centers at rows 1..2, cols 0..1 boundary-inclusively

    def test_crs_mismatch(self):
        template = make_grid(np.zeros((1, 4, 4), np.uint8), RasterKind.BINARY_MASK)
        with pytest.raises(CrsMismatchError):
            binarize_delineation(box(0, 0, 2, 2), template, polygons_crs="EPSG:4326")


class TestSubtractCloud:
    def test_truth_table(self):
        tf_vals = np.array([[[1, 1, 0, 0]]], np.uint8)
        cl_vals = np.array([[[1, 0, 1, 0]]], np.uint8)
        ba = make_grid(tf_vals, RasterKind.BINARY_MASK)
        cloud = make_grid(cl_vals, RasterKind.BINARY_MASK)
        out = subtract_cloud(ba, cloud)
        assert out.values.tolist() == [[[0, 1, 0, 0]]]

    def test_zero_cloud_is_identity(self):
        ba = make_grid((np.random.rand(1, 8, 8) > 0.5).astype(np.uint8),
                       RasterKind.BINARY_MASK)
        cloud = make_grid(np.zeros((1, 8, 8), np.uint8), RasterKind.BINARY_MASK)
        assert np.array_equal(subtract_cloud(ba, cloud).values, ba.values)

    def test_full_cloud_zeroes(self):
        ba = make_grid(np.ones((1, 8, 8), np.uint8), RasterKind.BINARY_MASK)
        cloud = make_grid(np.ones((1, 8, 8), np.uint8), RasterKind.BINARY_MASK)
        assert subtract_cloud(ba, cloud).values.sum() == 0

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_idempotent_in_cloud(self, seed):
        rng = np.random.default_rng(seed)
        ba = make_grid(rng.integers(0, 2, (1, 6, 6)).astype(np.uint8),
                       RasterKind.BINARY_MASK)
        cloud = make_grid(rng.integers(0, 2, (1, 6, 6)).astype(np.uint8),
                          RasterKind.BINARY_MASK)
        once = subtract_cloud(ba, cloud)
        twice = subtract_cloud(once, cloud)
        assert np.array_equal(once.values, twice.values)

    def test_grid_mismatch(self):
        ba = make_grid(np.zeros((1, 4, 4), np.uint8), RasterKind.BINARY_MASK)
        cloud = make_grid(np.zeros((1, 5, 5), np.uint8), RasterKind.BINARY_MASK)
        with pytest.raises(GridMismatchError):
            subtract_cloud(ba, cloud)


class TestResampleNearest:
    def test_identity(self):
        src = make_grid(np.arange(20, dtype=np.uint8).reshape(1, 4, 5),
                        RasterKind.CATEGORY_MAP)
        out = resample_nearest(src, src.transform, src.width, src.height)
        assert np.array_equal(out.values, src.values)

    def test_block_replication_2x(self):
        src = make_grid(np.array([[[10, 20], [30, 40]]], np.uint8),
                        RasterKind.CATEGORY_MAP, origin=(0.0, 4.0), ps=2.0)
        target = GeoTransform(0.0, 4.0, 1.0, 1.0, CRS)
        out = resample_nearest(src, target, 4, 4)
        expected = np.repeat(np.repeat(src.values[0], 2, axis=0), 2, axis=1)
        assert np.array_equal(out.values[0], expected)

    def test_random_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(42)
        src_vals = rng.integers(0, 7, (1, 5, 7)).astype(np.uint8) * 10
        src = make_grid(src_vals, RasterKind.CATEGORY_MAP,
                        origin=(10.0, 50.0), ps=3.0)
        target = GeoTransform(9.0, 51.0, 1.3, 0.9, CRS)
        w, h = 23, 17
        out = resample_nearest(src, target, w, h)

        stf = src.transform
        for row in range(h):
            for col in range(w):
                x = target.origin_x + (col + 0.5) * target.pixel_size_x
                y = target.origin_y - (row + 0.5) * target.pixel_size_y
                best = None
                for sr in range(src.height):
                    for sc in range(src.width):
                        cx, cy = stf.pixel_center(sr, sc)
                        d = (cx - x) ** 2 + (cy - y) ** 2
                        if best is None or d < best[0] - 1e-12:
                            best = (d, sr, sc)
                assert out.values[0, row, col] == src_vals[0, best[1], best[2]]

    def test_tie_breaks_toward_smaller_index(self):
        # target center exactly between source centers 0 and 1 on both axes
        src = make_grid(np.array([[[1, 2], [3, 4]]], np.uint8),
                        RasterKind.CATEGORY_MAP, origin=(0.0, 2.0), ps=1.0)
        target = GeoTransform(0.5, 1.5, 1.0, 1.0, CRS)
        out = resample_nearest(src, target, 1, 1)
        assert out.values[0, 0, 0] == 1

    def test_no_new_categories(self):
        rng = np.random.default_rng(0)
        src = make_grid(rng.integers(0, 4, (1, 6, 6)).astype(np.uint8) * 30,
                        RasterKind.CATEGORY_MAP)
        target = GeoTransform(0.2, 99.8, 0.41, 0.73, CRS)
        out = resample_nearest(src, target, 31, 29)
        assert set(np.unique(out.values)) <= set(np.unique(src.values))

    def test_crs_mismatch(self):
        src = make_grid(np.zeros((1, 2, 2), np.uint8), RasterKind.CATEGORY_MAP)
        with pytest.raises(CrsMismatchError):
            resample_nearest(src, GeoTransform(0, 0, 1, 1, "EPSG:4326"), 2, 2)


class TestLandCoverScheme:
    def test_worldcover_mapping(self):
        scheme = LandCoverScheme.worldcover()
        assert scheme.code_to_index[10] == 0
        assert scheme.code_to_index[95] == 9
        assert scheme.code_to_index[100] == 10
        assert scheme.cloud_index == 11
        assert scheme.num_classes == 12

    def test_rejects_non_bijection(self):
        with pytest.raises(ValueError):
            LandCoverScheme(code_to_index={10: 0, 20: 0}, cloud_index=2,
                            num_classes=3)

    def test_apply_remaps_and_stamps_clouds(self):
        lc = make_grid(np.array([[[10, 95], [100, 20]]], np.uint8),
                       RasterKind.CATEGORY_MAP)
        cloud = make_grid(np.array([[[0, 1], [0, 0]]], np.uint8),
                          RasterKind.BINARY_MASK)
        out = apply_lc_scheme(lc, cloud, LandCoverScheme.worldcover())
        assert out.values.tolist() == [[[0, 11], [10, 1]]]

    def test_unknown_code(self):
        lc = make_grid(np.array([[[10, 42]]], np.uint8), RasterKind.CATEGORY_MAP)
        cloud = make_grid(np.zeros((1, 1, 2), np.uint8), RasterKind.BINARY_MASK)
        with pytest.raises(UnknownCodeError):
            apply_lc_scheme(lc, cloud, LandCoverScheme.worldcover())

    def test_nodata_passthrough(self):
        lc = make_grid(np.array([[[10, 255]]], np.uint8), RasterKind.CATEGORY_MAP,
                       nodata=255)
        cloud = make_grid(np.zeros((1, 1, 2), np.uint8), RasterKind.BINARY_MASK)
        out = apply_lc_scheme(lc, cloud, LandCoverScheme.worldcover())
        assert out.values.tolist() == [[[0, 255]]]
        assert out.nodata == 255
