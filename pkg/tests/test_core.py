"""Core types: HSV math, tiling/stitching, PNG round trips."""

import colorsys
import math

import numpy as np
import pytest
from PIL import Image

from satcount.core import (
    ConfigError,
    HsvColor,
    NotFoundError,
    PixelBox,
    RasterImage,
    TileGrid,
    crop_tiles,
    hsv_to_rgb,
    load_tile_grid,
    plan_tiles,
    read_image,
    read_png16,
    rgb_to_hsv,
    save_tile_grid,
    stitch,
    sv_channels,
    sv_distance,
    write_image,
    write_png16,
)


class TestHsv:
    def test_primary_red(self):
        c = rgb_to_hsv(255, 0, 0)
        assert (c.h, c.s, c.v) == (0.0, 1.0, 1.0)

    def test_achromatic_gray(self):
        c = rgb_to_hsv(128, 128, 128)
        assert c.h == 0.0
        assert c.s == 0.0
        assert c.v == pytest.approx(128 / 255, abs=1e-9)

    def test_hexcone_derived_case(self):
        # hand-derived from the max/min hexcone formula: max=b, d=255,
        # h = 60 * ((r - g)/d + 4) = 60 * (4 - 128/255)
        c = rgb_to_hsv(0, 128, 255)
        assert c.h == pytest.approx(60.0 * (4.0 - 128.0 / 255.0), abs=1e-9)
        assert c.s == pytest.approx(1.0, abs=1e-9)
        assert c.v == pytest.approx(1.0, abs=1e-9)

    def test_matches_colorsys_reference(self):
        rng = np.random.RandomState(7)
        for r, g, b in rng.randint(0, 256, size=(200, 3)):
            ours = rgb_to_hsv(int(r), int(g), int(b))
            h, s, v = colorsys.rgb_to_hsv(r / 255.0, g / 255.0, b / 255.0)
            assert ours.h == pytest.approx(h * 360.0, abs=1e-6)
            assert ours.s == pytest.approx(s, abs=1e-9)
            assert ours.v == pytest.approx(v, abs=1e-9)

    def test_round_trip_within_one_byte(self):
        rng = np.random.RandomState(11)
        for r, g, b in rng.randint(0, 256, size=(300, 3)):
            rr, gg, bb = hsv_to_rgb(rgb_to_hsv(int(r), int(g), int(b)))
            assert abs(rr - r) <= 1 and abs(gg - g) <= 1 and abs(bb - b) <= 1

    def test_clamping(self):
        c = HsvColor(h=370.0, s=1.5, v=-0.2)
        assert c.h == pytest.approx(10.0)
        assert c.s == 1.0
        assert c.v == 0.0

    def test_rejects_out_of_range_samples(self):
        with pytest.raises(ValueError):
            rgb_to_hsv(300, 0, 0)


class TestSvDistance:
    def test_identity(self):
        a = HsvColor(120, 0.3, 0.7)
        assert sv_distance(a, a) == 0.0

    def test_unit_axis(self):
        assert sv_distance(HsvColor(0, 0, 0), HsvColor(0, 1, 0)) == 1.0

    def test_hand_derived(self):
        # sqrt(0.3^2 + 0.4^2) = 0.5
        d = sv_distance(HsvColor(0, 0.2, 0.4), HsvColor(180, 0.5, 0.8))
        assert d == pytest.approx(0.5, abs=1e-12)

    def test_hue_is_ignored(self):
        a = HsvColor(10, 0.4, 0.6)
        b = HsvColor(350, 0.4, 0.6)
        assert sv_distance(a, b) == 0.0

    def test_metric_properties_on_random_triples(self):
        rng = np.random.RandomState(3)
        for _ in range(200):
            cols = [HsvColor(float(h), float(s), float(v)) for h, s, v in rng.random_sample((3, 3))]
            a, b, c = cols
            assert sv_distance(a, b) == pytest.approx(sv_distance(b, a), abs=1e-12)
            assert sv_distance(a, c) <= sv_distance(a, b) + sv_distance(b, c) + 1e-12

    def test_sv_channels_matches_scalar_conversion(self):
        rng = np.random.RandomState(5)
        img = RasterImage(rng.randint(0, 256, size=(6, 7, 3), dtype=np.uint8))
        s, v = sv_channels(img)
        for y in range(img.height):
            for x in range(img.width):
                r, g, b = (int(c) for c in img.data[y, x])
                ref = rgb_to_hsv(r, g, b)
                assert s[y, x] == pytest.approx(ref.s, abs=1e-6)
                assert v[y, x] == pytest.approx(ref.v, abs=1e-6)


class TestPixelBox:
    def test_area(self):
        b = PixelBox(2, 3, 7, 11)
        assert b.area == 40
        assert b.center == (4.5, 7.0)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            PixelBox(3, 0, 3, 5)


class TestPlanTiles:
    def test_exact_division(self):
        grid = plan_tiles(1024, 1024, 512, 0)
        assert set(grid.origins) == {(0, 0), (512, 0), (0, 512), (512, 512)}
        assert grid.pad_x == 0 and grid.pad_y == 0

    def test_edge_clamped_last_column(self):
        # stride 448 gives x origins {0, 448->clamped 88}; 448+512 > 600
        grid = plan_tiles(600, 512, 512, 64)
        assert sorted({o[0] for o in grid.origins}) == [0, 88]
        assert sorted({o[1] for o in grid.origins}) == [0]

    def test_single_tile(self):
        grid = plan_tiles(512, 512, 512, 64)
        assert grid.origins == ((0, 0),)

    def test_small_image_records_pad(self):
        grid = plan_tiles(300, 200, 512, 0)
        assert grid.origins == ((0, 0),)
        assert (grid.pad_x, grid.pad_y) == (212, 312)

    def test_overlap_must_be_smaller_than_tile(self):
        with pytest.raises(ConfigError):
            plan_tiles(1024, 1024, 512, 512)

    def test_coverage_is_total_on_random_configs(self):
        rng = np.random.RandomState(17)
        for _ in range(100):
            w = int(rng.randint(1, 200))
            h = int(rng.randint(1, 200))
            tile = int(rng.randint(1, 64))
            overlap = int(rng.randint(0, tile))
            grid = plan_tiles(w, h, tile, overlap)
            cover = np.zeros((h, w), dtype=np.int32)
            for ox, oy in grid.origins:
                cover[oy : oy + tile, ox : ox + tile] += 1
            assert (cover >= 1).all(), (w, h, tile, overlap)

    def test_deterministic(self):
        a = plan_tiles(777, 333, 128, 32)
        b = plan_tiles(777, 333, 128, 32)
        assert a == b


class TestStitch:
    def _random_image(self, rng, w, h, c=3):
        return RasterImage(rng.randint(0, 256, size=(h, w, c), dtype=np.uint8))

    def test_round_trip_identity(self):
        rng = np.random.RandomState(23)
        img = self._random_image(rng, 150, 90)
        grid = plan_tiles(img.width, img.height, 64, 16)
        tiles = crop_tiles(img, grid)
        out = stitch(tiles, grid, img.width, img.height)
        assert np.array_equal(out.data, img.data)

    def test_round_trip_with_padding(self):
        rng = np.random.RandomState(29)
        img = self._random_image(rng, 40, 30, c=1)
        grid = plan_tiles(img.width, img.height, 64, 0)
        out = stitch(crop_tiles(img, grid), grid, img.width, img.height)
        assert np.array_equal(out.data, img.data)

    def test_conflicting_overlap_last_origin_wins(self):
        grid = plan_tiles(96, 64, 64, 32)
        assert grid.origins == ((0, 0), (32, 0))
        a = RasterImage(np.full((64, 64, 1), 10, dtype=np.uint8))
        b = RasterImage(np.full((64, 64, 1), 200, dtype=np.uint8))
        out = stitch([((0, 0), a), ((32, 0), b)], grid, 96, 64)
        assert (out.data[:, :32] == 10).all()
        assert (out.data[:, 32:] == 200).all()

    def test_missing_tile_is_an_error(self):
        grid = plan_tiles(128, 64, 64, 0)
        tile = RasterImage(np.zeros((64, 64, 1), dtype=np.uint8))
        with pytest.raises(NotFoundError):
            stitch([((0, 0), tile)], grid, 128, 64)

    def test_random_round_trips(self):
        rng = np.random.RandomState(31)
        for _ in range(50):
            w = int(rng.randint(1, 120))
            h = int(rng.randint(1, 120))
            tile = int(rng.randint(1, 80))
            overlap = int(rng.randint(0, tile))
            img = self._random_image(rng, w, h)
            grid = plan_tiles(w, h, tile, overlap)
            out = stitch(crop_tiles(img, grid), grid, w, h)
            assert np.array_equal(out.data, img.data), (w, h, tile, overlap)


class TestTileGridJson:
    def test_round_trip(self, tmp_path):
        grid = plan_tiles(600, 512, 512, 64)
        path = tmp_path / "grid.json"
        save_tile_grid(grid, path)
        assert load_tile_grid(path) == grid

    def test_descriptor_keys(self, tmp_path):
        grid = plan_tiles(100, 100, 64, 0)
        d = grid.to_json_dict()
        assert set(d) == {"tile_size", "overlap", "origins", "pad"}


class TestPngIo:
    @pytest.mark.parametrize("channels", [1, 3, 4])
    def test_8bit_round_trip(self, tmp_path, channels):
        rng = np.random.RandomState(37)
        img = RasterImage(rng.randint(0, 256, size=(9, 13, channels), dtype=np.uint8))
        path = tmp_path / "img.png"
        write_image(img, path)
        back = read_image(path)
        assert np.array_equal(back.data, img.data)

    def test_16bit_gray_round_trip(self, tmp_path):
        rng = np.random.RandomState(41)
        arr = rng.randint(0, 65536, size=(11, 7), dtype=np.uint16)
        path = tmp_path / "gray16.png"
        write_png16(arr, path)
        assert np.array_equal(read_png16(path), arr)

    def test_16bit_two_channel_round_trip(self, tmp_path):
        rng = np.random.RandomState(43)
        arr = rng.randint(0, 65536, size=(5, 6, 2), dtype=np.uint16)
        path = tmp_path / "la16.png"
        write_png16(arr, path)
        assert np.array_equal(read_png16(path), arr)

    def test_16bit_gray_readable_by_pillow(self, tmp_path):
        arr = (np.arange(20, dtype=np.uint16).reshape(4, 5)) * 3000
        path = tmp_path / "gray16.png"
        write_png16(arr, path)
        via_pillow = np.asarray(Image.open(path)).astype(np.uint16)
        assert np.array_equal(via_pillow, arr)

    def test_16bit_reader_handles_pillow_files(self, tmp_path):
        # Pillow picks its own scanline filters; the reader must undo them.
        rng = np.random.RandomState(47)
        arr = rng.randint(0, 65536, size=(16, 16), dtype=np.uint16)
        path = tmp_path / "pillow16.png"
        Image.fromarray(arr).save(path)
        assert np.array_equal(read_png16(path), arr)

    def test_raster_validation(self):
        with pytest.raises(ValueError):
            RasterImage(np.zeros((4, 4, 2), dtype=np.uint8))
        with pytest.raises(ValueError):
            RasterImage(np.zeros((4, 4), dtype=np.float32))
