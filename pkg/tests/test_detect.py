"""Anchor k-means vs exhaustive oracle, grid decoding, IoU vs pixel
enumeration, NMS behavior and the binary grid format."""

import math

import numpy as np
import pytest

from oracles import exhaustive_anchor_optimum, pixel_enumeration_iou

from satcount.core import ConfigError, PixelBox
from satcount.detect import (
    Anchor,
    Detection,
    DetectionGrid,
    assign_anchors_to_levels,
    compute_anchors,
    compute_anchors_with_cost,
    decode_grid,
    detections_from_jsonl,
    detections_to_jsonl,
    iou,
    nms,
    read_grid,
    shift_detections,
    write_grid,
)


def random_box(rng, canvas=64):
    x0 = int(rng.randint(0, canvas - 1))
    y0 = int(rng.randint(0, canvas - 1))
    w = int(rng.randint(1, canvas - x0))
    h = int(rng.randint(1, canvas - y0))
    return PixelBox(x0, y0, x0 + w, y0 + h)


class TestComputeAnchors:
    def test_degenerate_single_cluster(self):
        anchors = compute_anchors([(5, 8)] * 6, k=1)
        assert anchors == [Anchor(5, 8)]

    def test_single_cluster_centroid_is_the_mean(self):
        anchors, cost = compute_anchors_with_cost([(4, 8), (6, 8)], k=1)
        assert anchors[0].w == pytest.approx(5.0)
        assert anchors[0].h == pytest.approx(8.0)
        assert cost == pytest.approx(exhaustive_anchor_optimum([(4, 8), (6, 8)], 1), abs=1e-12)

    def test_k_equals_distinct_boxes_is_zero_cost(self):
        boxes = [(4, 7), (9, 5), (6, 12)]
        anchors = compute_anchors(boxes, k=3)
        assert {(a.w, a.h) for a in anchors} == set(boxes)

    def test_matches_exhaustive_oracle_on_small_sets(self):
        rng = np.random.RandomState(113)
        fixtures = [
            ([(5, 8)] * 4, 1),
            ([(4, 8), (6, 8)], 1),
            ([(4, 8), (6, 8), (20, 10)], 2),
            ([(3, 5), (4, 6), (10, 9), (11, 8), (30, 14)], 2),
            ([(2, 3), (2, 4), (8, 8), (9, 7), (25, 10), (26, 11)], 3),
        ]
        for _ in range(4):
            n = int(rng.randint(4, 9))
            boxes = [(float(rng.randint(2, 30)), float(rng.randint(2, 30))) for _ in range(n)]
            fixtures.append((boxes, int(rng.randint(1, 4))))
        for boxes, k in fixtures:
            _, got = compute_anchors_with_cost(boxes, k=k, seed=0)
            want = exhaustive_anchor_optimum(boxes, k)
            assert got == pytest.approx(want, abs=1e-9), (boxes, k)

    def test_objective_never_increases_across_iterations(self):
        from satcount.detect import _lloyd, _seed_plus_plus

        rng = np.random.RandomState(149)
        for _ in range(30):
            n = int(rng.randint(3, 20))
            k = int(rng.randint(1, min(4, n + 1)))
            wh = rng.randint(1, 40, size=(n, 2)).astype(np.float64)
            seeds = _seed_plus_plus(wh, k, rng)
            _, history = _lloyd(wh, seeds, k, 100)
            assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))

    def test_sorted_by_area(self):
        anchors = compute_anchors([(2, 2), (10, 10), (5, 5), (2, 3), (9, 11), (5, 6)], k=3)
        areas = [a.area for a in anchors]
        assert areas == sorted(areas)

    def test_deterministic_given_seed(self):
        boxes = [(4, 8), (5, 9), (10, 4), (12, 5), (3, 3), (20, 18)]
        a = compute_anchors(boxes, k=3, seed=7)
        b = compute_anchors(boxes, k=3, seed=7)
        assert a == b

    def test_k_larger_than_boxes_rejected(self):
        with pytest.raises(ValueError):
            compute_anchors([(5, 8)], k=2)

    def test_level_assignment_finest_gets_smallest(self):
        anchors = [Anchor(2, 3), Anchor(4, 5), Anchor(5, 8), Anchor(6, 9), Anchor(10, 12), Anchor(11, 14)]
        levels = assign_anchors_to_levels(anchors, strides=(8, 4, 2))
        assert levels[2] == [Anchor(2, 3), Anchor(4, 5)]
        assert levels[8] == [Anchor(10, 12), Anchor(11, 14)]

    def test_level_assignment_requires_even_split(self):
        with pytest.raises(ConfigError):
            assign_anchors_to_levels([Anchor(2, 3)] * 4, strides=(8, 4, 2))


class TestDecodeGrid:
    def _grid(self, stride, cells, anchors=((5.0, 8.0),), raw=None):
        n = len(anchors)
        if raw is None:
            raw = np.zeros((cells, cells, n, 5), dtype=np.float32)
        return DetectionGrid(
            stride=stride,
            cells_x=cells,
            cells_y=cells,
            anchors=tuple(Anchor(w, h) for w, h in anchors),
            raw=raw,
        )

    def test_all_zero_raw_decodes_cell_centers(self):
        grid = self._grid(stride=2, cells=8)
        dets = decode_grid(grid)
        assert len(dets) == 64
        # cell (0,0): center (1,1), size (5,8) -> clipped at the canvas edge
        d0 = dets[0]
        assert d0.score == pytest.approx(0.5)
        assert (d0.box.x_min, d0.box.y_min) == (0.0, 0.0)
        assert (d0.box.x_max, d0.box.y_max) == (3.5, 5.0)
        # interior cell (3, 2): center (7, 5), full size (5, 8)
        interior = dets[2 * 8 + 3]
        assert (interior.box.x_min, interior.box.x_max) == (4.5, 9.5)
        assert (interior.box.y_min, interior.box.y_max) == (1.0, 9.0)
        assert interior.box.width == pytest.approx(5.0)
        assert interior.box.height == pytest.approx(8.0)

    def test_stride_four_cell_offsets(self):
        grid = self._grid(stride=4, cells=8)
        dets = decode_grid(grid)
        d = dets[2 * 8 + 3]  # cell (x=3, y=2)
        assert d.box.center == (14.0, 10.0)

    def test_log_size_regression(self):
        raw = np.zeros((1, 1, 1, 5), dtype=np.float32)
        raw[0, 0, 0, 2] = math.log(2.0)  # tw doubles the anchor width
        grid = DetectionGrid(stride=32, cells_x=1, cells_y=1, anchors=(Anchor(5, 8),), raw=raw)
        d = decode_grid(grid)[0]
        assert d.box.width == pytest.approx(10.0)
        assert d.box.height == pytest.approx(8.0)

    def test_scores_open_interval_and_boxes_clipped(self):
        rng = np.random.RandomState(127)
        raw = rng.normal(0, 3, size=(6, 6, 2, 5)).astype(np.float32)
        grid = self._grid(stride=4, cells=6, anchors=((5.0, 8.0), (12.0, 6.0)), raw=raw)
        for d in decode_grid(grid):
            assert 0.0 < d.score < 1.0
            assert 0.0 <= d.box.x_min < d.box.x_max <= grid.width
            assert 0.0 <= d.box.y_min < d.box.y_max <= grid.height

    def test_min_score_prefilter(self):
        raw = np.zeros((2, 2, 1, 5), dtype=np.float32)
        raw[..., 4] = -10.0
        raw[1, 1, 0, 4] = 3.0
        grid = self._grid(stride=2, cells=2, raw=raw)
        dets = decode_grid(grid, min_score=0.5)
        assert len(dets) == 1
        assert dets[0].score > 0.95


class TestIou:
    def test_identical(self):
        b = PixelBox(3, 4, 10, 12)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(PixelBox(0, 0, 4, 4), PixelBox(10, 10, 12, 12)) == 0.0

    def test_hand_derived_third(self):
        # inter 2x4=8, union 16+16-8=24
        assert iou(PixelBox(0, 0, 4, 4), PixelBox(2, 0, 6, 4)) == pytest.approx(1 / 3, abs=1e-12)

    def test_matches_pixel_enumeration_exactly(self):
        rng = np.random.RandomState(131)
        for _ in range(300):
            a = random_box(rng)
            b = random_box(rng)
            assert iou(a, b) == pytest.approx(pixel_enumeration_iou(a, b), abs=0)
            assert iou(a, b) == iou(b, a)


class TestNms:
    def test_single_detection(self):
        d = Detection(PixelBox(0, 0, 5, 8), 0.7)
        assert nms([d], 0.3) == [d]

    def test_identical_boxes_keep_best_score(self):
        box = PixelBox(0, 0, 5, 8)
        a = Detection(box, 0.9)
        b = Detection(box, 0.8)
        assert nms([b, a], 0.5) == [a]

    def test_chain_keeps_ends(self):
        # A~B and B~C overlap at 1/3, A and C are disjoint
        a = Detection(PixelBox(0, 0, 4, 4), 0.9)
        b = Detection(PixelBox(2, 0, 6, 4), 0.8)
        c = Detection(PixelBox(4, 0, 8, 4), 0.7)
        assert iou(a.box, b.box) == pytest.approx(1 / 3)
        assert iou(a.box, c.box) == 0.0
        assert nms([a, b, c], 0.3) == [a, c]

    def test_idempotent_and_pairwise_below_threshold(self):
        rng = np.random.RandomState(137)
        for _ in range(60):
            dets = [
                Detection(random_box(rng, canvas=48), float(rng.random_sample()))
                for _ in range(int(rng.randint(1, 40)))
            ]
            thr = float(rng.random_sample() * 0.8 + 0.1)
            kept = nms(dets, thr)
            assert nms(kept, thr) == kept
            for i, d1 in enumerate(kept):
                for d2 in kept[i + 1 :]:
                    assert iou(d1.box, d2.box) < thr
            scores = [d.score for d in kept]
            assert scores == sorted(scores, reverse=True)

    def test_score_tie_prefers_smaller_box(self):
        big = Detection(PixelBox(0, 0, 8, 8), 0.5)
        small = Detection(PixelBox(0, 0, 4, 8), 0.5)  # IoU 0.5 with big
        kept = nms([big, small], 0.4)
        assert kept == [small]


class TestGridFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.RandomState(139)
        raw = rng.normal(size=(4, 6, 2, 5)).astype(np.float32)
        grid = DetectionGrid(
            stride=4,
            cells_x=6,
            cells_y=4,
            anchors=(Anchor(5.0, 8.0), Anchor(11.0, 6.5)),
            raw=raw,
        )
        path = tmp_path / "grid.bin"
        write_grid(grid, path)
        back = read_grid(path)
        assert back.stride == 4 and back.cells_x == 6 and back.cells_y == 4
        assert back.anchors == grid.anchors
        assert np.array_equal(back.raw, raw)

    def test_header_layout(self, tmp_path):
        grid = DetectionGrid(
            stride=2, cells_x=1, cells_y=1, anchors=(Anchor(5, 8),),
            raw=np.zeros((1, 1, 1, 5), dtype=np.float32),
        )
        path = tmp_path / "grid.bin"
        write_grid(grid, path)
        blob = path.read_bytes()
        assert blob[:8] == b"SCGRID01"
        assert len(blob) == 8 + 16 + 8 + 1 * 1 * 1 * 5 * 4

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTAGRID" + b"\x00" * 64)
        with pytest.raises(ConfigError):
            read_grid(path)


class TestDetectionJsonl:
    def test_round_trip(self):
        dets = [
            Detection(PixelBox(1.25, 2.5, 6.75, 10.0), 0.875, "detector"),
            Detection(PixelBox(0, 0, 5, 8), 1.0, "segmentation"),
        ]
        assert detections_from_jsonl(detections_to_jsonl(dets)) == dets

    def test_coordinates_quantized_to_hundredths(self):
        d = Detection(PixelBox(1.23456, 0, 5.98765, 8), 0.5)
        line = detections_to_jsonl([d])
        assert '"x_min": 1.23' in line
        assert '"x_max": 5.99' in line

    def test_shift(self):
        d = Detection(PixelBox(1, 2, 3, 4), 0.5)
        moved = shift_detections([d], 10, 20)[0]
        assert (moved.box.x_min, moved.box.y_min) == (11, 22)
        assert moved.score == d.score

    def test_validation(self):
        with pytest.raises(ValueError):
            Detection(PixelBox(0, 0, 1, 1), 1.5)
        with pytest.raises(ValueError):
            Detection(PixelBox(0, 0, 1, 1), 0.5, source="oracle")
