"""Detector-side post-processing for the fine-stride single-class model:
anchor computation by IoU k-means over annotated box sizes, decoding of raw
detection grids (strides 8/4/2 by default) and greedy NMS.

No network code lives here; grids arrive as files in an explicit
little-endian layout so any inference framework can produce them.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ConfigError, PixelBox

GRID_MAGIC = b"SCGRID01"
SOURCES = ("detector", "segmentation", "fused")
COORD_DECIMALS = 2  # detections are stored at 0.01-px precision


@dataclass(frozen=True)
class Anchor:
    """Prior box size in pixels."""

    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"anchor sides must be positive, got ({self.w}, {self.h})")

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Detection:
    box: PixelBox
    score: float
    source: str = "detector"

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")


@dataclass(frozen=True)
class DetectionGrid:
    """Raw per-cell-per-anchor regression values (tx, ty, tw, th, t_obj)."""

    stride: int
    cells_x: int
    cells_y: int
    anchors: tuple[Anchor, ...]
    raw: np.ndarray  # float32, shape (cells_y, cells_x, n_anchors, 5)

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be positive")
        if not self.anchors:
            raise ValueError("grid needs at least one anchor")
        raw = np.asarray(self.raw, dtype=np.float32)
        expect = (self.cells_y, self.cells_x, len(self.anchors), 5)
        if raw.shape != expect:
            raise ValueError(f"raw shape {raw.shape} != {expect}")
        object.__setattr__(self, "raw", raw)

    @property
    def width(self) -> int:
        return self.cells_x * self.stride

    @property
    def height(self) -> int:
        return self.cells_y * self.stride


# ---------------------------------------------------------------------------
# Anchors: k-means under 1 - IoU of co-centered boxes


def _iou_wh(wh: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """IoU between co-centered boxes, (n, 2) vs (k, 2) -> (n, k)."""
    inter = np.minimum(wh[:, None, 0], centroids[None, :, 0]) * np.minimum(
        wh[:, None, 1], centroids[None, :, 1]
    )
    areas = wh[:, 0] * wh[:, 1]
    careas = centroids[:, 0] * centroids[:, 1]
    union = areas[:, None] + careas[None, :] - inter
    return inter / union


def anchor_cost(wh: np.ndarray, centroids: np.ndarray) -> float:
    """Mean (1 - IoU) of every box against its nearest centroid."""
    return float((1.0 - _iou_wh(wh, centroids).max(axis=1)).mean())


def _seed_plus_plus(wh: np.ndarray, k: int, rng: np.random.RandomState) -> np.ndarray:
    """k-means++ seeding with d = 1 - IoU (squared-distance weighting)."""
    n = wh.shape[0]
    chosen = [int(rng.randint(n))]
    while len(chosen) < k:
        d = 1.0 - _iou_wh(wh, wh[chosen]).max(axis=1)
        weights = d * d
        total = weights.sum()
        if total <= 0:
            # all remaining boxes duplicate a chosen centroid; pick any
            remaining = [i for i in range(n) if i not in chosen]
            chosen.append(remaining[0] if remaining else chosen[-1])
            continue
        r = rng.random_sample() * total
        idx = int(np.searchsorted(np.cumsum(weights), r, side="right"))
        chosen.append(min(idx, n - 1))
    return wh[chosen].copy()


def _fill_empty_clusters(wh: np.ndarray, assign: np.ndarray, k: int) -> np.ndarray:
    """Move the worst-fitting box of an over-full cluster into each empty one
    (first-index ties), so cluster means stay defined."""
    assign = assign.copy()
    for j in range(k):
        if (assign == j).any():
            continue
        counts = np.bincount(assign, minlength=k)
        movable = counts[assign] > 1
        means = np.stack([wh[assign == c].mean(axis=0) for c in range(k) if counts[c]])
        lookup = {c: i for i, c in enumerate(c for c in range(k) if counts[c])}
        own = np.array([means[lookup[a]] for a in assign])
        inter = np.minimum(wh[:, 0], own[:, 0]) * np.minimum(wh[:, 1], own[:, 1])
        d = 1.0 - inter / (wh[:, 0] * wh[:, 1] + own[:, 0] * own[:, 1] - inter)
        d[~movable] = -1.0
        assign[int(np.argmax(d))] = j
    return assign


def _assignment_cost(wh: np.ndarray, assign: np.ndarray, k: int) -> tuple[float, np.ndarray]:
    """Objective of an assignment: mean 1-IoU of each box to its own cluster
    mean. Returns (cost, the k mean centroids)."""
    centroids = np.stack([wh[assign == j].mean(axis=0) for j in range(k)])
    own = centroids[assign]
    inter = np.minimum(wh[:, 0], own[:, 0]) * np.minimum(wh[:, 1], own[:, 1])
    union = wh[:, 0] * wh[:, 1] + own[:, 0] * own[:, 1] - inter
    return float((1.0 - inter / union).mean()), centroids


def _lloyd(
    wh: np.ndarray, seeds: np.ndarray, k: int, max_iter: int
) -> tuple[np.ndarray, list[float]]:
    """Assignment-space Lloyd iterations under 1-IoU distance.

    Centroids are always cluster means. The update is guarded: a reassignment
    that would raise the assignment objective is rejected, so the recorded
    cost history never increases (mean updates alone do not guarantee that
    under an IoU metric).
    """
    assign = _fill_empty_clusters(wh, np.argmax(_iou_wh(wh, seeds), axis=1), k)
    cost, centroids = _assignment_cost(wh, assign, k)
    history = [cost]
    for _ in range(max_iter):
        new_assign = _fill_empty_clusters(wh, np.argmax(_iou_wh(wh, centroids), axis=1), k)
        if np.array_equal(new_assign, assign):
            break
        new_cost, new_centroids = _assignment_cost(wh, new_assign, k)
        if new_cost >= cost - 1e-15:
            break
        assign, cost, centroids = new_assign, new_cost, new_centroids
        history.append(cost)
    return assign, history


def compute_anchors_with_cost(
    boxes: Sequence[tuple[float, float]],
    k: int,
    seed: int = 0,
    restarts: int = 10,
    max_iter: int = 100,
) -> tuple[list[Anchor], float]:
    """Cluster annotated (w, h) sizes into k anchors under 1 - IoU distance.

    Anchors are the cluster means of the best assignment found across
    deterministic k-means++ restarts (consecutive sub-seeds of `seed`; the
    lowest-cost run wins). Returns the anchors sorted by area ascending —
    the finest prediction level takes the smallest — plus the achieved
    assignment objective.
    """
    wh = np.asarray([(float(w), float(h)) for w, h in boxes], dtype=np.float64)
    if wh.ndim != 2 or wh.shape[0] == 0:
        raise ValueError("boxes must be a non-empty sequence of (w, h)")
    if (wh <= 0).any():
        raise ValueError("box sides must be positive")
    if k < 1 or k > wh.shape[0]:
        raise ValueError(f"k={k} must be in 1..{wh.shape[0]}")
    best: np.ndarray | None = None
    best_cost = math.inf
    for restart in range(max(1, restarts)):
        rng = np.random.RandomState(seed + restart)
        assign, _ = _lloyd(wh, _seed_plus_plus(wh, k, rng), k, max_iter)
        cost, centroids = _assignment_cost(wh, assign, k)
        if cost < best_cost - 1e-15:
            best, best_cost = centroids, cost
    assert best is not None
    order = np.argsort(best[:, 0] * best[:, 1], kind="stable")
    return [Anchor(float(w), float(h)) for w, h in best[order]], best_cost


def compute_anchors(
    boxes: Sequence[tuple[float, float]],
    k: int,
    seed: int = 0,
    restarts: int = 10,
    max_iter: int = 100,
) -> list[Anchor]:
    return compute_anchors_with_cost(boxes, k, seed, restarts, max_iter)[0]


def assign_anchors_to_levels(anchors: Sequence[Anchor], strides: Sequence[int]) -> dict[int, list[Anchor]]:
    """Split area-sorted anchors across strides, finest stride first."""
    per = len(anchors) // len(strides)
    if per * len(strides) != len(anchors):
        raise ConfigError(f"{len(anchors)} anchors do not split evenly over {len(strides)} levels")
    ordered = sorted(anchors, key=lambda a: a.area)
    finest_first = sorted(strides)
    return {
        stride: ordered[i * per : (i + 1) * per]
        for i, stride in enumerate(finest_first)
    }


# ---------------------------------------------------------------------------
# Decoding, IoU, NMS


def _sigmoid(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def decode_grid(grid: DetectionGrid, min_score: float = 0.0) -> list[Detection]:
    """Decode raw grid values into boxes.

    center = (cell + sigmoid(txy)) * stride, size = anchor * exp(twh),
    score = sigmoid(t_obj); boxes are clipped to the grid's pixel extent and
    stored at 0.01-px precision. min_score drops cells early (0 keeps all).
    """
    raw = grid.raw
    cy, cx, na, _ = raw.shape
    score = _sigmoid(raw[..., 4])
    keep = score >= min_score
    if not keep.any():
        return []
    iy, ix, ia = np.nonzero(keep)
    txy = _sigmoid(raw[iy, ix, ia, 0:2])
    center_x = (ix + txy[:, 0]) * grid.stride
    center_y = (iy + txy[:, 1]) * grid.stride
    anchor_wh = np.asarray([(a.w, a.h) for a in grid.anchors], dtype=np.float64)[ia]
    wh = anchor_wh * np.exp(raw[iy, ix, ia, 2:4].astype(np.float64))
    # keep boxes two quanta wide so 0.01-px quantization cannot collapse them
    wh = np.maximum(wh, 2 * 10.0**-COORD_DECIMALS)
    x_min = np.clip(center_x - wh[:, 0] / 2.0, 0.0, grid.width)
    x_max = np.clip(center_x + wh[:, 0] / 2.0, 0.0, grid.width)
    y_min = np.clip(center_y - wh[:, 1] / 2.0, 0.0, grid.height)
    y_max = np.clip(center_y + wh[:, 1] / 2.0, 0.0, grid.height)
    coords = np.round(np.stack([x_min, y_min, x_max, y_max], axis=1), COORD_DECIMALS)
    scores = score[iy, ix, ia]
    return [
        Detection(
            box=PixelBox(float(c[0]), float(c[1]), float(c[2]), float(c[3])),
            score=float(s),
            source="detector",
        )
        for c, s in zip(coords, scores)
    ]


def iou(a: PixelBox, b: PixelBox) -> float:
    """Intersection over union; 0 for disjoint boxes, 1 for identical."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def _nms_key(d: Detection) -> tuple:
    return (-d.score, d.box.area, d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max)


def nms(detections: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression.

    Keeps the best-scored detection, drops everything overlapping it at or
    above the threshold, repeats. Score ties prefer the smaller box, then
    lexicographic coordinates; output stays sorted best-first.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold {iou_threshold} outside [0, 1]")
    pending = sorted(detections, key=_nms_key)
    kept: list[Detection] = []
    while pending:
        head = pending.pop(0)
        kept.append(head)
        pending = [d for d in pending if iou(head.box, d.box) < iou_threshold]
    return kept


def shift_detections(detections: Sequence[Detection], dx: float, dy: float) -> list[Detection]:
    """Translate boxes, e.g. from tile coordinates back to the mosaic."""
    return [
        replace(
            d,
            box=PixelBox(
                d.box.x_min + dx, d.box.y_min + dy, d.box.x_max + dx, d.box.y_max + dy
            ),
        )
        for d in detections
    ]


# ---------------------------------------------------------------------------
# File formats


def write_grid(grid: DetectionGrid, path: str | Path) -> None:
    """SCGRID01 layout: magic, u32 stride/cells_x/cells_y/n_anchors, anchor
    (w, h) f32 pairs, then raw f32 in (y, x, anchor, channel) order, all
    little-endian."""
    parts = [GRID_MAGIC]
    parts.append(struct.pack("<IIII", grid.stride, grid.cells_x, grid.cells_y, len(grid.anchors)))
    for a in grid.anchors:
        parts.append(struct.pack("<ff", a.w, a.h))
    parts.append(np.ascontiguousarray(grid.raw, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_grid(path: str | Path) -> DetectionGrid:
    blob = Path(path).read_bytes()
    if blob[:8] != GRID_MAGIC:
        raise ConfigError(f"{path}: bad magic, not a detection grid file")
    stride, cells_x, cells_y, n_anchors = struct.unpack_from("<IIII", blob, 8)
    offset = 8 + 16
    anchors = []
    for _ in range(n_anchors):
        w, h = struct.unpack_from("<ff", blob, offset)
        anchors.append(Anchor(float(w), float(h)))
        offset += 8
    expect = cells_y * cells_x * n_anchors * 5
    raw = np.frombuffer(blob, dtype="<f4", count=expect, offset=offset)
    if raw.size != expect:
        raise ConfigError(f"{path}: truncated grid payload")
    return DetectionGrid(
        stride=int(stride),
        cells_x=int(cells_x),
        cells_y=int(cells_y),
        anchors=tuple(anchors),
        raw=raw.reshape(cells_y, cells_x, n_anchors, 5).copy(),
    )


def detections_to_jsonl(detections: Sequence[Detection]) -> str:
    lines = []
    for d in detections:
        lines.append(
            json.dumps(
                {
                    "x_min": round(d.box.x_min, COORD_DECIMALS),
                    "y_min": round(d.box.y_min, COORD_DECIMALS),
                    "x_max": round(d.box.x_max, COORD_DECIMALS),
                    "y_max": round(d.box.y_max, COORD_DECIMALS),
                    "score": d.score,
                    "source": d.source,
                }
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def detections_from_jsonl(text: str) -> list[Detection]:
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        d = json.loads(line)
        out.append(
            Detection(
                box=PixelBox(float(d["x_min"]), float(d["y_min"]), float(d["x_max"]), float(d["y_max"])),
                score=float(d["score"]),
                source=str(d.get("source", "detector")),
            )
        )
    return out


def write_detections(detections: Sequence[Detection], path: str | Path) -> None:
    Path(path).write_text(detections_to_jsonl(detections))


def read_detections(path: str | Path) -> list[Detection]:
    return detections_from_jsonl(Path(path).read_text())


def write_anchors(anchors: Sequence[Anchor], path: str | Path) -> None:
    Path(path).write_text(json.dumps([{"w": a.w, "h": a.h} for a in anchors], indent=2) + "\n")


def read_anchors(path: str | Path) -> list[Anchor]:
    return [Anchor(float(d["w"]), float(d["h"])) for d in json.loads(Path(path).read_text())]
