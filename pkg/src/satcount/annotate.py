"""Semi-automatic vehicle labeling: seed-click flood fill constrained by the
road color, manual stroke tools, instance bookkeeping and box extraction.

The fill predicate works in (s, v) only. A candidate pixel joins the region
iff it is close to the seed pixel's color AND far from the calibrated road
color; the seed itself is always included. Fills and strokes write fresh
instance ids over background pixels only, so touching ("glued") vehicles
keep distinct ids.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage

from .core import (
    ConflictError,
    CoordinateError,
    HsvColor,
    NotFoundError,
    PixelBox,
    RasterImage,
    StateError,
    read_png16,
    require_inside,
    rgb_to_hsv,
    sv_channels,
    write_png16,
)

_EIGHT_CONNECTED = np.ones((3, 3), dtype=np.int32)

# Display palette for instance rendering; ids cycle through it, so any two
# consecutive ids (glued cars) render in different colors.
PALETTE: tuple[tuple[int, int, int], ...] = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 190), (0, 128, 128), (170, 110, 40),
)

DEFAULT_FILL_TOLERANCE = 0.15
DEFAULT_ROAD_MARGIN = 0.10
UNDO_DEPTH = 64


def palette_color(instance_id: int) -> tuple[int, int, int]:
    if instance_id < 1:
        raise ValueError(f"instance ids start at 1, got {instance_id}")
    return PALETTE[(instance_id - 1) % len(PALETTE)]


class InstanceMask:
    """Per-pixel instance ids: 0 is background, k >= 1 is vehicle instance k.

    Ids need not stay contiguous after deletions. Adjacent pixels holding
    different nonzero ids are distinct vehicles.
    """

    def __init__(self, labels: np.ndarray, next_id: int | None = None):
        labels = np.asarray(labels, dtype=np.int32)
        if labels.ndim != 2:
            raise ValueError(f"labels must be 2-d, got shape {labels.shape}")
        if labels.min(initial=0) < 0:
            raise ValueError("instance ids must be non-negative")
        self.labels = labels
        self.next_id = int(next_id) if next_id is not None else int(labels.max(initial=0)) + 1
        if self.next_id <= int(labels.max(initial=0)):
            raise ValueError("next_id must exceed every existing id")

    @classmethod
    def empty(cls, width: int, height: int) -> "InstanceMask":
        return cls(np.zeros((height, width), dtype=np.int32), next_id=1)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def ids(self) -> list[int]:
        present = np.unique(self.labels)
        return [int(i) for i in present if i != 0]

    def copy(self) -> "InstanceMask":
        return InstanceMask(self.labels.copy(), next_id=self.next_id)

    def to_id_array(self) -> np.ndarray:
        top = int(self.labels.max(initial=0))
        if top > 0xFFFF:
            raise ValueError(f"instance id {top} does not fit 16-bit export")
        return self.labels.astype(np.uint16)

    def to_palette_image(self) -> RasterImage:
        rgb = np.zeros((self.height, self.width, 3), dtype=np.uint8)
        fg = self.labels > 0
        if fg.any():
            pal = np.asarray(PALETTE, dtype=np.uint8)
            rgb[fg] = pal[(self.labels[fg] - 1) % len(PALETTE)]
        return RasterImage(rgb)


def save_mask_ids(mask: InstanceMask, path: str | Path) -> None:
    """Lossless 16-bit single-channel export of the id grid."""
    write_png16(mask.to_id_array(), path)


def load_mask_ids(path: str | Path) -> InstanceMask:
    arr = read_png16(path)
    if arr.ndim != 2:
        raise ValueError(f"{path}: id masks are single-channel")
    return InstanceMask(arr.astype(np.int32))


@dataclass(frozen=True)
class Stroke:
    """Manual labeling stroke: a straight line (exactly 2 points) or a
    freehand polyline, stamped with an L2 disc of brush_radius."""

    kind: str
    points: tuple[tuple[int, int], ...]
    brush_radius: int = 0

    def __post_init__(self):
        if self.kind not in ("line", "freehand"):
            raise ValueError(f"unknown stroke kind {self.kind!r}")
        pts = tuple((int(x), int(y)) for x, y in self.points)
        if not pts:
            raise ValueError("stroke needs at least one point")
        if self.kind == "line" and len(pts) != 2:
            raise ValueError("straight-line strokes take exactly 2 points")
        if self.brush_radius < 0:
            raise ValueError("brush radius must be >= 0")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class LabeledRegion:
    """Result of a fill or stroke: the fresh id and the pixels it claimed."""

    instance_id: int
    pixels: np.ndarray  # (n, 2) array of (y, x), possibly empty
    bounds: Optional[PixelBox]

    @property
    def pixel_count(self) -> int:
        return int(self.pixels.shape[0])


@dataclass
class _Delta:
    indices: np.ndarray
    before: np.ndarray
    after: np.ndarray
    next_before: int
    next_after: int


def bresenham_line(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """Integer line rasterization, endpoints included."""
    points = []
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        points.append((x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy
    return points


def _disc_offsets(radius: int) -> np.ndarray:
    r = int(radius)
    span = np.arange(-r, r + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    keep = dy * dy + dx * dx <= r * r
    return np.stack([dy[keep], dx[keep]], axis=1)


class AnnotationSession:
    """One image being labeled. Mutations are serialized by the caller
    (the HTTP service holds a per-session lock); reads are always safe."""

    def __init__(
        self,
        image: RasterImage,
        mask: InstanceMask | None = None,
        fill_tolerance: float = DEFAULT_FILL_TOLERANCE,
        road_margin: float = DEFAULT_ROAD_MARGIN,
        road_color: HsvColor | None = None,
    ):
        self.image = image
        self.mask = mask if mask is not None else InstanceMask.empty(image.width, image.height)
        if (self.mask.height, self.mask.width) != (image.height, image.width):
            raise ValueError("mask dimensions must match the image")
        self.set_tolerances(fill_tolerance, road_margin)
        self.road_color = road_color
        self._s, self._v = sv_channels(image)
        self._history: deque[_Delta] = deque(maxlen=UNDO_DEPTH)
        self._redo: list[_Delta] = []

    def set_tolerances(self, fill_tolerance: float | None = None, road_margin: float | None = None):
        if fill_tolerance is not None:
            if not 0.0 < fill_tolerance <= 1.0:
                raise ValueError(f"fill_tolerance {fill_tolerance} outside (0, 1]")
            self.fill_tolerance = float(fill_tolerance)
        if road_margin is not None:
            if not 0.0 < road_margin <= 1.0:
                raise ValueError(f"road_margin {road_margin} outside (0, 1]")
            self.road_margin = float(road_margin)

    # -- road calibration ---------------------------------------------------

    def set_road_color(self, x: int, y: int) -> HsvColor:
        """Calibrate the road color from the 3x3 neighborhood mean around a
        click (clamped at image borders)."""
        require_inside(self.image, x, y)
        rgb = self.image.rgb().astype(np.float64)
        window = rgb[max(0, y - 1) : y + 2, max(0, x - 1) : x + 2]
        mean = window.reshape(-1, 3).mean(axis=0)
        self.road_color = rgb_to_hsv(mean[0], mean[1], mean[2])
        return self.road_color

    # -- mutation plumbing --------------------------------------------------

    def _apply_labels(self, flat_indices: np.ndarray, value: int, bump_next: bool) -> None:
        labels = self.mask.labels
        before = labels.flat[flat_indices].copy()
        labels.flat[flat_indices] = value
        after = labels.flat[flat_indices].copy()
        delta = _Delta(
            indices=flat_indices,
            before=before,
            after=after,
            next_before=self.mask.next_id,
            next_after=self.mask.next_id + 1 if bump_next else self.mask.next_id,
        )
        self.mask.next_id = delta.next_after
        self._history.append(delta)
        self._redo.clear()

    def undo(self) -> bool:
        if not self._history:
            return False
        delta = self._history.pop()
        self.mask.labels.flat[delta.indices] = delta.before
        self.mask.next_id = delta.next_before
        self._redo.append(delta)
        return True

    def redo(self) -> bool:
        if not self._redo:
            return False
        delta = self._redo.pop()
        self.mask.labels.flat[delta.indices] = delta.after
        self.mask.next_id = delta.next_after
        self._history.append(delta)
        return True

    # -- labeling operations ------------------------------------------------

    def flood_fill(self, seed_x: int, seed_y: int) -> LabeledRegion:
        """Grow an 8-connected region from the seed and label it with a fresh id.

        A candidate joins iff its (s, v) distance to the seed color is within
        fill_tolerance and its distance to the road color is at least
        road_margin. Only background pixels are claimed; the accepted set is
        independent of visit order.
        """
        if self.road_color is None:
            raise StateError("road color must be set before flood fill")
        require_inside(self.image, seed_x, seed_y)
        labels = self.mask.labels
        if labels[seed_y, seed_x] != 0:
            raise ConflictError(
                f"seed ({seed_x}, {seed_y}) already labeled {int(labels[seed_y, seed_x])}"
            )
        seed_s = self._s[seed_y, seed_x]
        seed_v = self._v[seed_y, seed_x]
        near_seed = np.hypot(self._s - seed_s, self._v - seed_v) <= self.fill_tolerance
        off_road = (
            np.hypot(self._s - self.road_color.s, self._v - self.road_color.v)
            >= self.road_margin
        )
        admissible = near_seed & off_road & (labels == 0)
        admissible[seed_y, seed_x] = True  # the seed is always included
        components, _ = ndimage.label(admissible, structure=_EIGHT_CONNECTED)
        region = components == components[seed_y, seed_x]
        return self._claim(region)

    def apply_stroke(self, stroke: Stroke) -> LabeledRegion:
        """Rasterize a stroke (disc-stamped Bresenham) onto background pixels
        with a fresh id. Existing instances are never overwritten."""
        for x, y in stroke.points:
            require_inside(self.image, x, y)
        path: list[tuple[int, int]] = []
        pts = stroke.points
        if len(pts) == 1:
            path.append(pts[0])
        else:
            for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
                path.extend(bresenham_line(x0, y0, x1, y1))
        target = np.zeros_like(self.mask.labels, dtype=bool)
        if stroke.brush_radius == 0:
            for x, y in path:
                target[y, x] = True
        else:
            offsets = _disc_offsets(stroke.brush_radius)
            centers = np.asarray([(y, x) for x, y in path], dtype=np.int64)
            stamped = centers[:, np.newaxis, :] + offsets[np.newaxis, :, :]
            stamped = stamped.reshape(-1, 2)
            keep = (
                (stamped[:, 0] >= 0)
                & (stamped[:, 0] < self.mask.height)
                & (stamped[:, 1] >= 0)
                & (stamped[:, 1] < self.mask.width)
            )
            stamped = stamped[keep]
            target[stamped[:, 0], stamped[:, 1]] = True
        region = target & (self.mask.labels == 0)
        return self._claim(region)

    def _claim(self, region: np.ndarray) -> LabeledRegion:
        ys, xs = np.nonzero(region)
        if ys.size == 0:
            return LabeledRegion(instance_id=0, pixels=np.empty((0, 2), dtype=np.int64), bounds=None)
        flat = np.flatnonzero(region.ravel())
        new_id = self.mask.next_id
        self._apply_labels(flat, new_id, bump_next=True)
        bounds = PixelBox(
            x_min=float(xs.min()),
            y_min=float(ys.min()),
            x_max=float(xs.max()) + 1.0,
            y_max=float(ys.max()) + 1.0,
        )
        return LabeledRegion(
            instance_id=new_id,
            pixels=np.stack([ys, xs], axis=1),
            bounds=bounds,
        )

    def erase_instance(self, instance_id: int) -> int:
        """Return every pixel of the instance to background; count returned."""
        flat = np.flatnonzero(self.mask.labels.ravel() == instance_id)
        if flat.size == 0:
            raise NotFoundError(f"no instance with id {instance_id}")
        self._apply_labels(flat, 0, bump_next=False)
        return int(flat.size)


def extract_boxes(mask: InstanceMask) -> list[tuple[int, PixelBox]]:
    """One tight axis-aligned box per distinct nonzero id, ordered by id.

    Touching instances with different ids yield separate (possibly
    overlapping) boxes.
    """
    labels = mask.labels
    out: list[tuple[int, PixelBox]] = []
    if labels.max(initial=0) == 0:
        return out
    # find_objects returns the tight bounding slice per label value.
    for idx, sl in enumerate(ndimage.find_objects(labels)):
        if sl is None:
            continue
        out.append(
            (
                idx + 1,
                PixelBox(
                    x_min=float(sl[1].start),
                    y_min=float(sl[0].start),
                    x_max=float(sl[1].stop),
                    y_max=float(sl[0].stop),
                ),
            )
        )
    return out


def boxes_to_jsonl(boxes: Iterable[tuple[int, PixelBox]]) -> str:
    lines = []
    for instance_id, box in boxes:
        lines.append(
            json.dumps(
                {
                    "id": int(instance_id),
                    "x_min": int(box.x_min),
                    "y_min": int(box.y_min),
                    "x_max": int(box.x_max),
                    "y_max": int(box.y_max),
                }
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def boxes_from_jsonl(text: str) -> list[tuple[int, PixelBox]]:
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        d = json.loads(line)
        out.append(
            (
                int(d["id"]),
                PixelBox(
                    x_min=float(d["x_min"]),
                    y_min=float(d["y_min"]),
                    x_max=float(d["x_max"]),
                    y_max=float(d["y_max"]),
                ),
            )
        )
    return out
