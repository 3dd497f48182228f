"""Segmentation-side post-processing: per-pixel vote aggregation over
test-time-augmented predictions, majority thresholding, blob extraction and
the size/shape vehicle-count estimator.

Counts divide each blob's area by the mean pixels-per-vehicle, picking the
lined-cars mean for elongated blobs and the side-by-side mean otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .core import ConfigError, PixelBox, read_png16, write_png16
from .annotate import InstanceMask

_EIGHT_CONNECTED = np.ones((3, 3), dtype=np.int32)


# ---------------------------------------------------------------------------
# Test-time-augmentation transforms and vote aggregation


@dataclass(frozen=True)
class GeometricTransform:
    """Invertible augmentation applied to the canvas before prediction.

    Forward order: crop -> flips -> CCW quarter-turn rotations -> zero pad.
    crop is (x, y, w, h) in canvas coordinates (None = whole canvas);
    pad is (left, top, right, bottom).
    """

    rot90: int = 0
    flip_h: bool = False
    flip_v: bool = False
    pad: tuple[int, int, int, int] = (0, 0, 0, 0)
    crop: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "rot90", int(self.rot90) % 4)
        pad = tuple(int(p) for p in self.pad)
        if len(pad) != 4 or any(p < 0 for p in pad):
            raise ConfigError(f"pad must be 4 non-negative ints, got {self.pad}")
        object.__setattr__(self, "pad", pad)
        if self.crop is not None:
            crop = tuple(int(c) for c in self.crop)
            if len(crop) != 4 or crop[0] < 0 or crop[1] < 0 or crop[2] < 1 or crop[3] < 1:
                raise ConfigError(f"crop must be (x, y, w, h) with positive size, got {self.crop}")
            object.__setattr__(self, "crop", crop)

    def window(self, canvas_shape: tuple[int, int]) -> tuple[int, int, int, int]:
        """(x, y, w, h) region of the canvas this transform covers."""
        h, w = canvas_shape
        if self.crop is None:
            return 0, 0, w, h
        x, y, cw, ch = self.crop
        if x + cw > w or y + ch > h:
            raise ConfigError(f"crop {self.crop} exceeds canvas {w}x{h}")
        return x, y, cw, ch

    def apply(self, canvas: np.ndarray) -> np.ndarray:
        """Forward-transform canvas content (used to build ensembles and by tests)."""
        x, y, w, h = self.window(canvas.shape[:2])
        out = canvas[y : y + h, x : x + w]
        if self.flip_h:
            out = np.fliplr(out)
        if self.flip_v:
            out = np.flipud(out)
        out = np.rot90(out, self.rot90)
        left, top, right, bottom = self.pad
        if any(self.pad):
            out = np.pad(out, ((top, bottom), (left, right)))
        return np.ascontiguousarray(out)

    def invert(self, prediction: np.ndarray, canvas_shape: tuple[int, int]):
        """Map a prediction back onto the canvas.

        Returns ((x, y, w, h) canvas window, canvas-aligned array of that shape).
        Raises ConfigError when the prediction's shape is inconsistent with
        the declared transform (the descriptor would not be invertible).
        """
        x, y, w, h = self.window(canvas_shape)
        expect = (h, w) if self.rot90 % 2 == 0 else (w, h)
        left, top, right, bottom = self.pad
        expect_padded = (expect[0] + top + bottom, expect[1] + left + right)
        if prediction.shape[:2] != expect_padded:
            raise ConfigError(
                f"prediction shape {prediction.shape[:2]} does not match transform"
                f" (expected {expect_padded})"
            )
        out = prediction[top : top + expect[0], left : left + expect[1]]
        out = np.rot90(out, -self.rot90)
        if self.flip_v:
            out = np.flipud(out)
        if self.flip_h:
            out = np.fliplr(out)
        return (x, y, w, h), np.ascontiguousarray(out)

    def to_json_dict(self) -> dict:
        d: dict = {"rot90": self.rot90, "flip_h": self.flip_h, "flip_v": self.flip_v}
        if any(self.pad):
            d["pad"] = list(self.pad)
        if self.crop is not None:
            d["crop"] = list(self.crop)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "GeometricTransform":
        known = {"rot90", "flip_h", "flip_v", "pad", "crop"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown transform keys {sorted(unknown)}")
        return cls(
            rot90=d.get("rot90", 0),
            flip_h=bool(d.get("flip_h", False)),
            flip_v=bool(d.get("flip_v", False)),
            pad=tuple(d.get("pad", (0, 0, 0, 0))),
            crop=tuple(d["crop"]) if d.get("crop") is not None else None,
        )


@dataclass(frozen=True)
class ProbabilityMask:
    """Per-pixel vote tallies: vehicle votes and total votes cast."""

    votes_vehicle: np.ndarray
    votes_total: np.ndarray

    def __post_init__(self):
        vv = np.asarray(self.votes_vehicle, dtype=np.uint16)
        vt = np.asarray(self.votes_total, dtype=np.uint16)
        if vv.shape != vt.shape or vv.ndim != 2:
            raise ValueError("vote planes must be 2-d and congruent")
        if (vv > vt).any():
            raise ValueError("vehicle votes exceed total votes somewhere")
        object.__setattr__(self, "votes_vehicle", vv)
        object.__setattr__(self, "votes_total", vt)

    @property
    def height(self) -> int:
        return self.votes_total.shape[0]

    @property
    def width(self) -> int:
        return self.votes_total.shape[1]


def aggregate_votes(
    predictions: Sequence[tuple[np.ndarray, GeometricTransform]],
    shape: tuple[int, int] | None = None,
) -> ProbabilityMask:
    """Inverse-transform each augmented prediction onto the canvas and tally
    per-pixel votes. Cropped predictions vote only inside their footprint.

    The canvas shape is inferred from the first crop-free prediction when not
    given. Raises when the ensemble leaves any canvas pixel with zero total
    votes: downstream thresholding needs full coverage.
    """
    if not predictions:
        raise ValueError("no predictions to aggregate")
    if shape is None:
        for pred, tf in predictions:
            if tf.crop is None:
                left, top, right, bottom = tf.pad
                ph = pred.shape[0] - top - bottom
                pw = pred.shape[1] - left - right
                shape = (ph, pw) if tf.rot90 % 2 == 0 else (pw, ph)
                break
        if shape is None:
            raise ConfigError("canvas shape needed: every prediction is cropped")
    votes_vehicle = np.zeros(shape, dtype=np.uint16)
    votes_total = np.zeros(shape, dtype=np.uint16)
    for pred, tf in predictions:
        (x, y, w, h), aligned = tf.invert(np.asarray(pred), shape)
        votes_vehicle[y : y + h, x : x + w] += (aligned > 0).astype(np.uint16)
        votes_total[y : y + h, x : x + w] += 1
    uncovered = int((votes_total == 0).sum())
    if uncovered:
        raise ConfigError(f"{uncovered} canvas pixels received no vote")
    return ProbabilityMask(votes_vehicle, votes_total)


def threshold_votes(pmask: ProbabilityMask) -> np.ndarray:
    """Strict-majority vote: vehicle iff votes_vehicle > votes_total / 2.

    Exact ties go to background — false positives are the costlier error.
    """
    if (pmask.votes_total == 0).any():
        raise ValueError("votes_total must be >= 1 everywhere")
    vv = pmask.votes_vehicle.astype(np.uint32)
    vt = pmask.votes_total.astype(np.uint32)
    return (2 * vv > vt).astype(np.uint8)


def save_probability_mask(pmask: ProbabilityMask, path: str | Path) -> None:
    stacked = np.stack([pmask.votes_vehicle, pmask.votes_total], axis=2)
    write_png16(stacked, path)


def load_probability_mask(path: str | Path) -> ProbabilityMask:
    arr = read_png16(path)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(f"{path}: expected a 2-channel vote mask")
    return ProbabilityMask(arr[:, :, 0], arr[:, :, 1])


# ---------------------------------------------------------------------------
# Blobs and counting


@dataclass(frozen=True)
class Blob:
    """8-connected foreground component with shape statistics."""

    pixels: np.ndarray  # (n, 2) int32 rows of (y, x)
    area: int
    bounds: PixelBox
    elongation: float


def _elongation(ys: np.ndarray, xs: np.ndarray) -> float:
    """Major/minor axis ratio from second-order central moments.

    Each pixel contributes its unit-square moment (the +1/12 terms), so a
    solid axis-aligned rectangle scores exactly its side ratio and a single
    pixel scores 1.
    """
    n = ys.size
    cx = xs.mean()
    cy = ys.mean()
    dx = xs - cx
    dy = ys - cy
    mxx = float((dx * dx).sum()) / n + 1.0 / 12.0
    myy = float((dy * dy).sum()) / n + 1.0 / 12.0
    mxy = float((dx * dy).sum()) / n
    half_trace = (mxx + myy) / 2.0
    spread = math.hypot((mxx - myy) / 2.0, mxy)
    major = half_trace + spread
    minor = half_trace - spread
    return math.sqrt(major / minor)


def connected_components(mask: np.ndarray) -> list[Blob]:
    """Label 8-connected foreground blobs with area, bounds and elongation."""
    binary = np.asarray(mask) > 0
    labeled, _ = ndimage.label(binary, structure=_EIGHT_CONNECTED)
    blobs: list[Blob] = []
    for idx, sl in enumerate(ndimage.find_objects(labeled)):
        ys, xs = np.nonzero(labeled[sl] == idx + 1)
        ys = (ys + sl[0].start).astype(np.int32)
        xs = (xs + sl[1].start).astype(np.int32)
        blobs.append(
            Blob(
                pixels=np.stack([ys, xs], axis=1),
                area=int(ys.size),
                bounds=PixelBox(
                    x_min=float(xs.min()),
                    y_min=float(ys.min()),
                    x_max=float(xs.max()) + 1.0,
                    y_max=float(ys.max()) + 1.0,
                ),
                elongation=_elongation(ys.astype(np.float64), xs.astype(np.float64)),
            )
        )
    return blobs


# At 50 cm/px a vehicle covers about 5x8 px, so 40 px/vehicle is the
# uncalibrated default for both packing regimes.
DEFAULT_PX_PER_VEHICLE = 40.0


@dataclass(frozen=True)
class CountEstimatorConfig:
    mean_px_lined: float = DEFAULT_PX_PER_VEHICLE
    mean_px_side_by_side: float = DEFAULT_PX_PER_VEHICLE
    min_blob_area: int = 12
    elongation_threshold: float = 2.5

    def __post_init__(self):
        if self.mean_px_lined <= 0 or self.mean_px_side_by_side <= 0:
            raise ValueError("pixels-per-vehicle means must be positive")
        if self.min_blob_area <= 0:
            raise ValueError("min_blob_area must be positive")
        if self.elongation_threshold < 1.0:
            raise ValueError("elongation_threshold must be >= 1")


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def estimate_count(blob: Blob, cfg: CountEstimatorConfig) -> int:
    """Vehicles in one blob: area divided by the packing-appropriate mean,
    at least 1 for any blob that clears the noise floor."""
    if blob.area < cfg.min_blob_area:
        return 0
    divisor = (
        cfg.mean_px_lined
        if blob.elongation >= cfg.elongation_threshold
        else cfg.mean_px_side_by_side
    )
    return max(1, _round_half_away(blob.area / divisor))


@dataclass(frozen=True)
class BlobCount:
    blob: Blob
    count: int


@dataclass(frozen=True)
class CountReport:
    total: int
    items: tuple[BlobCount, ...]

    def blobs(self) -> list[Blob]:
        return [item.blob for item in self.items]

    def to_json_dict(self) -> dict:
        return {
            "total": self.total,
            "blobs": [
                {
                    "area": item.blob.area,
                    "bounds": [
                        item.blob.bounds.x_min,
                        item.blob.bounds.y_min,
                        item.blob.bounds.x_max,
                        item.blob.bounds.y_max,
                    ],
                    "elongation": round(item.blob.elongation, 4),
                    "count": item.count,
                }
                for item in self.items
            ],
        }


def count_image(mask: np.ndarray, cfg: CountEstimatorConfig | None = None) -> CountReport:
    """Total vehicle estimate for a binary mask, with the per-blob breakdown."""
    cfg = cfg or CountEstimatorConfig()
    items = tuple(BlobCount(blob, estimate_count(blob, cfg)) for blob in connected_components(mask))
    return CountReport(total=sum(i.count for i in items), items=items)


def save_count_report(report: CountReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")


def calibrate_estimator(
    masks: Iterable[InstanceMask],
    elongation_threshold: float = 2.5,
    min_blob_area: int = 12,
) -> CountEstimatorConfig:
    """Derive pixels-per-vehicle means from annotated instance masks.

    Touching instances merge into blocks; each block contributes
    area / instances-in-block to the lined bucket when elongated, otherwise
    to the side-by-side bucket. Empty buckets keep the default mean.
    """
    lined: list[float] = []
    side: list[float] = []
    for mask in masks:
        blobs = connected_components(mask.labels > 0)
        for blob in blobs:
            ids = np.unique(mask.labels[blob.pixels[:, 0], blob.pixels[:, 1]])
            ids = ids[ids > 0]
            if ids.size == 0:
                continue
            per_vehicle = blob.area / ids.size
            if blob.elongation >= elongation_threshold:
                lined.append(per_vehicle)
            else:
                side.append(per_vehicle)
    return CountEstimatorConfig(
        mean_px_lined=float(np.mean(lined)) if lined else DEFAULT_PX_PER_VEHICLE,
        mean_px_side_by_side=float(np.mean(side)) if side else DEFAULT_PX_PER_VEHICLE,
        min_blob_area=min_blob_area,
        elongation_threshold=elongation_threshold,
    )
