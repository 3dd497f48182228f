"""Mixed-model fusion: keep detector boxes that are confident on their own,
plus lower-confidence boxes corroborated by the segmentation blobs.

Fusion only filters and relabels the detector's boxes; it never invents
detections from segmentation-only blobs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

from .core import ConfigError
from .counting import Blob
from .detect import Detection, iou

OVERLAP_RULES = ("center", "iou")


@dataclass(frozen=True)
class FusionConfig:
    t_high: float = 0.5
    t_low: float = 0.2
    overlap_rule: str = "center"
    blob_iou: float = 0.3

    def __post_init__(self):
        for name, t in (("t_high", self.t_high), ("t_low", self.t_low)):
            if not 0.0 <= t <= 1.0:
                raise ConfigError(f"{name} {t} outside [0, 1]")
        if self.t_low > self.t_high:
            raise ConfigError(f"t_low {self.t_low} exceeds t_high {self.t_high}")
        if self.overlap_rule not in OVERLAP_RULES:
            raise ConfigError(f"overlap_rule must be one of {OVERLAP_RULES}")
        if not 0.0 <= self.blob_iou <= 1.0:
            raise ConfigError(f"blob_iou {self.blob_iou} outside [0, 1]")


class _BlobMatcher:
    """Answers 'does this detection overlap the segmentation?' under the
    configured rule. center: the box center pixel lies inside some blob;
    iou: the box overlaps some blob's bounds at blob_iou or more."""

    def __init__(self, blobs: Sequence[Blob], cfg: FusionConfig):
        self._cfg = cfg
        self._blobs = list(blobs)
        if cfg.overlap_rule == "center":
            pixels: set[tuple[int, int]] = set()
            for blob in self._blobs:
                pixels.update(map(tuple, blob.pixels.tolist()))
            self._pixels = pixels

    def __call__(self, det: Detection) -> bool:
        if self._cfg.overlap_rule == "center":
            cx, cy = det.box.center
            return (int(math.floor(cy)), int(math.floor(cx))) in self._pixels
        return any(iou(det.box, blob.bounds) >= self._cfg.blob_iou for blob in self._blobs)


def fuse(
    detections: Sequence[Detection],
    blobs: Sequence[Blob],
    cfg: FusionConfig | None = None,
) -> list[Detection]:
    """Union of confident detections and blob-corroborated ones.

    Kept detections found by both models carry source "fused"; detections
    kept on score alone stay "detector". Input should already be
    NMS-deduplicated; output preserves input order.
    """
    cfg = cfg or FusionConfig()
    matcher = _BlobMatcher(blobs, cfg)
    out: list[Detection] = []
    for det in detections:
        confident = det.score >= cfg.t_high
        corroborated = det.score >= cfg.t_low and matcher(det)
        if not (confident or corroborated):
            continue
        out.append(replace(det, source="fused") if corroborated else det)
    return out


def fused_count(detections: Sequence[Detection]) -> int:
    """The mixed model's vehicle count is simply the kept-box cardinality."""
    return len(detections)
