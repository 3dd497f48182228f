"""Ground-truth matching and the recall/precision/count report.

Matching is greedy in score order with one-to-one claims: a second detection
on an already-claimed ground-truth box counts as a false positive (the
duplicate-box failure mode detectors show on tiny vehicles).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .annotate import boxes_from_jsonl
from .core import PixelBox
from .counting import Blob
from .detect import Detection, iou


@dataclass(frozen=True)
class GroundTruth:
    """Labeled vehicle boxes with unique instance ids."""

    entries: tuple[tuple[int, PixelBox], ...]

    def __post_init__(self):
        ids = [i for i, _ in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("ground-truth ids must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_jsonl(cls, text: str) -> "GroundTruth":
        return cls(entries=tuple(boxes_from_jsonl(text)))

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruth":
        return cls.from_jsonl(Path(path).read_text())


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int
    assignment: tuple[tuple[int, int], ...]  # (prediction index, ground-truth id)


@dataclass(frozen=True)
class EvalReport:
    counted: int
    tp: int
    fp: int
    fn: int
    recall: Optional[float]
    precision: Optional[float]
    estimator_count: Optional[int] = None

    def to_json_dict(self) -> dict:
        d: dict = {"counted": self.counted, "tp": self.tp, "fp": self.fp, "fn": self.fn}
        # undefined metrics are omitted, never reported as 0
        if self.recall is not None:
            d["recall"] = self.recall
        if self.precision is not None:
            d["precision"] = self.precision
        if self.estimator_count is not None:
            d["estimator_count"] = self.estimator_count
        return d


def _pred_order(preds: Sequence[Detection]) -> list[int]:
    return sorted(
        range(len(preds)),
        key=lambda i: (
            -preds[i].score,
            preds[i].box.area,
            preds[i].box.x_min,
            preds[i].box.y_min,
            preds[i].box.x_max,
            preds[i].box.y_max,
        ),
    )


def match_detections(
    preds: Sequence[Detection], gt: GroundTruth, iou_min: float
) -> MatchResult:
    """Greedy one-to-one matching in descending score order.

    Each prediction claims the unmatched ground-truth box it overlaps best,
    provided IoU reaches iou_min. Unclaimed predictions are FP; unclaimed
    ground truth are FN.
    """
    if not 0.0 <= iou_min <= 1.0:
        raise ValueError(f"iou_min {iou_min} outside [0, 1]")
    unmatched = dict(gt.entries)
    assignment: list[tuple[int, int]] = []
    for idx in _pred_order(preds):
        box = preds[idx].box
        best_id = None
        best_iou = 0.0
        for gid, gbox in unmatched.items():
            val = iou(box, gbox)
            if val > best_iou:
                best_id, best_iou = gid, val
        if best_id is not None and best_iou >= iou_min:
            assignment.append((idx, best_id))
            del unmatched[best_id]
    tp = len(assignment)
    return MatchResult(
        tp=tp,
        fp=len(preds) - tp,
        fn=len(gt) - tp,
        assignment=tuple(assignment),
    )


def metrics(tp: int, fp: int, fn: int, estimator_count: int | None = None) -> EvalReport:
    """recall = tp/(tp+fn), precision = tp/(tp+fp); a zero denominator makes
    the metric undefined (absent), not zero. counted = tp + fp."""
    for name, v in (("tp", tp), ("fp", fp), ("fn", fn)):
        if v < 0:
            raise ValueError(f"{name} must be non-negative, got {v}")
    recall = tp / (tp + fn) if tp + fn > 0 else None
    precision = tp / (tp + fp) if tp + fp > 0 else None
    return EvalReport(
        counted=tp + fp,
        tp=tp,
        fp=fp,
        fn=fn,
        recall=recall,
        precision=precision,
        estimator_count=estimator_count,
    )


def evaluate_run(
    preds: Sequence[Detection],
    gt: GroundTruth,
    iou_min: float = 0.3,
    estimator_count: int | None = None,
) -> EvalReport:
    m = match_detections(preds, gt, iou_min)
    return metrics(m.tp, m.fp, m.fn, estimator_count=estimator_count)


def blobs_to_detections(blobs: Sequence[Blob]) -> list[Detection]:
    """Segmentation blobs as unit-confidence detections, so both methods run
    through the same matcher."""
    return [Detection(box=b.bounds, score=1.0, source="segmentation") for b in blobs]


def save_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")


def load_report(path: str | Path) -> EvalReport:
    d = json.loads(Path(path).read_text())
    return EvalReport(
        counted=int(d["counted"]),
        tp=int(d["tp"]),
        fp=int(d["fp"]),
        fn=int(d["fn"]),
        recall=d.get("recall"),
        precision=d.get("precision"),
        estimator_count=d.get("estimator_count"),
    )


def format_table(reports: dict[str, EvalReport]) -> str:
    """Aligned text table, one column per method, rows like the published
    results table."""

    def fmt_pct(value: Optional[float]) -> str:
        return "-" if value is None else f"{100.0 * value:.1f}%"

    columns = list(reports)
    rows = [
        ("Counted vehicles", [str(r.counted) for r in reports.values()]),
        ("Estimator count", [
            "-" if r.estimator_count is None else str(r.estimator_count)
            for r in reports.values()
        ]),
        ("TP", [str(r.tp) for r in reports.values()]),
        ("FP", [str(r.fp) for r in reports.values()]),
        ("FN", [str(r.fn) for r in reports.values()]),
        ("Recall", [fmt_pct(r.recall) for r in reports.values()]),
        ("Precision", [fmt_pct(r.precision) for r in reports.values()]),
    ]
    if all(cell == "-" for cell in rows[1][1]):
        rows.pop(1)
    label_w = max(len(r[0]) for r in rows)
    col_w = [max(len(c), *(len(r[1][i]) for r in rows)) for i, c in enumerate(columns)]
    lines = [
        " " * label_w + "  " + "  ".join(c.rjust(col_w[i]) for i, c in enumerate(columns))
    ]
    for label, cells in rows:
        lines.append(
            label.ljust(label_w) + "  " + "  ".join(cells[i].rjust(col_w[i]) for i in range(len(columns)))
        )
    return "\n".join(lines)
