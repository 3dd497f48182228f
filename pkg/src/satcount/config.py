"""Pipeline configuration: one flat sectioned key=value file collects every
knob (tiling, fill thresholds, estimator means, detector strides, NMS and
fusion thresholds, matching IoU).

Grammar: INI-style `[section]` headers over `key = value` lines, `#`/`;`
comments. Unknown sections or keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path

from .core import ConfigError
from .counting import CountEstimatorConfig
from .fusion import OVERLAP_RULES, FusionConfig


@dataclass(frozen=True)
class PipelineConfig:
    # [tiling]
    tile_size: int = 512
    overlap: int = 64
    # [annotate]
    fill_tolerance: float = 0.15
    road_margin: float = 0.10
    # [counting]
    mean_px_lined: float = 40.0
    mean_px_side_by_side: float = 40.0
    min_blob_area: int = 12
    elongation_threshold: float = 2.5
    # [detect]
    strides: tuple[int, ...] = (8, 4, 2)
    anchors_per_level: int = 3
    kmeans_seed: int = 0
    nms_iou: float = 0.3
    min_score: float = 0.0
    # [fusion]
    t_high: float = 0.5
    t_low: float = 0.2
    overlap_rule: str = "center"
    blob_iou: float = 0.3
    # [eval]
    iou_min: float = 0.3

    def __post_init__(self):
        if self.overlap < 0 or self.overlap >= self.tile_size:
            raise ConfigError(f"overlap {self.overlap} must be < tile_size {self.tile_size}")
        for name in ("fill_tolerance", "road_margin"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} {v} outside (0, 1]")
        if not self.strides or any(s < 1 for s in self.strides):
            raise ConfigError(f"strides must be positive, got {self.strides}")
        if self.anchors_per_level < 1:
            raise ConfigError("anchors_per_level must be >= 1")
        for name in ("nms_iou", "min_score", "iou_min"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} {v} outside [0, 1]")
        if self.overlap_rule not in OVERLAP_RULES:
            raise ConfigError(f"overlap_rule must be one of {OVERLAP_RULES}")
        # reuse the component validators for the rest
        self.estimator()
        self.fusion()

    def estimator(self) -> CountEstimatorConfig:
        return CountEstimatorConfig(
            mean_px_lined=self.mean_px_lined,
            mean_px_side_by_side=self.mean_px_side_by_side,
            min_blob_area=self.min_blob_area,
            elongation_threshold=self.elongation_threshold,
        )

    def fusion(self) -> FusionConfig:
        return FusionConfig(
            t_high=self.t_high,
            t_low=self.t_low,
            overlap_rule=self.overlap_rule,
            blob_iou=self.blob_iou,
        )


_SCHEMA: dict[str, dict[str, str]] = {
    "tiling": {"tile_size": "int", "overlap": "int"},
    "annotate": {"fill_tolerance": "float", "road_margin": "float"},
    "counting": {
        "mean_px_lined": "float",
        "mean_px_side_by_side": "float",
        "min_blob_area": "int",
        "elongation_threshold": "float",
    },
    "detect": {
        "strides": "ints",
        "anchors_per_level": "int",
        "kmeans_seed": "int",
        "nms_iou": "float",
        "min_score": "float",
    },
    "fusion": {
        "t_high": "float",
        "t_low": "float",
        "overlap_rule": "str",
        "blob_iou": "float",
    },
    "eval": {"iou_min": "float"},
}


def _parse_value(kind: str, raw: str, where: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "ints":
            return tuple(int(p.strip()) for p in raw.split(",") if p.strip())
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind}") from exc


def load_config(path: str | Path | None) -> PipelineConfig:
    """Load a config file, falling back to defaults when path is None."""
    if path is None:
        return PipelineConfig()
    text = Path(path).read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    values: dict = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            values[key] = _parse_value(_SCHEMA[section][key], raw, f"{path} [{section}] {key}")
    return PipelineConfig(**values)


def default_config_text() -> str:
    """The full grammar with every key at its default, ready to edit."""
    cfg = PipelineConfig()
    by_field = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    lines = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key, kind in keys.items():
            v = by_field[key]
            if kind == "ints":
                v = ",".join(str(i) for i in v)
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)
