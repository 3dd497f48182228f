"""Command-line pipeline: tiling, counting, grid decoding, NMS, fusion,
evaluation, anchor computation, estimator calibration and the annotation
service. Every subcommand is a thin wrapper over one module; exit codes are
0 on success, 1 on domain errors, 2 on usage errors.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import annotate, counting, detect, evaluate, fusion
from .config import PipelineConfig, default_config_text, load_config
from .core import (
    RasterImage,
    ToolkitError,
    crop_tiles,
    plan_tiles,
    read_image,
    save_tile_grid,
    write_image,
)


def _domain_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ToolkitError, ValueError, OSError, json.JSONDecodeError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False),
    default=None, help="Pipeline config file (sectioned key=value).",
)


@click.group()
@click.version_option(package_name="satcount")
def cli():
    """Vehicle counting toolkit for very-high-resolution satellite imagery."""


@cli.command("print-config")
def print_config():
    """Print the default config with every recognized key."""
    click.echo(default_config_text(), nl=False)


@cli.command()
@click.option("--image", "image_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--tile-size", type=int, default=None, help="Tile side in pixels.")
@click.option("--overlap", type=int, default=None, help="Tile overlap in pixels.")
@config_option
@_domain_errors
def tile(image_path, out_dir, tile_size, overlap, config_path):
    """Cut an image into fixed-size tiles plus a JSON grid descriptor."""
    cfg = load_config(config_path)
    tile_size = tile_size if tile_size is not None else cfg.tile_size
    overlap = overlap if overlap is not None else cfg.overlap
    image = read_image(image_path)
    grid = plan_tiles(image.width, image.height, tile_size, overlap)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(image_path).stem
    for (ox, oy), tile_img in crop_tiles(image, grid):
        write_image(tile_img, out / f"{stem}_x{ox:05d}_y{oy:05d}.png")
    save_tile_grid(grid, out / "grid.json")
    click.echo(f"{len(grid.origins)} tiles -> {out}")


def _load_vote_manifest(path: Path) -> list[tuple[np.ndarray, counting.GeometricTransform]]:
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise ValueError(f"{path}: vote manifest must be a JSON list")
    predictions = []
    for entry in entries:
        mask = read_image(path.parent / entry["mask"]).data[:, :, 0]
        tf = counting.GeometricTransform.from_json_dict(entry.get("transform", {}))
        predictions.append(((mask > 0).astype(np.uint8), tf))
    return predictions


@cli.command()
@click.option("--mask", "mask_path", type=click.Path(exists=True, dir_okay=False),
              help="Binary segmentation mask PNG.")
@click.option("--votes", "votes_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON manifest of augmented predictions to vote over.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Write the count report JSON here instead of stdout.")
@click.option("--boxes-out", type=click.Path(dir_okay=False), default=None,
              help="Also write blob bounds as detections JSONL.")
@click.option("--mask-out", type=click.Path(dir_okay=False), default=None,
              help="With --votes: write the majority-vote binary mask PNG.")
@config_option
@_domain_errors
def count(mask_path, votes_path, out_path, boxes_out, mask_out, config_path):
    """Count vehicles in a segmentation mask (or a voted ensemble)."""
    if (mask_path is None) == (votes_path is None):
        raise click.UsageError("provide exactly one of --mask or --votes")
    cfg = load_config(config_path)
    if votes_path is not None:
        pmask = counting.aggregate_votes(_load_vote_manifest(Path(votes_path)))
        binary = counting.threshold_votes(pmask)
        if mask_out:
            write_image(RasterImage(binary * 255), mask_out)
    else:
        binary = (read_image(mask_path).data[:, :, 0] > 0).astype(np.uint8)
    report = counting.count_image(binary, cfg.estimator())
    payload = json.dumps(report.to_json_dict(), indent=2)
    if out_path:
        Path(out_path).write_text(payload + "\n")
    else:
        click.echo(payload)
    if boxes_out:
        detect.write_detections(evaluate.blobs_to_detections(report.blobs()), boxes_out)
    click.echo(f"total vehicles: {report.total}", err=True)


@cli.command()
@click.option("--grid", "grid_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--min-score", type=float, default=None,
              help="Drop decoded boxes below this objectness score.")
@config_option
@_domain_errors
def decode(grid_path, out_path, min_score, config_path):
    """Decode a raw detection grid file into detections JSONL."""
    cfg = load_config(config_path)
    min_score = min_score if min_score is not None else cfg.min_score
    grid = detect.read_grid(grid_path)
    dets = detect.decode_grid(grid, min_score=min_score)
    detect.write_detections(dets, out_path)
    click.echo(f"{len(dets)} detections -> {out_path}")


@cli.command()
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--iou-threshold", type=float, default=None)
@config_option
@_domain_errors
def nms(pred_path, out_path, iou_threshold, config_path):
    """Greedy non-maximum suppression over a detections file."""
    cfg = load_config(config_path)
    thr = iou_threshold if iou_threshold is not None else cfg.nms_iou
    dets = detect.read_detections(pred_path)
    kept = detect.nms(dets, thr)
    detect.write_detections(kept, out_path)
    click.echo(f"kept {len(kept)} of {len(dets)} -> {out_path}")


@cli.command()
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="NMS-applied detector output (JSONL).")
@click.option("--mask", "mask_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Binary segmentation mask PNG for corroboration.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--t-high", type=float, default=None)
@click.option("--t-low", type=float, default=None)
@config_option
@_domain_errors
def fuse(pred_path, mask_path, out_path, t_high, t_low, config_path):
    """Mix detector boxes with segmentation corroboration."""
    cfg = load_config(config_path)
    fusion_cfg = fusion.FusionConfig(
        t_high=t_high if t_high is not None else cfg.t_high,
        t_low=t_low if t_low is not None else cfg.t_low,
        overlap_rule=cfg.overlap_rule,
        blob_iou=cfg.blob_iou,
    )
    dets = detect.read_detections(pred_path)
    binary = (read_image(mask_path).data[:, :, 0] > 0).astype(np.uint8)
    blobs = counting.connected_components(binary)
    kept = fusion.fuse(dets, blobs, fusion_cfg)
    detect.write_detections(kept, out_path)
    click.echo(f"fused {len(kept)} of {len(dets)} detections -> {out_path}")


@cli.command("eval")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--iou-min", type=float, default=None)
@click.option("--count-report", "count_report_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Count report JSON; its total is carried as the estimator count.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@config_option
@_domain_errors
def eval_cmd(pred_path, gt_path, iou_min, count_report_path, out_path, config_path):
    """Match predictions against ground truth and report the metrics table."""
    cfg = load_config(config_path)
    iou_min = iou_min if iou_min is not None else cfg.iou_min
    preds = detect.read_detections(pred_path)
    gt = evaluate.GroundTruth.load(gt_path)
    estimator_count = None
    if count_report_path:
        estimator_count = int(json.loads(Path(count_report_path).read_text())["total"])
    report = evaluate.evaluate_run(preds, gt, iou_min=iou_min, estimator_count=estimator_count)
    click.echo(evaluate.format_table({Path(pred_path).stem: report}))
    if out_path:
        evaluate.save_report(report, out_path)


def _read_wh_boxes(path: Path) -> list[tuple[float, float]]:
    """Accept annotation box exports ({id, x_min, ...}) or bare {w, h} lines."""
    out = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        d = json.loads(line)
        if "w" in d and "h" in d:
            out.append((float(d["w"]), float(d["h"])))
        else:
            out.append((float(d["x_max"]) - float(d["x_min"]), float(d["y_max"]) - float(d["y_min"])))
    return out


@cli.command()
@click.option("--boxes", "boxes_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="JSONL of annotated boxes ({w,h} or corner form).")
@click.option("--k", required=True, type=int)
@click.option("--seed", type=int, default=None, help="k-means seed (overrides config).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@config_option
@_domain_errors
def anchors(boxes_path, k, seed, out_path, config_path):
    """Cluster annotated vehicle sizes into detector anchors."""
    cfg = load_config(config_path)
    seed = seed if seed is not None else cfg.kmeans_seed
    sizes = _read_wh_boxes(Path(boxes_path))
    result, cost = detect.compute_anchors_with_cost(sizes, k=k, seed=seed)
    payload = json.dumps([{"w": a.w, "h": a.h} for a in result], indent=2)
    if out_path:
        Path(out_path).write_text(payload + "\n")
    else:
        click.echo(payload)
    click.echo(f"mean 1-IoU cost: {cost:.6f}", err=True)


@cli.command()
@click.option("--masks", "mask_paths", required=True, multiple=True,
              type=click.Path(exists=True), help="Instance-id mask PNGs (or directories of them).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@config_option
@_domain_errors
def calibrate(mask_paths, out_path, config_path):
    """Derive pixels-per-vehicle means from annotated instance masks."""
    cfg = load_config(config_path)
    files: list[Path] = []
    for p in mask_paths:
        p = Path(p)
        files.extend(sorted(p.glob("*.png")) if p.is_dir() else [p])
    if not files:
        raise ValueError("no mask files found")
    masks = [annotate.load_mask_ids(f) for f in files]
    est = counting.calibrate_estimator(
        masks,
        elongation_threshold=cfg.elongation_threshold,
        min_blob_area=cfg.min_blob_area,
    )
    payload = json.dumps(
        {
            "mean_px_lined": est.mean_px_lined,
            "mean_px_side_by_side": est.mean_px_side_by_side,
            "min_blob_area": est.min_blob_area,
            "elongation_threshold": est.elongation_threshold,
        },
        indent=2,
    )
    if out_path:
        Path(out_path).write_text(payload + "\n")
    else:
        click.echo(payload)


@cli.command("annotate-serve")
@click.option("--images", "image_root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8008)
@click.option("--sessions", "state_dir", type=click.Path(file_okay=False), default=None)
@click.option("--ui", "ui_dir", type=click.Path(file_okay=False), default=None,
              help="Static UI build to serve at /ui.")
@config_option
@_domain_errors
def annotate_serve(image_root, host, port, state_dir, ui_dir, config_path):
    """Serve the annotation HTTP API (and the browser UI when built)."""
    import uvicorn

    from .service import create_app

    cfg = load_config(config_path)
    if ui_dir is None:
        default_ui = Path.cwd() / "frontend" / "dist"
        ui_dir = str(default_ui) if default_ui.is_dir() else None
    app = create_app(image_root, config=cfg, state_dir=state_dir, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")


def main():
    cli(standalone_mode=True)


if __name__ == "__main__":
    main()
