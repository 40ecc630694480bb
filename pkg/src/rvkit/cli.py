"""Command-line surface: simulate, targets, detect, panoptic, eval, render."""

from __future__ import annotations

import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__, config as cfgmod, formats, panoptic as panmod, pipeline, postprocess, render
from .errors import ConfigError, ConstraintError, FormatError, ShapeMismatchError

EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_CONSTRAINT = 4

SEED_ENV = "RVKIT_SEED"


def _base_seed(cfg: dict) -> int:
    env = os.environ.get(SEED_ENV)
    return int(env) if env else int(cfg["scene"]["seed"])


def _load(config_path: str | None) -> dict:
    return cfgmod.load_config(config_path)


@click.group()
@click.version_option(__version__)
def main():
    """LiDAR range-view perception toolkit."""


def _scene_paths(out_dir: Path, index: int) -> dict[str, Path]:
    stem = f"scene_{index:04d}"
    return {
        "cloud": out_dir / f"{stem}.lpc",
        "boxes": out_dir / f"{stem}.boxes.jsonl",
        "instances": out_dir / f"{stem}.instances.json",
    }


def _simulate_one(args) -> dict:
    cfg, out_dir, index, seed = args
    scene, cloud, inst_ids = pipeline.build_scene(cfg, seed)
    paths = _scene_paths(Path(out_dir), index)
    formats.write_lpc1(paths["cloud"], cloud.positions, cloud.intensity, cloud.elongation)
    formats.write_boxes_jsonl(paths["boxes"], scene.boxes)
    formats.write_instances_json(paths["instances"], inst_ids)
    return {
        "index": index,
        "seed": seed,
        "cloud": paths["cloud"].name,
        "boxes": paths["boxes"].name,
        "instances": paths["instances"].name,
        "num_points": len(cloud),
        "num_boxes": len(scene.boxes),
    }


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--count", type=int, default=1, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
def simulate(config_path, out_dir, count, jobs):
    """Generate COUNT synthetic scenes into OUT (clouds, boxes, instances)."""
    cfg = _load(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = _base_seed(cfg)
    tasks = [(cfg, str(out), i, base + i) for i in range(count)]
    if jobs > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scenes = list(pool.map(_simulate_one, tasks))
    else:
        scenes = [_simulate_one(t) for t in tasks]
    manifest = {
        "version": __version__,
        "config_hash": cfgmod.config_hash(cfg),
        "config": cfg,
        "count": count,
        "scenes": scenes,
    }
    with formats.atomic_write(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    click.echo(f"wrote {count} scene(s) to {out}")


def _read_manifest(dataset: Path) -> dict:
    path = dataset / "manifest.json"
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc


def _load_scene(dataset: Path, entry: dict):
    from .rangeimage import PointCloud

    pos, inten, elong = formats.read_lpc1(dataset / entry["cloud"])
    boxes = formats.read_boxes_jsonl(dataset / entry["boxes"])
    inst_ids = formats.read_instances_json(dataset / entry["instances"])
    return PointCloud(positions=pos, intensity=inten, elongation=elong), boxes, inst_ids


@main.command("targets")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--dataset", type=click.Path(exists=True), required=True)
@click.option("--jobs", type=int, default=1, show_default=True)
def targets_cmd(config_path, dataset, jobs):
    """Write one RIMG per scene with image and target channels."""
    cfg = _load(config_path)
    dataset = Path(dataset)
    manifest = _read_manifest(dataset)
    for entry in manifest["scenes"]:
        cloud, boxes, _ = _load_scene(dataset, entry)
        img, _, tgt = pipeline.image_and_targets(cfg, cloud, boxes)
        out = dataset / f"scene_{entry['index']:04d}.rimg"
        formats.write_rimg(out, img.shape, pipeline.rimg_channels(img, tgt))
    click.echo(f"wrote {len(manifest['scenes'])} target file(s)")


def _scene_inference(cfg, dataset, entry, noise_sigma):
    cloud, boxes, inst_ids = _load_scene(dataset, entry)
    img, _, tgt = pipeline.image_and_targets(cfg, cloud, boxes)
    pred = pipeline.oracle_for(cfg, tgt, noise_sigma, entry["seed"])
    return img, tgt, pred, boxes, inst_ids


@main.command("detect")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--dataset", type=click.Path(exists=True), required=True)
@click.option("--oracle-noise", type=float, default=0.0, show_default=True)
def detect_cmd(config_path, dataset, oracle_noise):
    """Run the detection pipeline with oracle predictions; write JSONL."""
    cfg = _load(config_path)
    dataset = Path(dataset)
    det_cfg = cfgmod.make_detect(cfg)
    for entry in _read_manifest(dataset)["scenes"]:
        img, _, pred, _, _ = _scene_inference(cfg, dataset, entry, oracle_noise)
        dets = postprocess.detect(img, pred, det_cfg)
        formats.write_detections_jsonl(dataset / f"scene_{entry['index']:04d}.dets.jsonl", dets)
    click.echo("detections written")


@main.command("panoptic")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--dataset", type=click.Path(exists=True), required=True)
@click.option("--oracle-noise", type=float, default=0.0, show_default=True)
def panoptic_cmd(config_path, dataset, oracle_noise):
    """Run panoptic segmentation with oracle predictions; write JSONL."""
    cfg = _load(config_path)
    dataset = Path(dataset)
    pan_cfg = cfgmod.make_panoptic(cfg)
    for entry in _read_manifest(dataset)["scenes"]:
        img, _, pred, _, _ = _scene_inference(cfg, dataset, entry, oracle_noise)
        result = panmod.panoptic_segment(img, pred, pan_cfg)
        formats.write_panoptic_jsonl(
            dataset / f"scene_{entry['index']:04d}.panoptic.jsonl",
            result.semantic,
            result.instance,
            img.valid,
        )
    click.echo("panoptic outputs written")


@main.command("eval")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--dataset", type=click.Path(exists=True), required=True)
@click.option("--oracle-noise", type=float, default=0.0, show_default=True)
@click.option("--lambda-sweep", "lambda_sweep", type=str, default=None, help="Comma-separated lambda values.")
@click.option("--out", "out_path", type=click.Path(), required=True)
def eval_cmd(config_path, dataset, oracle_noise, lambda_sweep, out_path):
    """Evaluate the oracle pipelines over a dataset; write a metrics JSON."""
    cfg = _load(config_path)
    dataset = Path(dataset)
    manifest = _read_manifest(dataset)
    seeds = [entry["seed"] for entry in manifest["scenes"]]
    lambdas = None
    if lambda_sweep:
        try:
            lambdas = [float(v) for v in lambda_sweep.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad --lambda-sweep value: {lambda_sweep}") from exc
    doc = pipeline.evaluate_suite(cfg, seeds, noise_sigma=oracle_noise, lambdas=lambdas)
    doc["config_hash"] = cfgmod.config_hash(cfg)
    doc["version"] = __version__
    with formats.atomic_write(out_path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
    click.echo(f"metrics written to {out_path}")


@main.command("render")
@click.argument("input_path", type=click.Path(exists=True))
@click.argument("output_path", type=click.Path())
@click.option(
    "--channel",
    type=click.Choice(["range", "instance", "box_id"]),
    default="range",
    show_default=True,
)
def render_cmd(input_path, output_path, channel):
    """Render a RIMG channel to a P6 PPM image."""
    (m, n), channels = formats.read_rimg(input_path)
    if channel == "range":
        valid = channels.get("valid", channels["range"] >= 0.0)
        rgb = render.inverse_depth_rgb(channels["range"], np.asarray(valid, dtype=bool))
    else:
        key = "box_id" if "box_id" in channels else "instance"
        rgb = render.instance_rgb(channels[key])
    render.write_ppm(output_path, rgb)
    click.echo(f"wrote {output_path}")


def entry() -> None:
    """Console entry point mapping exception classes onto exit codes."""
    try:
        main.main(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.Abort:
        sys.exit(1)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except FormatError as exc:
        click.echo(f"format error: {exc}", err=True)
        sys.exit(EXIT_FORMAT)
    except ConstraintError as exc:
        click.echo(f"constraint violation: {exc}", err=True)
        sys.exit(EXIT_CONSTRAINT)
    except ShapeMismatchError as exc:
        click.echo(f"shape mismatch: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    entry()
