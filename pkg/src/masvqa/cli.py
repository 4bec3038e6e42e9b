"""Command-line interface: synth / mask / phrases / select / run / eval."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import raster
from .client import InferenceConfig
from .container import read_dump_file, synth_dump, write_dump_file
from .evaluate import evaluate, make_http_judge
from .mask import apply_mask, build_mask, render_mask
from .phrases import select_phrases
from .pipeline import PipelineConfig, load_dataset, load_records, run_dataset


@click.group()
def main():
    """Mask-and-Select pipeline for knowledge-based VQA."""


@main.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--heads", type=int, default=2, show_default=True)
@click.option("--seq-len", type=int, default=16, show_default=True)
@click.option("--grid", type=int, default=7, show_default=True)
@click.option("--sep", type=int, nargs=2, default=None, help="Separator token positions.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def synth(seed, heads, seq_len, grid, sep, out):
    """Write a deterministic synthetic attention dump."""
    dump = synth_dump(seed, heads, seq_len, grid, sep or None)
    write_dump_file(dump, out)
    click.echo(f"wrote {out} (H={heads}, L={seq_len}, g={grid})")


@main.command()
@click.option("--dump", "dump_path", type=click.Path(exists=True), required=True)
@click.option("--rho", type=float, default=90.0, show_default=True)
@click.option("--tau", type=float, default=1.0, show_default=True)
@click.option("--out-grid", type=click.Path(dir_okay=False))
@click.option("--image", "image_path", type=click.Path(exists=True))
@click.option("--out-image", type=click.Path(dir_okay=False))
def mask(dump_path, rho, tau, out_grid, image_path, out_image):
    """Compute the knowledge-guided patch mask for one dump."""
    dump = read_dump_file(dump_path)
    patch_mask = build_mask(dump, rho=rho, tau=tau)
    if out_grid:
        grid_json = {"g": patch_mask.grid, "bits": patch_mask.bits.astype(int).tolist()}
        Path(out_grid).write_text(json.dumps(grid_json) + "\n", "utf-8")
        click.echo(f"wrote {out_grid}")
    if image_path and out_image:
        image = raster.load_image(image_path)
        h, w = image.shape[:2]
        pixel_mask = render_mask(patch_mask, width=w, height=h)
        raster.save_image(apply_mask(image, pixel_mask), out_image)
        click.echo(f"wrote {out_image}")
    if not out_grid and not out_image:
        click.echo(f"mask keeps {int(patch_mask.bits.sum())}/{patch_mask.bits.size} patches")


@main.command()
@click.option("--dump", "dump_path", type=click.Path(exists=True), required=True)
@click.option("--m", type=int, default=30, show_default=True)
@click.option("--gap", type=int, default=3, show_default=True)
@click.option("--max-phrases", type=int, default=10, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False))
def phrases(dump_path, m, gap, max_phrases, out):
    """Select keyword phrases for one dump."""
    dump = read_dump_file(dump_path)
    keywords = select_phrases(dump, m=m, gap=gap, max_phrases=max_phrases)
    payload = json.dumps(keywords.to_json())
    if out:
        Path(out).write_text(payload + "\n", "utf-8")
        click.echo(f"wrote {out}")
    else:
        click.echo(payload)


@main.command()
@click.option("--dump", "dump_path", type=click.Path(exists=True), required=True)
@click.option("--rho", type=float, default=90.0, show_default=True)
@click.option("--tau", type=float, default=1.0, show_default=True)
@click.option("--m", type=int, default=30, show_default=True)
@click.option("--gap", type=int, default=3, show_default=True)
@click.option("--max-phrases", type=int, default=10, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False))
def select(dump_path, rho, tau, m, gap, max_phrases, out):
    """Run both selection channels on one dump: mask grid plus phrases."""
    dump = read_dump_file(dump_path)
    patch_mask = build_mask(dump, rho=rho, tau=tau)
    keywords = select_phrases(dump, m=m, gap=gap, max_phrases=max_phrases)
    payload = json.dumps(
        {
            "mask": {"g": patch_mask.grid, "bits": patch_mask.bits.astype(int).tolist()},
            **keywords.to_json(),
        }
    )
    if out:
        Path(out).write_text(payload + "\n", "utf-8")
        click.echo(f"wrote {out}")
    else:
        click.echo(payload)


@main.command()
@click.option("--dataset", type=click.Path(exists=True), required=True)
@click.option("--retrievals", type=click.Path(exists=True), required=True)
@click.option("--dumps", "dumps_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--endpoint", help="Inference endpoint URL (overrides config).")
@click.option("--model", help="Model name (overrides config).")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def run(dataset, retrievals, dumps_dir, config_path, endpoint, model, out):
    """Run the full pipeline over a dataset, writing one record per sample."""
    cfg = PipelineConfig.from_json_file(config_path) if config_path else PipelineConfig()
    if endpoint or model:
        base = cfg.inference
        cfg.inference = InferenceConfig(
            endpoint_url=endpoint or (base.endpoint_url if base else ""),
            model_name=model or (base.model_name if base else "default"),
            **(
                {
                    k: getattr(base, k)
                    for k in (
                        "temperature",
                        "max_tokens",
                        "max_in_flight",
                        "timeout_seconds",
                        "retry_count",
                        "backoff_seconds",
                    )
                }
                if base
                else {}
            ),
        )
    if cfg.inference is None or not cfg.inference.endpoint_url:
        raise click.UsageError("an inference endpoint is required (--endpoint or config)")
    summary = run_dataset(dataset, retrievals, dumps_dir, cfg, out)
    click.echo(json.dumps(summary))


@main.command("eval")
@click.option("--records", "records_path", type=click.Path(exists=True), required=True)
@click.option("--dataset", type=click.Path(exists=True), required=True)
@click.option("--relaxed-tol", type=float, default=0.05, show_default=True)
@click.option("--judge-endpoint", help="Optional external judge URL for string questions.")
@click.option("--out", type=click.Path(dir_okay=False))
def eval_cmd(records_path, dataset, relaxed_tol, judge_endpoint, out):
    """Score a records file against the dataset's gold answers."""
    records = load_records(records_path)
    samples = load_dataset(dataset)
    judge = make_http_judge(judge_endpoint) if judge_endpoint else None
    report = evaluate(records, samples, tolerance=relaxed_tol, judge=judge)
    payload = json.dumps(report.to_json(), indent=2)
    if out:
        Path(out).write_text(payload + "\n", "utf-8")
        click.echo(f"wrote {out}")
    click.echo(payload)


if __name__ == "__main__":
    main()
