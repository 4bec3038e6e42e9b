"""masvqa-extract: batch attention-dump extraction over a dataset."""

from __future__ import annotations

import json

import click

from extraction_sidecar.encoder import ItmEncoder
from extraction_sidecar.extract import ExtractionJob, extract


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise click.ClickException(f"{path}:{line_no}: {exc}") from exc


def _sample_id(row):
    return str(row.get("sample_id", row.get("data_id")))


@click.command()
@click.option("--dataset", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--retrievals", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--model", "model_path", required=True, help="Encoder model name or path.")
@click.option("--block", default=7, show_default=True, type=int)
@click.option("--max-text-len", default=512, show_default=True, type=int)
@click.option("--device", default="cpu", show_default=True)
def main(dataset, retrievals, out_dir, model_path, block, max_text_len, device):
    """Extract one .mvd dump per retrieved passage for every dataset sample."""
    passages_by_id = {}
    for row in _read_jsonl(retrievals):
        entries = sorted(row["passages"], key=lambda p: -float(p.get("score", 0.0)))
        passages_by_id[_sample_id(row)] = [p["text"] for p in entries]

    encoder = ItmEncoder(model_path, device=device)
    written, errors = 0, 0
    for row in _read_jsonl(dataset):
        sid = _sample_id(row)
        passages = passages_by_id.get(sid)
        if not passages:
            click.echo(f"warning: no retrievals for sample {sid}", err=True)
            continue
        job = ExtractionJob(
            sample_id=sid,
            image=row["image"],
            question=row["question"],
            passages=passages,
            block=block,
            max_text_len=max_text_len,
            out_dir=out_dir,
        )
        for result in extract(job, encoder):
            if result.error:
                errors += 1
                click.echo(f"error: {sid} rank {result.rank}: {result.error}", err=True)
            else:
                written += 1
    click.echo(json.dumps({"dumps_written": written, "errors": errors}))


if __name__ == "__main__":
    main()
