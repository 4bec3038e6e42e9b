"""Job-level extraction: one dump file per (sample, passage rank)."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from masvqa.container import write_dump_file

from extraction_sidecar.encoder import EncoderError, ItmEncoder


@dataclass
class ExtractionJob:
    sample_id: str
    image: str
    question: str
    passages: list[str]
    block: int = 7
    max_text_len: int = 512
    out_dir: str = "."

    def __post_init__(self):
        if not self.passages:
            raise ValueError("passages must be non-empty")


@dataclass
class ExtractionResult:
    sample_id: str
    rank: int
    path: Path | None = None
    error: str | None = None


def extract(job: ExtractionJob, encoder: ItmEncoder) -> list[ExtractionResult]:
    """Extract one dump per passage; failures are recorded per rank and the
    job continues with the remaining passages."""
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        pixel_values = encoder.load_image(job.image)
    except EncoderError as exc:
        return [
            ExtractionResult(job.sample_id, rank, error=str(exc))
            for rank in range(1, len(job.passages) + 1)
        ]

    results = []
    for rank, passage in enumerate(job.passages, start=1):
        result = ExtractionResult(job.sample_id, rank)
        try:
            dump = encoder.encode(
                pixel_values, passage, job.question, job.block, job.max_text_len
            )
            path = out_dir / f"{job.sample_id}.r{rank}.mvd"
            write_dump_file(dump, path)
            result.path = path
        except EncoderError as exc:
            result.error = str(exc)
        results.append(result)
    return results
