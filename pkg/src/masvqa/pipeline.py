"""Per-sample orchestration: ingest dataset/retrievals/dumps, build the
explicit evidence package, run the two inference stages, and persist records."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import raster
from .client import InferenceConfig, InferenceError, complete
from .container import AttentionDump, read_dump_file
from .mask import PatchMask, apply_mask, build_mask, render_mask
from .phrases import KeywordSet, select_phrases
from .prompts import (
    PromptBundle,
    build_answer_prompt,
    build_implicit_prompt,
    format_evidence,
)

QUESTION_TYPES = ("string", "numerical", "time", "other")


class PipelineError(Exception):
    pass


class MissingDump(PipelineError):
    def __init__(self, sample_id: str, rank: int):
        super().__init__(f"no dump for sample {sample_id!r} rank {rank}")
        self.sample_id = sample_id
        self.rank = rank


@dataclass
class VqaSample:
    sample_id: str
    question: str
    gold_answers: list[str]
    image: Optional[str] = None
    question_type: str = "string"
    split_tags: list[str] = field(default_factory=list)
    gold_range: Optional[tuple[float, float]] = None


@dataclass
class Passage:
    text: str
    score: float
    source_id: str = ""


@dataclass
class RetrievalResult:
    sample_id: str
    passages: list[Passage]


@dataclass
class ExplicitPackage:
    passages: list[str]
    keywords: list[KeywordSet]
    mask: PatchMask


@dataclass
class PipelineConfig:
    tau: float = 1.0
    rho: float = 90.0
    m: int = 30
    gap: int = 3
    max_phrases: int = 10
    k: int = 5
    max_txt_len: int = 512  # enforced upstream when dumps are produced
    use_mask: bool = True
    use_phrases: bool = True
    use_implicit: bool = True
    inference: Optional[InferenceConfig] = None

    @classmethod
    def from_json_file(cls, path) -> "PipelineConfig":
        obj = json.loads(Path(path).read_text("utf-8"))
        inference = obj.pop("inference", None)
        cfg = cls(**{k: v for k, v in obj.items() if k in cls.__dataclass_fields__})
        if inference:
            cfg.inference = InferenceConfig.from_json(inference)
        return cfg


@dataclass
class PredictionRecord:
    sample_id: str
    answer: Optional[str] = None
    error: Optional[str] = None
    implicit_knowledge: str = ""
    phrases: list[list[str]] = field(default_factory=list)
    mask_patches_kept: int = 0
    mask_grid: int = 0
    prompt_hashes: dict[str, str] = field(default_factory=dict)
    elapsed_seconds: float = 0.0

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "answer": self.answer,
            "error": self.error,
            "implicit_knowledge": self.implicit_knowledge,
            "phrases": self.phrases,
            "mask_patches_kept": self.mask_patches_kept,
            "mask_grid": self.mask_grid,
            "prompt_hashes": self.prompt_hashes,
            "elapsed_seconds": self.elapsed_seconds,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PredictionRecord":
        return cls(**{k: v for k, v in obj.items() if k in cls.__dataclass_fields__})


def load_dataset(path) -> list[VqaSample]:
    """Read a JSONL dataset; unknown fields are ignored. Accepts InfoSeek-style
    records (data_id / answer aliases / answer_eval range)."""
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PipelineError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            sample_id = obj.get("sample_id") or obj.get("data_id")
            question = obj.get("question")
            answers = obj.get("gold_answers") or obj.get("answers") or obj.get("answer")
            if isinstance(answers, str):
                answers = [answers]
            if not sample_id or not question or not answers:
                raise PipelineError(
                    f"{path}: line {lineno}: sample needs an id, question, and answers"
                )
            gold_range = None
            eval_spec = obj.get("gold_range") or obj.get("answer_eval")
            if isinstance(eval_spec, dict) and "range" in eval_spec:
                eval_spec = eval_spec["range"]
            if isinstance(eval_spec, (list, tuple)) and len(eval_spec) == 2:
                gold_range = (float(eval_spec[0]), float(eval_spec[1]))
            qtype = obj.get("question_type", "string")
            if qtype not in QUESTION_TYPES:
                raise PipelineError(f"{path}: line {lineno}: unknown question_type {qtype!r}")
            tags = obj.get("split_tags") or obj.get("split") or []
            if isinstance(tags, str):
                tags = [tags]
            samples.append(
                VqaSample(
                    sample_id=str(sample_id),
                    question=question,
                    gold_answers=[str(a) for a in answers],
                    image=obj.get("image") or obj.get("image_path"),
                    question_type=qtype,
                    split_tags=list(tags),
                    gold_range=gold_range,
                )
            )
    return samples


def load_retrievals(path, k: int = 5) -> dict[str, RetrievalResult]:
    """Read per-sample retrieved passages from JSONL, re-sorted by descending
    score and truncated to the top k."""
    results: dict[str, RetrievalResult] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PipelineError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            sample_id = str(obj.get("sample_id") or obj.get("data_id"))
            if sample_id in results:
                raise PipelineError(f"{path}: line {lineno}: duplicate sample_id {sample_id!r}")
            raw = obj.get("passages") or []
            if not raw:
                raise PipelineError(f"{path}: line {lineno}: empty passages")
            passages = [
                Passage(
                    text=p["text"],
                    score=float(p.get("score", 0.0)),
                    source_id=str(p.get("source_id", "")),
                )
                for p in raw
            ]
            passages.sort(key=lambda p: -p.score)
            results[sample_id] = RetrievalResult(sample_id=sample_id, passages=passages[:k])
    return results


def dump_path(dumps_dir, sample_id: str, rank: int) -> Path:
    return Path(dumps_dir) / f"{sample_id}.r{rank}.mvd"


def build_explicit(
    sample: VqaSample,
    retrieval: RetrievalResult,
    dumps_dir,
    cfg: PipelineConfig,
) -> ExplicitPackage:
    """Phrase selection per passage; the patch mask comes from the rank-1
    passage's dump. Ablation flags blank their own channel only."""
    dumps: list[AttentionDump] = []
    for rank in range(1, len(retrieval.passages) + 1):
        path = dump_path(dumps_dir, sample.sample_id, rank)
        if not path.exists():
            raise MissingDump(sample.sample_id, rank)
        dumps.append(read_dump_file(path))

    if cfg.use_phrases:
        keywords = [
            select_phrases(d, m=cfg.m, gap=cfg.gap, max_phrases=cfg.max_phrases) for d in dumps
        ]
    else:
        keywords = [KeywordSet.empty() for _ in dumps]

    if cfg.use_mask:
        mask = build_mask(dumps[0], rho=cfg.rho, tau=cfg.tau)
    else:
        g = dumps[0].meta.grid
        mask = PatchMask(bits=np.ones((g, g), dtype=bool))

    return ExplicitPackage(
        passages=[p.text for p in retrieval.passages],
        keywords=keywords,
        mask=mask,
    )


def _masked_image_bytes(image_path: str, mask: PatchMask) -> bytes:
    image = raster.load_image(image_path)
    h, w = image.shape[:2]
    pixel_mask = render_mask(mask, width=w, height=h)
    return raster.encode_ppm(apply_mask(image, pixel_mask))


def run_sample(
    sample: VqaSample,
    retrieval: RetrievalResult,
    dumps_dir,
    cfg: PipelineConfig,
    complete_fn=None,
) -> PredictionRecord:
    """Build evidence, optionally generate implicit knowledge, then answer.
    Failures are captured in the record; the batch is never aborted."""
    if complete_fn is None:
        if cfg.inference is None:
            raise PipelineError("no inference configuration provided")
        complete_fn = lambda bundle: complete(bundle, cfg.inference)

    record = PredictionRecord(sample_id=sample.sample_id)
    started = time.monotonic()
    try:
        package = build_explicit(sample, retrieval, dumps_dir, cfg)
        record.phrases = [kws.texts() for kws in package.keywords]
        record.mask_patches_kept = int(package.mask.bits.sum())
        record.mask_grid = package.mask.grid

        evidence = format_evidence(package.passages, package.keywords)
        if sample.image is None:
            raise PipelineError(f"sample {sample.sample_id} has no image path")
        original: bytes | str = sample.image
        if cfg.use_mask:
            masked: bytes | str = _masked_image_bytes(sample.image, package.mask)
        else:
            masked = sample.image  # original image passed twice
        images = [original, masked]

        implicit = ""
        if cfg.use_implicit:
            implicit_bundle = build_implicit_prompt(evidence, sample.question, images)
            record.prompt_hashes["implicit"] = implicit_bundle.text_hash()
            implicit = complete_fn(implicit_bundle)
            record.implicit_knowledge = implicit

        answer_bundle = build_answer_prompt(evidence, implicit, sample.question, images)
        record.prompt_hashes["answer"] = answer_bundle.text_hash()
        record.answer = complete_fn(answer_bundle).strip()
    except (PipelineError, InferenceError, OSError, ValueError) as exc:
        record.answer = None
        record.error = f"{type(exc).__name__}: {exc}"
    record.elapsed_seconds = time.monotonic() - started
    return record


def run_dataset(
    dataset_path,
    retrievals_path,
    dumps_dir,
    cfg: PipelineConfig,
    out_path,
    complete_fn=None,
) -> dict:
    """Process every sample, appending one record per line to out_path.
    Resumable: sample ids already present in out_path are skipped."""
    samples = load_dataset(dataset_path)
    retrievals = load_retrievals(retrievals_path, k=cfg.k)

    out_path = Path(out_path)
    done: set[str] = set()
    if out_path.exists():
        with open(out_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    done.add(json.loads(line)["sample_id"])

    answered = errors = skipped = 0
    with open(out_path, "a", encoding="utf-8") as sink:
        for sample in samples:
            if sample.sample_id in done:
                skipped += 1
                continue
            retrieval = retrievals.get(sample.sample_id)
            if retrieval is None:
                record = PredictionRecord(
                    sample_id=sample.sample_id, error="no retrieval result"
                )
            else:
                record = run_sample(sample, retrieval, dumps_dir, cfg, complete_fn)
            if record.error is None:
                answered += 1
            else:
                errors += 1
            sink.write(json.dumps(record.to_json()) + "\n")
            sink.flush()
    return {"total": len(samples), "answered": answered, "errors": errors, "skipped": skipped}


def load_records(path) -> list[PredictionRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(PredictionRecord.from_json(json.loads(line)))
    return records
