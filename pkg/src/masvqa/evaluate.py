"""Answer scoring: normalized string matching for string/time questions,
relaxed numeric matching for numerical ones, and per-type/per-split reports.

An external-judge hook (HTTP endpoint taking question/gold/pred) can replace
the default normalized string match; the report records which judge ran.
"""

from __future__ import annotations

import re
import string
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

GoldSpec = Union[float, int, tuple[float, float]]

_ARTICLES = {"a", "an", "the"}
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_NUMBER_RE = re.compile(r"[-+]?\d{1,3}(?:,\d{3})+(?:\.\d+)?|[-+]?\d*\.?\d+")
_YEAR_RE = re.compile(r"\b\d{4}\b")


class UnknownSampleId(KeyError):
    pass


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation and English articles, collapse whitespace."""
    text = text.lower().translate(_PUNCT_TABLE)
    words = [w for w in text.split() if w not in _ARTICLES]
    return " ".join(words)


def vqa_string_match(pred: str, golds: Sequence[str]) -> int:
    if not golds:
        raise ValueError("golds must be non-empty")
    norm = normalize_answer(pred)
    return int(any(norm == normalize_answer(g) for g in golds))


def parse_number(text: str) -> Optional[float]:
    """First numeric token of the text, tolerating signs, decimals, and
    thousands separators; None when nothing parses."""
    match = _NUMBER_RE.search(text)
    if not match:
        return None
    try:
        return float(match.group(0).replace(",", ""))
    except ValueError:
        return None


def relaxed_numeric(pred: str, gold_spec: GoldSpec, tolerance: float = 0.05) -> int:
    value = parse_number(pred)
    if value is None:
        return 0
    if isinstance(gold_spec, (tuple, list)):
        lo, hi = gold_spec
        return int(lo <= value <= hi)
    gold = float(gold_spec)
    if gold == 0:
        return int(value == 0)
    return int(abs(value - gold) / abs(gold) <= tolerance)


def time_match(pred: str, gold: str) -> int:
    """Year-level comparison; falls back to normalized string match when
    either side has no extractable 4-digit year."""
    pred_year = _YEAR_RE.search(pred)
    gold_year = _YEAR_RE.search(gold)
    if pred_year and gold_year:
        return int(pred_year.group(0) == gold_year.group(0))
    return vqa_string_match(pred, [gold])


@dataclass
class MetricsReport:
    overall: float
    counts: dict[str, int]
    per_type: dict[str, float]
    per_split: dict[str, float]
    failed_sample_ids: list[str]
    judge: str = "normalized-string-match"

    def to_json(self) -> dict:
        return {
            "overall": self.overall,
            "counts": self.counts,
            "per_type": self.per_type,
            "per_split": self.per_split,
            "failed_sample_ids": self.failed_sample_ids,
            "judge": self.judge,
        }


JudgeFn = Callable[[str, Sequence[str], str], int]  # (question, golds, pred) -> 0/1


def make_http_judge(endpoint_url: str, timeout: float = 60.0) -> JudgeFn:
    """External judge hook: POST {question, golds, pred}, expect {"correct": bool}."""
    import requests

    def judge(question: str, golds: Sequence[str], pred: str) -> int:
        resp = requests.post(
            endpoint_url,
            json={"question": question, "golds": list(golds), "pred": pred},
            timeout=timeout,
        )
        resp.raise_for_status()
        return int(bool(resp.json()["correct"]))

    return judge


def score_sample(sample, answer: str, tolerance: float = 0.05, judge: JudgeFn | None = None) -> int:
    """Route one prediction to the metric for its question type."""
    qtype = sample.question_type
    if qtype == "numerical":
        spec = sample.gold_range if sample.gold_range is not None else parse_number(
            sample.gold_answers[0]
        )
        if spec is None:
            return 0
        return relaxed_numeric(answer, spec, tolerance)
    if qtype == "time":
        return int(any(time_match(answer, g) for g in sample.gold_answers))
    if judge is not None:
        return judge(sample.question, sample.gold_answers, answer)
    return vqa_string_match(answer, sample.gold_answers)


def evaluate(
    records: Sequence,
    dataset: Sequence,
    tolerance: float = 0.05,
    judge: JudgeFn | None = None,
) -> MetricsReport:
    """Score every record against its sample; error records count as wrong."""
    by_id = {s.sample_id: s for s in dataset}
    scores: list[int] = []
    type_scores: dict[str, list[int]] = defaultdict(list)
    split_scores: dict[str, list[int]] = defaultdict(list)
    failed: list[str] = []
    for record in records:
        if record.sample_id not in by_id:
            raise UnknownSampleId(record.sample_id)
        sample = by_id[record.sample_id]
        if record.error is not None or record.answer is None:
            score = 0
        else:
            score = score_sample(sample, record.answer, tolerance, judge)
        scores.append(score)
        type_scores[sample.question_type].append(score)
        for tag in sample.split_tags:
            split_scores[tag].append(score)
        if score == 0:
            failed.append(record.sample_id)
    overall = sum(scores) / len(scores) if scores else 0.0
    return MetricsReport(
        overall=overall,
        counts={"total": len(scores), "correct": sum(scores), "failed": len(failed)},
        per_type={t: sum(v) / len(v) for t, v in type_scores.items()},
        per_split={t: sum(v) / len(v) for t, v in split_scores.items()},
        failed_sample_ids=failed,
        judge="external-http" if judge is not None else "normalized-string-match",
    )
