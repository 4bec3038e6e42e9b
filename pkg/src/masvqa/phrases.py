"""Question-conditioned keyword phrase selection from retrieved knowledge:
gradient-modulated self-attention interactions, top-m token selection,
offset-mapped span recovery, and span merging."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .container import AttentionDump, EmptyGroup, SequenceLayout, layout_of
from .relevance import _check_pair


@dataclass(frozen=True, order=True)
class CharSpan:
    start: int
    end: int  # half-open

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid span [{self.start}, {self.end})")


@dataclass(frozen=True)
class Phrase:
    text: str
    span: CharSpan
    score: float


@dataclass
class KeywordSet:
    phrases: list[Phrase]

    def texts(self) -> list[str]:
        return [p.text for p in self.phrases]

    def to_json(self) -> dict:
        return {
            "phrases": [
                {"text": p.text, "start": p.span.start, "end": p.span.end, "score": p.score}
                for p in self.phrases
            ]
        }

    @classmethod
    def empty(cls) -> "KeywordSet":
        return cls(phrases=[])


def interaction_matrix(self_attn: np.ndarray, self_grad: np.ndarray) -> np.ndarray:
    """S = (1/H) sum_h attn[h] * max(grad[h], 0), an [L, L] float64 matrix."""
    _check_pair(self_attn, self_grad)
    attn = self_attn.astype(np.float64)
    grad = np.maximum(self_grad.astype(np.float64), 0.0)
    return (attn * grad).mean(axis=0)


def knowledge_token_scores(matrix: np.ndarray, layout: SequenceLayout) -> dict[int, float]:
    """Score each knowledge token j by averaging S[i, j] over question tokens i."""
    idx_q = np.fromiter(layout.idx_question, dtype=np.intp)
    if idx_q.size == 0:
        raise EmptyGroup("question token range is empty")
    means = matrix[idx_q, :].mean(axis=0)
    return {int(j): float(means[j]) for j in layout.idx_knowledge}


def select_top_tokens(scores: Mapping[int, float], m: int) -> list[int]:
    """Indices of the min(m, n) largest scores; ties go to the smaller token
    index; result sorted ascending by token index."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    ranked = sorted(scores, key=lambda j: (-scores[j], j))
    return sorted(ranked[:m])


def tokens_to_spans(indices: Sequence[int], layout: SequenceLayout) -> list[CharSpan]:
    """Map token indices to character spans via the offset mapping; tokens
    with empty offsets are dropped; spans are clipped to the effective
    knowledge length when the sequence was truncated."""
    limit = layout.effective_len() if layout.truncated else len(layout.knowledge_text)
    spans = []
    for idx in indices:
        start, end = layout.offset_mapping[idx]
        if end <= start:
            continue
        end = min(end, limit)
        if end <= start:
            continue
        spans.append(CharSpan(start, end))
    return sorted(spans)


def merge_spans(spans: Sequence[CharSpan], gap: int) -> list[CharSpan]:
    """Greedy left-to-right merge: consecutive spans fuse when the character
    distance between them is at most `gap`."""
    for a, b in zip(spans, spans[1:]):
        if b.start < a.start:
            raise ValueError("spans must be sorted by start")
    merged: list[CharSpan] = []
    for span in spans:
        if merged and span.start - merged[-1].end <= gap:
            last = merged[-1]
            merged[-1] = CharSpan(last.start, max(last.end, span.end))
        else:
            merged.append(span)
    return merged


def extract_phrases(
    merged: Sequence[CharSpan],
    layout: SequenceLayout,
    max_phrases: int,
    token_scores: Mapping[int, float],
) -> KeywordSet:
    """Substring extraction per merged span, in text order. Whitespace-only
    spans are dropped, duplicate texts keep their first occurrence, and the
    first `max_phrases` survivors are kept. The phrase score is the max score
    among tokens whose offsets intersect the span (diagnostic only)."""
    text = layout.knowledge_text
    phrases: list[Phrase] = []
    seen: set[str] = set()
    for span in merged:
        if span.end > len(text):
            raise ValueError(f"span [{span.start}, {span.end}) exceeds knowledge text")
        surface = text[span.start : span.end]
        if not surface.strip():
            continue
        if surface in seen:
            continue
        seen.add(surface)
        score = 0.0
        for j, s in token_scores.items():
            a, b = layout.offset_mapping[j]
            if a < span.end and b > span.start:
                score = max(score, s)
        phrases.append(Phrase(text=surface, span=span, score=score))
        if len(phrases) == max_phrases:
            break
    return KeywordSet(phrases=phrases)


def select_phrases(
    dump: AttentionDump,
    m: int = 30,
    gap: int = 3,
    max_phrases: int = 10,
) -> KeywordSet:
    """Full text-side pipeline from one dump to its keyword set."""
    layout = layout_of(dump.meta)
    matrix = interaction_matrix(dump.self_attn, dump.self_grad)
    scores = knowledge_token_scores(matrix, layout)
    top = select_top_tokens(scores, m)
    spans = merge_spans(tokens_to_spans(top, layout), gap)
    return extract_phrases(spans, layout, max_phrases, scores)
