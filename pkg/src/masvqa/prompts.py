"""Byte-exact construction of the two-stage prompts from explicit evidence,
implicit knowledge, and the question. Templates are checked-in files with
{evidence}, {imknowledge}, {question} placeholders and two <image> slots."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Sequence, Union

from .phrases import KeywordSet

ImageRef = Union[str, bytes]  # file path or raw encoded image bytes

IMAGE_PLACEHOLDER = "<image>"
_PLACEHOLDER_RE = re.compile(r"(\{(?:evidence|imknowledge|question)\})")


@dataclass
class PromptBundle:
    text: str
    images: list[ImageRef]  # exactly (original, masked)
    generation_params: dict = field(default_factory=dict)

    def text_hash(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    """Read a shipped template file ('implicit' or 'answer'), LF-normalized."""
    raw = resources.files("masvqa.templates").joinpath(f"{name}.txt").read_text("utf-8")
    return raw.replace("\r\n", "\n")


def _fill(template: str, values: dict[str, str]) -> str:
    # single pass over the template: placeholder-like text inside the
    # substituted values is never re-scanned
    parts = _PLACEHOLDER_RE.split(template)
    return "".join(
        values[p[1:-1]] if p.startswith("{") and p[1:-1] in values else p for p in parts
    )


def format_evidence(passages: Sequence[str], keyword_sets: Sequence[KeywordSet]) -> str:
    """One block per passage, in retrieval order:
    'Knowledge: <passage>\\nKeywords: <p1; p2; ...>' separated by blank lines."""
    if len(passages) != len(keyword_sets):
        raise ValueError(f"{len(passages)} passages but {len(keyword_sets)} keyword sets")
    blocks = [
        f"Knowledge: {passage}\nKeywords: {'; '.join(kws.texts())}"
        for passage, kws in zip(passages, keyword_sets)
    ]
    return "\n\n".join(blocks)


def build_implicit_prompt(
    evidence: str,
    question: str,
    images: Sequence[ImageRef],
    temperature: float = 0.7,
    max_tokens: int = 512,
) -> PromptBundle:
    if not question:
        raise ValueError("question must be non-empty")
    text = _fill(load_template("implicit"), {"evidence": evidence, "question": question})
    return PromptBundle(
        text=text,
        images=list(images),
        generation_params={"temperature": temperature, "max_tokens": max_tokens},
    )


def build_answer_prompt(
    evidence: str,
    implicit: str,
    question: str,
    images: Sequence[ImageRef],
    temperature: float = 0.7,
    max_tokens: int = 512,
) -> PromptBundle:
    if not question:
        raise ValueError("question must be non-empty")
    text = _fill(
        load_template("answer"),
        {"evidence": evidence, "imknowledge": implicit, "question": question},
    )
    return PromptBundle(
        text=text,
        images=list(images),
        generation_params={"temperature": temperature, "max_tokens": max_tokens},
    )
