"""Generic client for a multimodal chat-completion endpoint.

Requests are chat-completions-style JSON POSTs with inline base64 images;
`complete_many` bounds the number of concurrent in-flight requests and
preserves input order in its results.
"""

from __future__ import annotations

import base64
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import requests

from .prompts import IMAGE_PLACEHOLDER, PromptBundle

log = logging.getLogger(__name__)

API_KEY_ENV = "MASVQA_API_KEY"
RESPONSE_TEXT_PATH = ("choices", 0, "message", "content")


class InferenceError(Exception):
    pass


class Timeout(InferenceError):
    pass


class HttpStatus(InferenceError):
    def __init__(self, code: int, body: str = ""):
        super().__init__(f"HTTP {code}: {body[:200]}")
        self.code = code


class MalformedResponse(InferenceError):
    pass


@dataclass
class InferenceConfig:
    endpoint_url: str
    model_name: str
    temperature: float = 0.7
    max_tokens: int = 512
    max_in_flight: int = 16
    timeout_seconds: float = 120.0
    retry_count: int = 2
    backoff_seconds: float = 0.5

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

    @classmethod
    def from_json(cls, obj: dict) -> "InferenceConfig":
        return cls(**{k: v for k, v in obj.items() if k in cls.__dataclass_fields__})


def _encode_image(ref: Union[str, bytes, Path]) -> str:
    data = ref if isinstance(ref, bytes) else Path(ref).read_bytes()
    return base64.b64encode(data).decode("ascii")


def build_request(bundle: PromptBundle, cfg: InferenceConfig) -> dict:
    """Build the JSON body: text segments interleaved with base64 image parts
    at each <image> slot. Pure function of its inputs (idempotent payloads)."""
    content: list[dict] = []
    segments = bundle.text.split(IMAGE_PLACEHOLDER)
    if len(segments) - 1 != len(bundle.images):
        raise ValueError(
            f"prompt has {len(segments) - 1} image slots but {len(bundle.images)} images"
        )
    for i, segment in enumerate(segments):
        if segment:
            content.append({"type": "text", "text": segment})
        if i < len(bundle.images):
            content.append({"type": "image", "data_base64": _encode_image(bundle.images[i])})
    params = bundle.generation_params
    return {
        "model": cfg.model_name,
        "temperature": params.get("temperature", cfg.temperature),
        "max_tokens": params.get("max_tokens", cfg.max_tokens),
        "messages": [{"role": "user", "content": content}],
    }


def _extract_text(payload: dict) -> str:
    node = payload
    try:
        for key in RESPONSE_TEXT_PATH:
            node = node[key]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"missing {'.'.join(map(str, RESPONSE_TEXT_PATH))}") from exc
    if not isinstance(node, str):
        raise MalformedResponse(f"response text is {type(node).__name__}, not str")
    return node


def complete(bundle: PromptBundle, cfg: InferenceConfig) -> str:
    """Send one request, retrying each failure up to retry_count times with
    exponential backoff; the request body is identical across retries."""
    body = build_request(bundle, cfg)
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(API_KEY_ENV)
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    last_error: InferenceError | None = None
    for attempt in range(cfg.retry_count + 1):
        if attempt:
            time.sleep(cfg.backoff_seconds * 2 ** (attempt - 1))
        try:
            resp = requests.post(
                cfg.endpoint_url, json=body, headers=headers, timeout=cfg.timeout_seconds
            )
        except requests.exceptions.Timeout:
            last_error = Timeout(f"no response within {cfg.timeout_seconds}s")
            continue
        except requests.exceptions.RequestException as exc:
            last_error = InferenceError(str(exc))
            continue
        if resp.status_code != 200:
            last_error = HttpStatus(resp.status_code, resp.text)
            continue
        try:
            payload = resp.json()
        except ValueError as exc:
            last_error = MalformedResponse(f"response is not JSON: {exc}")
            continue
        text = _extract_text(payload)
        log.debug("completion ok, prompt hash %s", bundle.text_hash())
        return text
    assert last_error is not None
    raise last_error


def complete_many(
    bundles: Sequence[PromptBundle], cfg: InferenceConfig
) -> list[Union[str, InferenceError]]:
    """Run requests with at most max_in_flight outstanding; the result list
    matches input order, with per-item failures returned as exceptions."""
    if not bundles:
        return []

    def one(bundle: PromptBundle) -> Union[str, InferenceError]:
        try:
            return complete(bundle, cfg)
        except InferenceError as exc:
            return exc

    with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
        return list(pool.map(one, bundles))
