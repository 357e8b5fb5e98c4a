"""Chat-completion endpoint answerer with retries and bounded concurrent dispatch."""

from __future__ import annotations

import base64
import json
import logging
import mimetypes
import os
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import requests

from .answerers import LETTERS, Answerer, AnswerRecord, record_from_raw
from .errors import DataError, ProtocolError, TransportError

logger = logging.getLogger(__name__)

MODES = ("multimodal", "question-only")


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    auth_env: str = ""
    timeout_s: float = 60.0
    max_retries: int = 3
    parallelism: int = 1
    backoff_s: float = 1.0

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "EndpointConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read endpoint config {path}: {exc}") from None
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise DataError(f"unknown endpoint config keys: {sorted(unknown)}")
        if "base_url" not in raw or "model" not in raw:
            raise DataError("endpoint config needs base_url and model")
        return cls(**raw)

    def token(self) -> str | None:
        return os.environ.get(self.auth_env) if self.auth_env else None


def format_prompt(question: str, options: Sequence[str] | None, context: Sequence[str] | None = None) -> str:
    parts = []
    if context:
        parts.append("Context:\n" + "\n".join(f"- {c}" for c in context))
    parts.append(f"Question: {question}")
    if options:
        parts.append("Options:\n" + "\n".join(f"{LETTERS[k]}. {o}" for k, o in enumerate(options)))
        parts.append("Answer with the letter of the correct option.")
    return "\n\n".join(parts)


def image_payload(image_ref: str) -> dict:
    """Image content part: URLs pass through, readable local files are inlined as data URLs."""
    if image_ref.startswith(("http://", "https://", "data:")):
        url = image_ref
    elif os.path.isfile(image_ref):
        mime = mimetypes.guess_type(image_ref)[0] or "application/octet-stream"
        data = base64.b64encode(Path(image_ref).read_bytes()).decode("ascii")
        url = f"data:{mime};base64,{data}"
    else:
        url = image_ref
    return {"type": "image_url", "image_url": {"url": url}}


def build_request(
    config: EndpointConfig,
    image_ref: str | None,
    question: str,
    options: Sequence[str] | None,
    mode: str = "multimodal",
    context: Sequence[str] | None = None,
) -> dict:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    text = format_prompt(question, options, context)
    if mode == "multimodal" and image_ref:
        content: object = [{"type": "text", "text": text}, image_payload(image_ref)]
    else:
        content = text
    return {
        "model": config.model,
        "messages": [{"role": "user", "content": content}],
        "temperature": 0,
    }


def extract_reply(body: object) -> str:
    try:
        content = body["choices"][0]["message"]["content"]  # type: ignore[index]
    except (KeyError, IndexError, TypeError):
        raise ProtocolError("reply lacks choices[0].message.content") from None
    if isinstance(content, list):
        content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    if not isinstance(content, str):
        raise ProtocolError("reply content is not text")
    return content


def post_with_retries(config: EndpointConfig, payload: dict, session: requests.Session | None = None) -> dict:
    url = config.base_url.rstrip("/") + "/chat/completions"
    headers = {"Content-Type": "application/json"}
    token = config.token()
    if token:
        headers["Authorization"] = f"Bearer {token}"
    poster = session or requests
    last: Exception | None = None
    for attempt in range(config.max_retries + 1):
        try:
            resp = poster.post(url, json=payload, headers=headers, timeout=config.timeout_s)
        except requests.RequestException as exc:
            last = exc
        else:
            if resp.status_code == 429 or resp.status_code >= 500:
                last = TransportError(f"HTTP {resp.status_code}")
            elif resp.status_code >= 400:
                raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:300]}")
            else:
                try:
                    return resp.json()
                except ValueError:
                    raise ProtocolError("reply is not JSON") from None
        if attempt < config.max_retries:
            time.sleep(config.backoff_s * (2 ** attempt))
    raise TransportError(f"{url} failed after {config.max_retries + 1} attempt(s): {last}")


class HttpAnswerer(Answerer):
    """Remote chat-completion model; ``mode='question-only'`` never sends the image."""

    deterministic = False

    def __init__(self, config: EndpointConfig, mode: str = "multimodal"):
        self.config = config
        self.mode = mode

    @property
    def name(self) -> str:
        return f"http:{self.config.model}"

    def answer(self, image_ref, question, options=None, context=None) -> AnswerRecord:
        payload = build_request(self.config, image_ref, question, options, self.mode, context)
        body = post_with_retries(self.config, payload)
        return record_from_raw(extract_reply(body), options)

    def answer_many(self, instances, parallelism=None):
        return super().answer_many(instances, parallelism or self.config.parallelism)


def http_answer(endpoint_config: EndpointConfig, instance, mode: str = "multimodal") -> AnswerRecord:
    return HttpAnswerer(endpoint_config, mode).answer_instance(instance)

