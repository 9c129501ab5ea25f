"""Pluggable text-generation backends.

Two implementations share one calling convention, ``backend(messages) -> str``:
an HTTP client speaking the de-facto chat-completions JSON shape, and a
deterministic template backend for offline tests.

The template backend is driven by a directive line ``@@DIRECTIVE {json}@@``
embedded in the final message (contractually its final line; the scanner
takes the last directive found anywhere in that message, so directives
carried inside rendered utterances also work).
"""

from __future__ import annotations

import json
import os
import random
import re
import time
from dataclasses import dataclass
from threading import BoundedSemaphore
from typing import Callable, Sequence

import httpx

from .errors import BackendError, BackendProtocolError

Backend = Callable[[Sequence["ChatMessage"]], str]

ROLES = ("system", "user", "assistant")

ENV_API_BASE = "ITERCHAT_API_BASE"
ENV_API_KEY = "ITERCHAT_API_KEY"
ENV_MODEL = "ITERCHAT_MODEL"

DIRECTIVE_RE = re.compile(r"@@DIRECTIVE (\{.*\})@@\s*$")

_TRANSIENT_STATUSES = {429, 500, 502, 503, 504}
_BACKOFF_BASE = 0.5
_BACKOFF_CAP = 8.0


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise BackendError(f"unknown message role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise BackendError(f"{self.role} message has empty content")

    def to_json_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class BackendConfig:
    endpoint_url: str
    model_id: str
    api_key_env: str = ENV_API_KEY
    timeout: float = 30.0
    max_retries: int = 3
    temperature: float = 0.0
    parallelism: int = 4

    def __post_init__(self):
        if self.timeout <= 0:
            raise BackendError("timeout must be > 0")
        if self.max_retries < 0:
            raise BackendError("max_retries must be >= 0")
        if not 0.0 <= self.temperature <= 2.0:
            raise BackendError("temperature must be in [0, 2]")

    @classmethod
    def from_env(cls, **overrides) -> "BackendConfig":
        fields = {
            "endpoint_url": os.environ.get(ENV_API_BASE, "http://127.0.0.1:8000/v1"),
            "model_id": os.environ.get(ENV_MODEL, "gpt-4"),
        }
        fields.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**fields)


def _completions_url(base: str) -> str:
    base = base.rstrip("/")
    if base.endswith("/chat/completions"):
        return base
    return base + "/chat/completions"


def complete(
    config: BackendConfig,
    messages: Sequence[ChatMessage],
    *,
    sleep: Callable[[float], None] = time.sleep,
    rng: Callable[[], float] = random.random,
) -> str:
    """One chat completion with retry on transient failures.

    Retries (full-jitter exponential backoff) on timeouts, connection drops,
    429 and 5xx, at most max_retries times after the first attempt.  Other
    4xx fail immediately.  A response without a non-empty string content
    field is a protocol error, never an empty return.
    """
    if not messages:
        raise BackendError("messages list is empty; refusing to call backend")
    url = _completions_url(config.endpoint_url)
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(config.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    payload = {
        "model": config.model_id,
        "messages": [m.to_json_dict() for m in messages],
        "temperature": config.temperature,
    }

    attempt = 0
    while True:
        attempt += 1
        failure: str | None = None
        try:
            response = httpx.post(url, json=payload, headers=headers, timeout=config.timeout)
        except (httpx.TimeoutException, httpx.TransportError) as exc:
            failure = f"transport error: {exc}"
        else:
            if response.status_code == 200:
                return _parse_completion_body(response.text)
            excerpt = response.text[:200]
            if response.status_code in _TRANSIENT_STATUSES:
                failure = f"HTTP {response.status_code}: {excerpt}"
            else:
                raise BackendError(f"HTTP {response.status_code}: {excerpt}")
        if attempt > config.max_retries:
            raise BackendError(f"retries exhausted after {attempt} attempts; last: {failure}")
        delay = min(_BACKOFF_CAP, _BACKOFF_BASE * (2 ** (attempt - 1))) * rng()
        sleep(delay)


def _parse_completion_body(body: str) -> str:
    try:
        data = json.loads(body)
    except json.JSONDecodeError as exc:
        raise BackendProtocolError(f"response is not JSON: {exc}", raw_body=body) from exc
    try:
        content = data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise BackendProtocolError(
            "response missing choices[0].message.content", raw_body=body
        ) from exc
    if not isinstance(content, str) or not content:
        raise BackendProtocolError("response content is empty or not a string", raw_body=body)
    return content


def make_http_backend(config: BackendConfig) -> Backend:
    """Bind a config into a callable; caps in-flight requests at config.parallelism."""
    gate = BoundedSemaphore(max(1, config.parallelism))

    def call(messages: Sequence[ChatMessage]) -> str:
        with gate:
            return complete(config, messages)

    return call


# ---------------------------------------------------------------------------
# Template backend: a pure function of its input, for offline/deterministic runs.

ADD_PATTERN = "I like {value}."
REMOVE_PATTERN = "Actually, drop {slot}."
SET_PATTERN = "I want {slot} to be {value}."
CLEAR_PATTERN = "Forget about {slot}."
TEMPLATE_SYSTEM_UTTERANCE = "Got it. Anything else you care about?"

DRAFT_FIXTURE_SLOTS = (
    {
        "name": "price",
        "description": "Accepted price range",
        "multi_valued": False,
        "allow_free_values": False,
        "schema_values": ["less than $50", "between $100 and $200", "None"],
    },
    {
        "name": "brand",
        "description": "Preferred brands",
        "multi_valued": True,
        "allow_free_values": True,
        "schema_values": ["acme", "contoso"],
    },
    {
        "name": "color",
        "description": "Preferred colors",
        "multi_valued": True,
        "allow_free_values": False,
        "schema_values": ["red", "blue", "black"],
    },
)


def find_directive(text: str) -> dict | None:
    """Last @@DIRECTIVE {json}@@ line in the text, parsed; None when absent."""
    found = None
    for line in text.splitlines():
        match = DIRECTIVE_RE.search(line.strip())
        if match:
            try:
                candidate = json.loads(match.group(1))
            except json.JSONDecodeError:
                continue
            if isinstance(candidate, dict):
                found = candidate
    return found


def format_directive(payload: dict) -> str:
    return f"@@DIRECTIVE {json.dumps(payload, ensure_ascii=False)}@@"


def realized_user_line(op: dict) -> str:
    kind = str(op.get("op", ""))
    slot = str(op.get("slot", ""))
    values = [str(v) for v in op.get("values", [])]
    if kind == "add":
        return " ".join(ADD_PATTERN.format(value=v) for v in values)
    if kind == "remove":
        return REMOVE_PATTERN.format(slot=slot)
    if kind == "set":
        return " ".join(SET_PATTERN.format(slot=slot, value=v) for v in values)
    if kind == "clear":
        return CLEAR_PATTERN.format(slot=slot)
    return ""


def template_complete(messages: Sequence[ChatMessage]) -> str:
    """Deterministic reply computed from the directive in the last message."""
    if not messages:
        raise BackendError("messages list is empty; refusing to call backend")
    directive = find_directive(messages[-1].content)
    if directive is None:
        raise BackendError("no directive")
    kind = directive.get("kind")

    if kind == "realize":
        gain_ops = directive.get("state_gain", [])
        lines = [realized_user_line(op) for op in gain_ops]
        visible = " ".join(line for line in lines if line)
        stamp = format_directive(
            {
                "kind": "extract",
                "state_gain": gain_ops,
                "preference_extraction": directive.get("preference_extraction", {}),
            }
        )
        reply = {
            "system_utterance": TEMPLATE_SYSTEM_UTTERANCE,
            "user_utterance": f"{visible}\n{stamp}" if visible else "",
        }
        return json.dumps(reply, ensure_ascii=False)

    if kind == "extract":
        reply = {"state_gain": directive.get("state_gain", [])}
        if "preference_extraction" in directive:
            reply["preference_extraction"] = directive["preference_extraction"]
        return json.dumps(reply, ensure_ascii=False)

    if kind == "schema_draft":
        fixture = {
            "domain_name": directive.get("domain_name", "generic"),
            "version": "draft-1",
            "slots": [dict(s) for s in DRAFT_FIXTURE_SLOTS],
        }
        return json.dumps(fixture, ensure_ascii=False)

    if kind == "schema_values":
        names = [str(n) for n in directive.get("slots", [])]
        return json.dumps({n: [f"{n} option A", f"{n} option B"] for n in names}, ensure_ascii=False)

    raise BackendError(f"no directive handler for kind {kind!r}")
