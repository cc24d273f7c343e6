"""Chat-completions client with schema-constrained verdicts.

Talks to any OpenAI-compatible endpoint: the verdict schema is sent through
``response_format`` for servers with guided decoding, and responses are
re-validated client side regardless (defense in depth). Models that emit a
reasoning phase before the JSON are handled by extracting the last balanced
JSON object from the content. Batches run under a bounded-concurrency
semaphore with per-prompt failure isolation.
"""

from __future__ import annotations

import asyncio
import json
import os
from dataclasses import dataclass
from typing import Sequence, Type, TypeVar

import httpx
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .prompts import PromptBundle

BACKOFF_BASE_SECONDS = 0.25

ENV_ENDPOINT = "METHODOLINT_ENDPOINT"
ENV_MODEL = "METHODOLINT_MODEL"
ENV_API_KEY = "METHODOLINT_API_KEY"


class InferenceError(Exception):
    """One prompt failed; names the pattern (or call label) and attempt count."""

    def __init__(self, message: str, *, label: str | None = None, attempts: int = 0):
        self.label = label
        self.attempts = attempts
        prefix = f"[{label}] " if label else ""
        suffix = f" (after {attempts} attempt{'s' if attempts != 1 else ''})" if attempts else ""
        super().__init__(f"{prefix}{message}{suffix}")


class SchemaViolation(ValueError):
    """Response content did not validate against the expected schema."""


class ModelVerdict(BaseModel):
    """Schema-constrained runtime-model answer for one (file, pattern) pair."""

    model_config = ConfigDict(extra="forbid")

    detected: bool
    issue_summary: str = ""
    explanation: str = ""
    line_refs: list[int] = []

    @field_validator("line_refs")
    @classmethod
    def _lines_positive(cls, v: list[int]) -> list[int]:
        if any(n < 1 for n in v):
            raise ValueError("line_refs must be positive integers")
        return v

    @model_validator(mode="after")
    def _consistent(self) -> "ModelVerdict":
        if not self.detected and self.line_refs:
            raise ValueError("line_refs must be empty when detected is false")
        if self.detected and not self.issue_summary.strip():
            raise ValueError("issue_summary must be non-empty when detected")
        return self


# Hand-written so every field is required under server-side guided decoding,
# independent of the pydantic defaults used for lenient client validation.
VERDICT_JSON_SCHEMA = {
    "type": "object",
    "properties": {
        "detected": {"type": "boolean"},
        "issue_summary": {"type": "string"},
        "explanation": {"type": "string"},
        "line_refs": {"type": "array", "items": {"type": "integer", "minimum": 1}},
    },
    "required": ["detected", "issue_summary", "explanation", "line_refs"],
    "additionalProperties": False,
}


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    api_key: str | None = None
    request_timeout: float = 120.0
    max_retries: int = 2
    max_concurrency: int = 8

    def __post_init__(self):
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @classmethod
    def from_env(cls, **overrides) -> "EndpointConfig":
        fields = {
            "base_url": os.environ.get(ENV_ENDPOINT, "http://127.0.0.1:8000"),
            "model_name": os.environ.get(ENV_MODEL, "default"),
            "api_key": os.environ.get(ENV_API_KEY),
        }
        fields.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**fields)

    @property
    def chat_url(self) -> str:
        return self.base_url.rstrip("/") + "/v1/chat/completions"

    def headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers


def extract_last_json_object(text: str) -> str:
    """Return the last balanced top-level ``{...}`` in ``text``.

    Reasoning-capable models may emit a thinking preamble before the schema
    object; only the final object is the verdict.
    """
    spans: list[tuple[int, int]] = []
    depth = 0
    start = -1
    in_string = False
    escape = False
    for i, ch in enumerate(text):
        if in_string:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            if depth > 0:
                in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0:
                    spans.append((start, i + 1))
    if not spans:
        raise SchemaViolation("no JSON object found in response content")
    lo, hi = spans[-1]
    return text[lo:hi]


M = TypeVar("M", bound=BaseModel)


def _parse_content(content: str, model_cls: Type[M]) -> M:
    try:
        payload = json.loads(extract_last_json_object(content))
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"response is not valid JSON: {exc}") from exc
    try:
        return model_cls.model_validate(payload)
    except ValidationError as exc:
        raise SchemaViolation(f"response violates schema: {exc.errors()[0]['msg']}") from exc


async def _call_once(
    http: httpx.AsyncClient,
    cfg: EndpointConfig,
    system: str,
    user: str,
    schema: dict | None,
    send_response_format: bool,
) -> str:
    body: dict = {
        "model": cfg.model_name,
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ],
    }
    if schema is not None and send_response_format:
        body["response_format"] = {
            "type": "json_schema",
            "json_schema": {"name": "verdict", "schema": schema},
        }
    response = await http.post(cfg.chat_url, json=body, headers=cfg.headers())
    response.raise_for_status()
    data = response.json()
    try:
        content = data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise SchemaViolation(f"malformed chat-completions envelope: {exc!r}") from exc
    if not isinstance(content, str):
        raise SchemaViolation("message content is not a string")
    return content


async def _request_model(
    http: httpx.AsyncClient,
    cfg: EndpointConfig,
    system: str,
    user: str,
    model_cls: Type[M],
    schema: dict | None,
    label: str,
) -> M:
    attempts = 0
    send_response_format = True
    fallback_used = False
    last_error: Exception | None = None
    while attempts <= cfg.max_retries:
        attempts += 1
        try:
            content = await _call_once(http, cfg, system, user, schema, send_response_format)
            return _parse_content(content, model_cls)
        except httpx.HTTPStatusError as exc:
            status = exc.response.status_code
            if status == 400 and send_response_format and not fallback_used:
                # Server rejects response_format: fall back to client-side
                # validation only. Not counted as a retry.
                send_response_format = False
                fallback_used = True
                attempts -= 1
                continue
            last_error = exc
            if status < 500:
                raise InferenceError(
                    f"endpoint returned HTTP {status}", label=label, attempts=attempts
                ) from exc
        except (httpx.TransportError, SchemaViolation) as exc:
            last_error = exc
        if attempts <= cfg.max_retries:
            await asyncio.sleep(BACKOFF_BASE_SECONDS * 2 ** (attempts - 1))
    raise InferenceError(str(last_error), label=label, attempts=attempts) from last_error


def _http_client(cfg: EndpointConfig) -> httpx.AsyncClient:
    return httpx.AsyncClient(timeout=httpx.Timeout(cfg.request_timeout))


async def request_verdict_async(bundle: PromptBundle, cfg: EndpointConfig) -> ModelVerdict:
    async with _http_client(cfg) as http:
        return await _request_model(
            http, cfg, bundle.system_message, bundle.user_message,
            ModelVerdict, VERDICT_JSON_SCHEMA, bundle.pattern_id,
        )


def request_verdict(bundle: PromptBundle, cfg: EndpointConfig) -> ModelVerdict:
    """Send one prompt and return its validated verdict (raises InferenceError)."""
    return asyncio.run(request_verdict_async(bundle, cfg))


async def run_batch_async(
    bundles: Sequence[PromptBundle],
    cfg: EndpointConfig,
    semaphore: asyncio.Semaphore | None = None,
) -> list[ModelVerdict | InferenceError]:
    """All prompts concurrently, at most ``max_concurrency`` in flight.

    Output order matches input order; one prompt's failure appears as an
    InferenceError in its slot and never aborts the others. Callers batching
    several files at once pass a shared ``semaphore`` so the bound holds
    across the whole run, not per call.
    """
    if semaphore is None:
        semaphore = asyncio.Semaphore(cfg.max_concurrency)

    async with _http_client(cfg) as http:

        async def one(bundle: PromptBundle) -> ModelVerdict | InferenceError:
            async with semaphore:
                try:
                    return await _request_model(
                        http, cfg, bundle.system_message, bundle.user_message,
                        ModelVerdict, VERDICT_JSON_SCHEMA, bundle.pattern_id,
                    )
                except InferenceError as exc:
                    return exc

        return list(await asyncio.gather(*(one(b) for b in bundles)))


def run_batch(
    bundles: Sequence[PromptBundle], cfg: EndpointConfig
) -> list[ModelVerdict | InferenceError]:
    return asyncio.run(run_batch_async(bundles, cfg))


def request_structured(
    system: str, user: str, model_cls: Type[M], cfg: EndpointConfig, label: str
) -> M:
    """One schema-validated call with an arbitrary pydantic response model.

    Used by the semantic gate and the finding judge, which have their own
    response schemas.
    """

    async def go() -> M:
        async with _http_client(cfg) as http:
            return await _request_model(
                http, cfg, system, user, model_cls,
                model_cls.model_json_schema(), label,
            )

    return asyncio.run(go())


def probe_endpoint(cfg: EndpointConfig) -> None:
    """Raise InferenceError if the endpoint is not reachable at all.

    Any HTTP response (even 404) proves reachability; only transport-level
    failure counts as unreachable.
    """
    url = cfg.base_url.rstrip("/") + "/v1/models"
    try:
        httpx.get(url, headers=cfg.headers(), timeout=min(cfg.request_timeout, 10.0))
    except httpx.TransportError as exc:
        raise InferenceError(f"endpoint {cfg.base_url} unreachable: {exc}") from exc
