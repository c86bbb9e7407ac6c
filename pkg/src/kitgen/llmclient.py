"""Chat-completion transport plus a deterministic offline mock backend.

The HTTP backend speaks the common chat-completions wire shape (single
user message) and retries rate limits and server errors with exponential
backoff and full jitter. The mock backend echoes the prompt's bound topic
into a syntactically valid reply so the whole pipeline runs offline.
Cost accounting is exact decimal arithmetic over reported token usage.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, runtime_checkable

import numpy as np

from .core import TaskFamily, TokenUsage
from .errors import ConfigError, TransportError

logger = logging.getLogger(__name__)

RETRY_BASE_DELAY_S = 1.0
RETRY_FACTOR = 2.0
RETRY_MAX_ATTEMPTS = 5
DEFAULT_TIMEOUT_S = 60.0


@dataclass(frozen=True)
class GenerationParams:
    """Sampling parameters. Defaults balance output quality against
    diversity: temperature 1.0, top_p 1.0."""

    model_id: str
    temperature: float = 1.0
    top_p: float = 1.0
    max_output_tokens: int = 256

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigError(f"temperature {self.temperature} outside [0, 2]")
        if not 0.0 < self.top_p <= 1.0:
            raise ConfigError(f"top_p {self.top_p} outside (0, 1]")


@runtime_checkable
class PromptLike(Protocol):
    text: str
    sha256: str


@dataclass(frozen=True)
class Attempt:
    status: int | None
    error: str | None = None


@dataclass(frozen=True)
class CompletionResult:
    text: str
    usage: TokenUsage
    attempts: tuple[Attempt, ...] = ()


class Backend(Protocol):
    def complete(
        self,
        prompt: PromptLike,
        params: GenerationParams,
        rng: np.random.Generator | None = None,
    ) -> CompletionResult: ...


def build_request_body(prompt: PromptLike, params: GenerationParams) -> dict[str, Any]:
    """The exact JSON body sent to the endpoint (wire-stability tested)."""
    return {
        "model": params.model_id,
        "messages": [{"role": "user", "content": prompt.text}],
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_tokens": params.max_output_tokens,
    }


def retry_with_backoff(
    send: Callable[[], tuple[int, str]],
    *,
    sleeper: Callable[[float], None] = time.sleep,
    jitter_rng=None,
    max_attempts: int = RETRY_MAX_ATTEMPTS,
    what: str = "request",
) -> tuple[int, str, list[Attempt]]:
    """Run ``send`` with the standard retry policy.

    Retries HTTP 429 / 5xx and timeouts with exponential backoff (base 1s,
    factor 2, full jitter). Other 4xx codes fail immediately. Returns the
    first success plus the attempt log, or raises TransportError.
    """
    import random as _random

    jitter = jitter_rng if jitter_rng is not None else _random.Random()
    attempts: list[Attempt] = []
    for attempt in range(max_attempts):
        try:
            status, body = send()
        except TimeoutError as exc:
            attempts.append(Attempt(status=None, error=f"timeout: {exc}"))
            status, body = None, ""
        else:
            attempts.append(Attempt(status=status))
            if 200 <= status < 300:
                return status, body, attempts
            if status != 429 and 400 <= status < 500:
                raise TransportError(f"{what} failed with HTTP {status}: {body[:500]}")
        if attempt < max_attempts - 1:
            delay = RETRY_BASE_DELAY_S * (RETRY_FACTOR**attempt) * jitter.random()
            sleeper(delay)
    raise TransportError(f"{what} failed after {max_attempts} attempts")


def _scrub(headers: Mapping[str, str]) -> dict[str, str]:
    return {k: ("<redacted>" if k.lower() == "authorization" else v) for k, v in headers.items()}


class HttpBackend:
    """OpenAI-compatible chat-completions client.

    The API key is read from the environment (never from config files) and
    never written to logs or archives. ``post`` is injectable for tests and
    must return ``(status_code, body_text)``.
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: str = "OPENAI_API_KEY",
        timeout_s: float = DEFAULT_TIMEOUT_S,
        max_in_flight: int = 4,
        audit_dir: str | Path | None = None,
        post: Callable[..., tuple[int, str]] | None = None,
        sleeper: Callable[[float], None] = time.sleep,
        jitter_rng=None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.audit_dir = Path(audit_dir) if audit_dir else None
        self._post = post or self._requests_post
        self._sleeper = sleeper
        self._jitter_rng = jitter_rng
        self._gate = threading.Semaphore(max_in_flight)

    def _requests_post(self, url: str, headers: dict, body: dict, timeout: float):
        import requests

        try:
            resp = requests.post(url, headers=headers, json=body, timeout=timeout)
        except (requests.Timeout, requests.ConnectionError) as exc:
            # transient transport failures follow the timeout retry path
            raise TimeoutError(str(exc)) from exc
        return resp.status_code, resp.text

    def _archive(self, prompt: PromptLike, body: dict, response: dict) -> None:
        if self.audit_dir is None:
            return
        self.audit_dir.mkdir(parents=True, exist_ok=True)
        payload = {"request": body, "response": response}
        path = self.audit_dir / f"{prompt.sha256}.json"
        path.write_text(json.dumps(payload, ensure_ascii=False, indent=2), encoding="utf-8")

    def complete(
        self,
        prompt: PromptLike,
        params: GenerationParams,
        rng: np.random.Generator | None = None,
    ) -> CompletionResult:
        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise ConfigError(
                f"no API key in environment variable {self.api_key_env!r}"
                " (use the mock backend for offline runs)"
            )
        body = build_request_body(prompt, params)
        url = f"{self.base_url}/chat/completions"
        headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}
        logger.debug("POST %s headers=%s", url, _scrub(headers))

        with self._gate:
            status, text, attempts = retry_with_backoff(
                lambda: self._post(url, headers, body, self.timeout_s),
                sleeper=self._sleeper,
                jitter_rng=self._jitter_rng,
                what="chat completion",
            )
        try:
            data = json.loads(text)
            reply = data["choices"][0]["message"]["content"]
            usage_raw = data.get("usage", {})
            usage = TokenUsage(
                prompt_tokens=int(usage_raw.get("prompt_tokens", 0)),
                completion_tokens=int(usage_raw.get("completion_tokens", 0)),
            )
        except (KeyError, IndexError, ValueError, json.JSONDecodeError) as exc:
            raise TransportError(f"malformed completion response: {exc}: {text[:500]}") from exc
        self._archive(prompt, body, {"status": status, "body": data})
        return CompletionResult(text=reply, usage=usage, attempts=tuple(attempts))


def _approx_tokens(text: str) -> int:
    # Documented approximation used by the mock: ceil(chars / 4).
    return math.ceil(len(text) / 4)


_SENTENCE_FRAMES = (
    "A recent case report describes a patient presenting with {topic} after {filler}.",
    "Clinicians observed that {topic} was documented during {filler}.",
    "The chart notes {topic} in the context of {filler}.",
    "Findings related to {topic} were recorded following {filler}.",
    "During the follow-up visit, {topic} was discussed alongside {filler}.",
    "Records indicate a history of {topic} complicated by {filler}.",
)

_FILLERS = (
    "routine screening",
    "a medication review",
    "an inpatient admission",
    "a telehealth consultation",
    "long-term therapy",
    "an emergency evaluation",
    "a follow-up examination",
    "community outreach",
)

_MEDICATIONS = ("metoprolol", "lisinopril", "amoxicillin", "atorvastatin", "insulin glargine")
_DOSAGES = ("25 mg", "10 mg", "500 mg", "40 mg", "12 units")

_STYLE_REPLY = (
    "1. medical literature\n"
    "2. patient-doctor dialogues\n"
    "3. clinical trial reports"
)


class MockBackend:
    """Deterministic offline backend.

    Generation replies embed the prompt's bound topic verbatim so parsing
    and coverage metrics are exercised end to end; elicitation replies are
    numbered item lists. When no per-call generator is supplied, a stateful
    per-prompt counter keeps sequential pagination deterministic.
    """

    def __init__(self, seed: int = 0, audit_dir: str | Path | None = None):
        self.seed = seed
        self.audit_dir = Path(audit_dir) if audit_dir else None
        self._page_counts: dict[str, int] = {}
        self._lock = threading.Lock()

    def _fallback_rng(self, prompt: PromptLike) -> np.random.Generator:
        with self._lock:
            page = self._page_counts.get(prompt.sha256, 0)
            self._page_counts[prompt.sha256] = page + 1
        key = int(prompt.sha256[:12], 16)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(key, page))
        return np.random.default_rng(seq)

    def _pick(self, rng: np.random.Generator, options) -> str:
        return options[int(rng.integers(0, len(options)))]

    def _sentence_for(self, rng: np.random.Generator, topic: str) -> str:
        frame = self._pick(rng, _SENTENCE_FRAMES)
        return frame.format(topic=topic, filler=self._pick(rng, _FILLERS))

    def _generation_reply(self, prompt, rng: np.random.Generator) -> str:
        bindings = prompt.bindings
        family = prompt.family
        topic = bindings.get("topic", self._pick(rng, _FILLERS))
        if family == TaskFamily.NER:
            sentence = self._sentence_for(rng, topic)
            return f"Sentence: {sentence}\nEntities: [{topic}]"
        if family == TaskFamily.ATTRIBUTE_EXTRACTION:
            med = self._pick(rng, _MEDICATIONS)
            dose = self._pick(rng, _DOSAGES)
            classes = _quoted_classes(prompt.text)
            sentence = (
                f"The patient was started on {med} {dose} daily for {topic} "
                f"after {self._pick(rng, _FILLERS)}."
            )
            lines = [f"Sentence: {sentence}"]
            for cls in classes:
                low = cls.lower()
                if low == "medication":
                    lines.append(f"{cls}: [{med}]")
                elif low == "dosage":
                    lines.append(f"{cls}: [{dose}]")
            if len(lines) == 1:
                first = classes[0] if classes else "Attribute"
                lines.append(f"{first}: [{topic}]")
            return "\n".join(lines)
        if family == TaskFamily.RELATION_EXTRACTION:
            head = bindings.get("topic0", topic)
            tail = bindings.get("topic1", self._pick(rng, _FILLERS))
            return (
                f"Studies suggest that {head} interacts with {tail} "
                f"in patients undergoing {self._pick(rng, _FILLERS)}."
            )
        return self._sentence_for(rng, topic)

    def _elicit_reply(self, prompt, rng: np.random.Generator) -> str:
        kind = getattr(prompt, "kind", "")
        if kind == "elicit_styles":
            return _STYLE_REPLY
        entity_type = getattr(prompt, "entity_type", "entity")
        offset = int(rng.integers(0, 2**31)) % 1_000_000
        lines = [
            f"{i + 1}. {entity_type} term {offset + i:06d}"
            for i in range(100)
        ]
        return "\n".join(lines)

    def _archive(self, prompt: PromptLike, reply: str) -> None:
        if self.audit_dir is None:
            return
        self.audit_dir.mkdir(parents=True, exist_ok=True)
        payload = {"request": {"prompt": prompt.text}, "response": {"text": reply}}
        path = self.audit_dir / f"{prompt.sha256}.json"
        path.write_text(json.dumps(payload, ensure_ascii=False, indent=2), encoding="utf-8")

    def complete(
        self,
        prompt: PromptLike,
        params: GenerationParams,
        rng: np.random.Generator | None = None,
    ) -> CompletionResult:
        if rng is None:
            rng = self._fallback_rng(prompt)
        if hasattr(prompt, "kind"):
            reply = self._elicit_reply(prompt, rng)
        elif hasattr(prompt, "family"):
            reply = self._generation_reply(prompt, rng)
        else:
            raise ConfigError(f"mock backend cannot serve prompt type {type(prompt).__name__}")
        usage = TokenUsage(
            prompt_tokens=_approx_tokens(prompt.text),
            completion_tokens=_approx_tokens(reply),
        )
        self._archive(prompt, reply)
        return CompletionResult(text=reply, usage=usage, attempts=(Attempt(status=200),))


def _quoted_classes(prompt_text: str) -> list[str]:
    """Attribute class names quoted in the prompt body (template contract)."""
    return re.findall(r'"([^"]+)"', prompt_text)


@dataclass(frozen=True)
class ModelPrice:
    input_per_1k: Decimal
    output_per_1k: Decimal

    def __post_init__(self) -> None:
        if self.input_per_1k < 0 or self.output_per_1k < 0:
            raise ConfigError("prices must be non-negative")


@dataclass(frozen=True)
class PriceTable:
    """USD prices per 1000 tokens, exact decimal arithmetic."""

    models: Mapping[str, ModelPrice] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping[str, Any]]) -> "PriceTable":
        models = {
            model_id: ModelPrice(
                input_per_1k=Decimal(str(entry["input_per_1k"])),
                output_per_1k=Decimal(str(entry["output_per_1k"])),
            )
            for model_id, entry in data.items()
        }
        return cls(models=models)

    @classmethod
    def load(cls, path: str | Path) -> "PriceTable":
        with Path(path).open("r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def cost_of(usage: TokenUsage, model_id: str, table: PriceTable) -> Decimal:
    """Exact USD cost of one usage record."""
    price = table.models.get(model_id)
    if price is None:
        raise ConfigError(f"model {model_id!r} not in price table ({sorted(table.models)})")
    thousand = Decimal(1000)
    return (
        Decimal(usage.prompt_tokens) / thousand * price.input_per_1k
        + Decimal(usage.completion_tokens) / thousand * price.output_per_1k
    )
