"""Provider gateway: a uniform surface for text and vision agent calls.

Every agent interaction in the pipeline goes through Gateway.complete(), so
tests can swap in the deterministic ScriptedProvider and the whole engine
runs with no network and no model. Script entries are keyed on
(request_tag, content digest); the digest covers only the user-visible
content parts, not the system prompt, so prompt-template churn does not
invalidate a recorded script.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

from .errors import (
    DuplicateScriptKeyError,
    EmptyResponseError,
    InvalidRequestError,
    ScriptMissError,
    TransportError,
)

REQUEST_TAGS = frozenset(
    {
        "keyword",
        "paragraph_score",
        "independent_review",
        "comparative_review",
        "table_convert",
        "figure_summary",
        "mask",
        "extract",
        "check",
        "plan",
        "report",
    }
)

_PART_SEPARATOR = "\x1e"  # record separator between user parts


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    path: str  # workspace-relative or absolute path to the image file
    caption: str = ""


Part = TextPart | ImagePart


@dataclass(frozen=True)
class AgentRequest:
    """One agent call: fixed role tag, system prompt, and ordered content parts."""

    kind: str  # "text" | "vision"
    system_prompt: str
    user_parts: tuple[Part, ...]
    temperature: float
    request_tag: str

    def __post_init__(self) -> None:
        if self.kind not in ("text", "vision"):
            raise InvalidRequestError(f"unknown request kind {self.kind!r}")
        if self.request_tag not in REQUEST_TAGS:
            raise InvalidRequestError(f"unknown request tag {self.request_tag!r}")
        if not self.user_parts:
            raise InvalidRequestError("user_parts must be non-empty")
        if self.kind == "vision" and not any(
            isinstance(p, ImagePart) for p in self.user_parts
        ):
            raise InvalidRequestError("vision request needs at least one image part")

    def with_addendum(self, text: str) -> "AgentRequest":
        """Return a copy with one more text part (used for re-asks).

        The extra part changes the content digest, so a script can hold a
        distinct reply for the re-ask.
        """
        return AgentRequest(
            kind=self.kind,
            system_prompt=self.system_prompt,
            user_parts=self.user_parts + (TextPart(text),),
            temperature=self.temperature,
            request_tag=self.request_tag,
        )


@dataclass(frozen=True)
class AgentResponse:
    raw_text: str
    provider_id: str
    latency_ms: int = 0


def digest_request(request: AgentRequest) -> str:
    """Content digest of a request's user parts.

    Text parts contribute their text; image parts contribute the SHA-256 of
    the file bytes plus the caption, so a script binds to the actual image
    content rather than its path.
    """
    pieces: list[str] = []
    for part in request.user_parts:
        if isinstance(part, TextPart):
            pieces.append(part.text)
        else:
            file_digest = hashlib.sha256(Path(part.path).read_bytes()).hexdigest()
            pieces.append(f"image:{file_digest}:{part.caption}")
    joined = _PART_SEPARATOR.join(pieces)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()


class Provider(Protocol):
    provider_id: str

    def complete(self, request: AgentRequest) -> AgentResponse: ...


class ScriptedProvider:
    """Deterministic mock provider: a pure function of (tag, content digest).

    Replies must be registered up front; unknown keys raise ScriptMissError
    at call time. Registration is append-only (duplicate keys rejected), so
    a fully registered provider is read-only and freely shareable between
    worker threads. Every served call is appended to ``calls`` so tests can
    assert exactly which requests were issued.
    """

    provider_id = "scripted"

    def __init__(self) -> None:
        self._script: dict[tuple[str, str], str] = {}
        self.calls: list[tuple[str, str]] = []
        self._lock = threading.Lock()

    def register_script(self, tag: str, digest: str, response: str) -> None:
        if tag not in REQUEST_TAGS:
            raise InvalidRequestError(f"unknown request tag {tag!r}")
        key = (tag, digest)
        if key in self._script:
            raise DuplicateScriptKeyError(f"script key already registered: {key}")
        self._script[key] = response

    def register_for(self, request: AgentRequest, response: str) -> str:
        """Register a reply for this exact request; returns the digest."""
        digest = digest_request(request)
        self.register_script(request.request_tag, digest, response)
        return digest

    def complete(self, request: AgentRequest) -> AgentResponse:
        key = (request.request_tag, digest_request(request))
        with self._lock:
            self.calls.append(key)
        try:
            text = self._script[key]
        except KeyError:
            raise ScriptMissError(
                f"no script entry for tag={key[0]!r} digest={key[1][:12]}..."
            ) from None
        return AgentResponse(raw_text=text, provider_id=self.provider_id, latency_ms=0)

    def call_count(self, tag: str, digest: str) -> int:
        return self.calls.count((tag, digest))

    def call_counts(self) -> dict[tuple[str, str], int]:
        counts: dict[tuple[str, str], int] = {}
        for key in self.calls:
            counts[key] = counts.get(key, 0) + 1
        return counts

    def save_script(self, path: str | Path) -> None:
        lines = [
            json.dumps({"tag": tag, "digest": digest, "response": response})
            for (tag, digest), response in sorted(self._script.items())
        ]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load_script(cls, path: str | Path) -> "ScriptedProvider":
        provider = cls()
        for lineno, line in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                provider.register_script(
                    record["tag"], record["digest"], record["response"]
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad script record: {exc}") from exc
        return provider


class Gateway:
    """Pipeline-facing wrapper enforcing request invariants and retry policy.

    Transient TransportErrors are retried with exponential backoff (3
    attempts, 1s/2s/4s by default); provider refusals and empty replies are
    surfaced immediately so hallucination handling stays in the caller. A
    semaphore bounds in-flight calls across worker threads.
    """

    def __init__(
        self,
        provider: Provider,
        retries: int = 3,
        backoff_s: tuple[float, ...] = (1.0, 2.0, 4.0),
        max_in_flight: int = 4,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if retries < 1:
            raise InvalidRequestError("retries must be >= 1")
        if max_in_flight < 1:
            raise InvalidRequestError("max_in_flight must be >= 1")
        self.provider = provider
        self.retries = retries
        self.backoff_s = backoff_s
        self._sleep = sleep
        self._slots = threading.Semaphore(max_in_flight)

    def complete(self, request: AgentRequest) -> AgentResponse:
        if request.temperature != 0.0:
            raise InvalidRequestError(
                f"pipeline requests must use temperature 0, got {request.temperature}"
            )
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                with self._slots:
                    response = self.provider.complete(request)
            except TransportError as exc:
                last_error = exc
                if attempt + 1 < self.retries:
                    delay = self.backoff_s[min(attempt, len(self.backoff_s) - 1)]
                    self._sleep(delay)
                continue
            if response.raw_text == "":
                raise EmptyResponseError(
                    f"provider returned empty reply for tag {request.request_tag!r}"
                )
            return response
        assert last_error is not None
        raise last_error
