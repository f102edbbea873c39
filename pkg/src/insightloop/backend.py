"""Chat-completion backends: OpenAI-compatible HTTP, plus record/replay.

The replay backend makes whole engine runs deterministic and offline: requests
are matched by a canonical digest first, then by call order. The recorder wraps
any live backend and appends (digest, response) pairs to an NDJSON fixture.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from .errors import (
    EndpointUnreachable,
    FixtureMiss,
    FixtureWriteError,
    HttpStatusError,
    MalformedResponse,
    NoImagePart,
)


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    media_type: str
    data: bytes


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    parts: tuple[TextPart | ImagePart, ...]

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad role {self.role!r}")
        if not self.parts:
            raise ValueError("message needs at least one part")
        if self.role != "user" and any(isinstance(p, ImagePart) for p in self.parts):
            raise ValueError("image parts are only allowed in user messages")

    @classmethod
    def text(cls, role: str, text: str) -> "ChatMessage":
        return cls(role, (TextPart(text),))

    def has_image(self) -> bool:
        return any(isinstance(p, ImagePart) for p in self.parts)


@dataclass(frozen=True)
class CompletionRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 2048

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


def canonicalize_request(request: CompletionRequest) -> str:
    """Platform-independent canonical JSON: sorted keys, collapsed whitespace
    in text, images replaced by content hashes."""
    msgs = []
    for m in request.messages:
        parts = []
        for p in m.parts:
            if isinstance(p, TextPart):
                parts.append({"text": re.sub(r"\s+", " ", p.text).strip()})
            else:
                parts.append(
                    {
                        "image_sha256": hashlib.sha256(p.data).hexdigest(),
                        "media_type": p.media_type,
                    }
                )
        msgs.append({"role": m.role, "parts": parts})
    payload = {
        "model": request.model,
        "messages": msgs,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }
    return json.dumps(payload, sort_keys=True, ensure_ascii=False)


def request_digest(request: CompletionRequest) -> str:
    return hashlib.sha256(canonicalize_request(request).encode("utf-8")).hexdigest()


class Backend:
    """Abstract chat-completion interface."""

    def complete(self, request: CompletionRequest) -> str:
        raise NotImplementedError

    def complete_vision(self, request: CompletionRequest) -> str:
        if not any(m.has_image() for m in request.messages):
            raise NoImagePart("vision completion requires at least one image part")
        return self.complete(request)


RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class OpenAICompatibleBackend(Backend):
    """HTTP client for OpenAI-style chat-completions endpoints (text + vision)."""

    def __init__(
        self,
        text_endpoint_url: str,
        vision_endpoint_url: str | None = None,
        api_token: str | None = None,
        timeout_s: float = 120.0,
        retries: int = 3,
        backoff_s: tuple[float, ...] = (1.0, 2.0, 4.0),
        sleep=time.sleep,
        transport: httpx.BaseTransport | None = None,
    ):
        self.text_endpoint_url = text_endpoint_url
        self.vision_endpoint_url = vision_endpoint_url or text_endpoint_url
        self.retries = retries
        self.backoff_s = backoff_s
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        if api_token:
            headers["Authorization"] = f"Bearer {api_token}"
        self._client = httpx.Client(timeout=timeout_s, headers=headers, transport=transport)

    def close(self) -> None:
        self._client.close()

    @staticmethod
    def _wire_messages(request: CompletionRequest) -> list[dict]:
        out = []
        for m in request.messages:
            if len(m.parts) == 1 and isinstance(m.parts[0], TextPart):
                out.append({"role": m.role, "content": m.parts[0].text})
                continue
            content = []
            for p in m.parts:
                if isinstance(p, TextPart):
                    content.append({"type": "text", "text": p.text})
                else:
                    b64 = base64.b64encode(p.data).decode("ascii")
                    content.append(
                        {
                            "type": "image_url",
                            "image_url": {"url": f"data:{p.media_type};base64,{b64}"},
                        }
                    )
            out.append({"role": m.role, "content": content})
        return out

    def _post(self, url: str, request: CompletionRequest) -> str:
        payload = {
            "model": request.model,
            "messages": self._wire_messages(request),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        last_exc: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = self._client.post(url, json=payload)
            except httpx.HTTPError as exc:
                last_exc = EndpointUnreachable(f"{url}: {exc}")
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json()["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, TypeError, ValueError) as exc:
                        raise MalformedResponse(str(exc)) from exc
                last_exc = HttpStatusError(resp.status_code, resp.text[:200])
                if resp.status_code not in RETRYABLE_STATUS:
                    raise last_exc
            if attempt < self.retries - 1:
                self._sleep(self.backoff_s[min(attempt, len(self.backoff_s) - 1)])
        raise last_exc  # type: ignore[misc]

    def complete(self, request: CompletionRequest) -> str:
        return self._post(self.text_endpoint_url, request)

    def complete_vision(self, request: CompletionRequest) -> str:
        if not any(m.has_image() for m in request.messages):
            raise NoImagePart("vision completion requires at least one image part")
        return self._post(self.vision_endpoint_url, request)


@dataclass
class _FixtureEntry:
    digest: str | None
    response: str
    consumed: bool = False


class ReplayBackend(Backend):
    """Deterministic backend answering from a recorded NDJSON fixture.

    Lookup is digest-first among unconsumed entries, falling back to the next
    unconsumed entry in recorded order. Thread-safe.
    """

    def __init__(self, fixture_path: str | Path):
        self.fixture_path = Path(fixture_path)
        self._lock = threading.Lock()
        self._entries: list[_FixtureEntry] = []
        with open(self.fixture_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                self._entries.append(_FixtureEntry(d.get("digest"), d["response"]))

    def complete(self, request: CompletionRequest) -> str:
        digest = request_digest(request)
        with self._lock:
            for e in self._entries:
                if not e.consumed and e.digest == digest:
                    e.consumed = True
                    return e.response
            for e in self._entries:
                if not e.consumed and e.digest is None:
                    e.consumed = True
                    return e.response
            raise FixtureMiss(
                f"no fixture entry for digest {digest} and sequence exhausted"
            )


class RecordingBackend(Backend):
    """Wraps a live backend and appends every exchange to a fixture file."""

    def __init__(self, wrapped: Backend, fixture_path: str | Path):
        self.wrapped = wrapped
        self.fixture_path = Path(fixture_path)
        self._lock = threading.Lock()

    def _record(self, request: CompletionRequest, response: str) -> None:
        line = json.dumps(
            {"digest": request_digest(request), "response": response},
            ensure_ascii=False,
        )
        try:
            with self._lock, open(self.fixture_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        except OSError as exc:
            raise FixtureWriteError(str(exc)) from exc

    def complete(self, request: CompletionRequest) -> str:
        response = self.wrapped.complete(request)
        self._record(request, response)
        return response

    def complete_vision(self, request: CompletionRequest) -> str:
        response = self.wrapped.complete_vision(request)
        self._record(request, response)
        return response
