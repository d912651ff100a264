"""Chat-completion clients: live HTTP, recording, and deterministic replay.

The live client speaks the OpenAI-compatible wire shape: an HTTP POST of
``{model, messages, temperature, max_tokens}`` to a chat-completions URL,
with the response text read from the first choice's message content.
Transient failures (connection errors, HTTP 429/5xx) are retried with
exponential backoff; other statuses fail immediately.

Recording appends ``{fingerprint, request, response, timestamp}`` lines to
a cassette file.  Replay answers exclusively from the cassette; a missing
fingerprint is a hard error, never a silent live fallback.  Fingerprints
hash a canonical serialization (sorted keys, ASCII escapes) of the model
name, temperature, and conversation, so they are stable across platforms.

The API key is read from the ``SELFEXAM_API_KEY`` environment variable,
never from configuration files.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import requests

from .errors import ReplayMissError, TransportError
from .prompting import Conversation

API_KEY_ENV = "SELFEXAM_API_KEY"

RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class ModelConfig:
    """Endpoint and sampling parameters for one model."""

    endpoint_url: str
    model_name: str
    temperature: float = 0.0
    max_tokens: int = 2048
    request_timeout: float = 120.0
    max_retries: int = 3

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


def canonical_request(config: ModelConfig, conversation: Conversation) -> dict:
    """The request payload in the exact shape that is fingerprinted."""
    return {
        "model": config.model_name,
        "temperature": config.temperature,
        "messages": conversation.as_messages(),
    }


def request_fingerprint(config: ModelConfig, conversation: Conversation) -> str:
    """SHA-256 over the canonical serialization of model + conversation +
    temperature.  Platform-independent by construction."""
    canonical = json.dumps(
        canonical_request(config, conversation),
        sort_keys=True,
        ensure_ascii=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class TokenBucket:
    """Blocking token-bucket rate limiter, shared across worker threads."""

    def __init__(
        self,
        rate: float,
        capacity: float | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


class Cassette:
    """Exact-match request/response store backed by a line-delimited JSON file.

    The file is append-only during recording.  On load, the first occurrence
    of a fingerprint wins, so replay stays stable even if later recordings
    appended duplicates.
    """

    def __init__(self, path: str | Path, entries: dict[str, str] | None = None) -> None:
        self.path = Path(path)
        self._entries: dict[str, str] = dict(entries or {})
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path: str | Path) -> "Cassette":
        path = Path(path)
        entries: dict[str, str] = {}
        with path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    fingerprint = record["fingerprint"]
                    response = record["response"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise TransportError(f"{path}:{lineno}: malformed cassette line: {exc}") from exc
                entries.setdefault(fingerprint, response)
        return cls(path, entries)

    @classmethod
    def open_for_recording(cls, path: str | Path) -> "Cassette":
        path = Path(path)
        if path.exists():
            return cls.load(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        return cls(path)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, fingerprint: str) -> bool:
        return fingerprint in self._entries

    def lookup(self, fingerprint: str) -> str | None:
        return self._entries.get(fingerprint)

    def record(self, fingerprint: str, request: dict, response: str) -> None:
        with self._lock:
            if fingerprint in self._entries:
                return
            self._entries[fingerprint] = response
            line = json.dumps(
                {
                    "fingerprint": fingerprint,
                    "request": request,
                    "response": response,
                    "timestamp": datetime.now(timezone.utc).isoformat(),
                },
                sort_keys=True,
                ensure_ascii=True,
            )
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")


class ChatClient:
    """Common surface: ``complete`` plus fingerprinting for trace records."""

    def __init__(self, config: ModelConfig) -> None:
        self.config = config

    @property
    def model_name(self) -> str:
        return self.config.model_name

    def fingerprint(self, conversation: Conversation) -> str:
        return request_fingerprint(self.config, conversation)

    def complete(self, conversation: Conversation) -> str:
        raise NotImplementedError


class LiveClient(ChatClient):
    """HTTP client for any OpenAI-compatible chat-completions endpoint."""

    def __init__(
        self,
        config: ModelConfig,
        rate_limit: float = 2.0,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
        backoff_base: float = 0.5,
    ) -> None:
        super().__init__(config)
        self._session = session or requests.Session()
        self._sleep = sleep
        self._backoff_base = backoff_base
        self._bucket = TokenBucket(rate_limit, sleep=sleep)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def complete(self, conversation: Conversation) -> str:
        payload = {
            "model": self.config.model_name,
            "messages": conversation.as_messages(),
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }
        last_failure = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self._backoff_base * 2 ** (attempt - 1))
            self._bucket.acquire()
            try:
                response = self._session.post(
                    self.config.endpoint_url,
                    json=payload,
                    headers=self._headers(),
                    timeout=self.config.request_timeout,
                )
            except requests.RequestException as exc:
                last_failure = f"transport failure: {exc}"
                continue
            if response.status_code in RETRYABLE_STATUSES:
                last_failure = f"HTTP {response.status_code}: {response.text[:200]}"
                continue
            if response.status_code != 200:
                raise TransportError(
                    f"HTTP {response.status_code} from {self.config.endpoint_url}: "
                    f"{response.text[:200]}"
                )
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed completion response: {exc}") from exc
        raise TransportError(
            f"giving up after {self.config.max_retries} retries; last failure: {last_failure}"
        )


class RecordingClient(ChatClient):
    """Wraps a live client and appends every exchange to a cassette."""

    def __init__(self, inner: LiveClient, cassette: Cassette) -> None:
        super().__init__(inner.config)
        self._inner = inner
        self.cassette = cassette

    def complete(self, conversation: Conversation) -> str:
        fingerprint = self.fingerprint(conversation)
        cached = self.cassette.lookup(fingerprint)
        if cached is not None:
            return cached
        response = self._inner.complete(conversation)
        self.cassette.record(fingerprint, canonical_request(self.config, conversation), response)
        return response


class ReplayClient(ChatClient):
    """Answers exclusively from a cassette; zero network activity."""

    def __init__(self, config: ModelConfig, cassette: Cassette) -> None:
        super().__init__(config)
        self.cassette = cassette

    def complete(self, conversation: Conversation) -> str:
        fingerprint = self.fingerprint(conversation)
        response = self.cassette.lookup(fingerprint)
        if response is None:
            raise ReplayMissError(
                f"cassette {self.cassette.path} has no entry for fingerprint {fingerprint}"
            )
        return response
