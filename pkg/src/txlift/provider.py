"""Completion providers: an HTTP chat-completions client and a scripted mock."""

from __future__ import annotations

import hashlib
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import httpx

from .errors import ProviderError, ProviderRefusal, ProviderTimeout

log = logging.getLogger(__name__)

REFUSAL_PREFIX = "REFUSE:"


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode()).hexdigest()


def estimate_tokens(text: str) -> int:
    # rough rule of thumb for code-heavy English text
    return (len(text) + 3) // 4


class CompletionProvider(Protocol):
    def complete(self, prompt: str) -> str: ...


@dataclass
class Usage:
    requests: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def add(self, prompt: str, response: str, prompt_tokens: int | None = None,
            completion_tokens: int | None = None) -> None:
        self.requests += 1
        self.prompt_tokens += prompt_tokens if prompt_tokens is not None else estimate_tokens(prompt)
        self.completion_tokens += completion_tokens if completion_tokens is not None else estimate_tokens(response)


@dataclass
class MockProvider:
    """Replays scripted responses keyed by the SHA-256 digest of the prompt.

    ``fallback`` answers prompts without a scripted entry; it must be a pure
    function of the prompt so that replies stay deterministic. A response
    starting with ``REFUSE:`` is reported as a refusal.
    """

    responses: dict[str, str] = field(default_factory=dict)
    fallback: Callable[[str], str] | None = None
    prompts: list[str] = field(default_factory=list)
    usage: Usage = field(default_factory=Usage)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def from_dir(cls, path: str | Path, fallback: Callable[[str], str] | None = None) -> "MockProvider":
        """Load ``<digest>.txt`` files from ``path``."""
        responses = {p.stem: p.read_text() for p in sorted(Path(path).glob("*.txt"))}
        return cls(responses, fallback)

    def script(self, prompt: str, response: str) -> None:
        self.responses[prompt_digest(prompt)] = response

    def complete(self, prompt: str) -> str:
        with self._lock:
            self.prompts.append(prompt)
        key = prompt_digest(prompt)
        if key in self.responses:
            out = self.responses[key]
        elif self.fallback is not None:
            out = self.fallback(prompt)
        else:
            raise ProviderError(f"no scripted response for prompt {key[:12]}")
        if out.startswith(REFUSAL_PREFIX):
            raise ProviderRefusal(out[len(REFUSAL_PREFIX):].strip())
        with self._lock:
            self.usage.add(prompt, out)
        return out


@dataclass
class ChatProvider:
    """Client for an OpenAI-style ``/chat/completions`` endpoint.

    The API key is read from the environment variable named by ``key_env``.
    The underlying client is thread-safe, so sessions may share one instance.
    """

    endpoint: str
    model: str
    key_env: str = "TXLIFT_API_KEY"
    params: dict = field(default_factory=dict)
    timeout: float = 120.0
    system: str = "You complete Solidity exploit reproduction tests. Reply with code only."
    usage: Usage = field(default_factory=Usage)
    transport: httpx.BaseTransport | None = None

    def __post_init__(self):
        self._client = httpx.Client(timeout=self.timeout, transport=self.transport)
        self._lock = threading.Lock()

    def close(self) -> None:
        self._client.close()

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {"model": self.model, "messages": [{"role": "system", "content": self.system},
                                                  {"role": "user", "content": prompt}], **self.params}
        try:
            r = self._client.post(self.endpoint, json=body, headers=headers)
        except httpx.TimeoutException as e:
            raise ProviderTimeout(str(e)) from e
        except httpx.HTTPError as e:
            raise ProviderError(str(e)) from e
        if r.status_code >= 400:
            raise ProviderError(f"provider returned HTTP {r.status_code}: {r.text[:200]}")
        try:
            data = r.json()
            choice = data["choices"][0]
            text = choice["message"].get("content") or ""
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise ProviderError(f"unexpected provider response: {e}") from e
        if choice.get("finish_reason") == "content_filter" or not text.strip():
            raise ProviderRefusal(choice.get("finish_reason") or "empty response")
        usage = data.get("usage") or {}
        with self._lock:
            self.usage.add(prompt, text, usage.get("prompt_tokens"), usage.get("completion_tokens"))
        return text
