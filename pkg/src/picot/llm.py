"""Chat-completion backends (HTTP and scripted replay) and usage accounting."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Union

import httpx

logger = logging.getLogger(__name__)

API_KEY_ENV = "PICOT_API_KEY"
DEFAULT_MAX_TOKENS = 4096
ROLES = ("querygen", "slice", "final")


@dataclass(frozen=True)
class Greedy:
    pass


@dataclass(frozen=True)
class Sample:
    top_p: float = 1.0


@dataclass(frozen=True)
class LlmRequest:
    prompt: str
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = 0.0
    decode_mode: Union[Greedy, Sample] = Greedy()
    tag: str = ""  # role of the call: querygen, slice or final

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cached_tokens: int = 0

    def __post_init__(self):
        if min(self.prompt_tokens, self.completion_tokens, self.cached_tokens) < 0:
            raise ValueError("usage counts must be non-negative")
        if self.cached_tokens > self.prompt_tokens:
            raise ValueError("cached_tokens cannot exceed prompt_tokens")

    def __add__(self, other: "Usage") -> "Usage":
        return Usage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
            self.cached_tokens + other.cached_tokens,
        )

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_json(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "cached_tokens": self.cached_tokens,
        }

    @classmethod
    def from_json(cls, obj: Optional[dict]) -> "Usage":
        obj = obj or {}
        return cls(int(obj.get("prompt_tokens", 0)), int(obj.get("completion_tokens", 0)), int(obj.get("cached_tokens", 0)))


@dataclass(frozen=True)
class LlmResponse:
    text: str
    usage: Usage = Usage()


class UsageLedger:
    """Thread-safe per-call usage log with running totals."""

    def __init__(self):
        self._lock = threading.Lock()
        self._records: list[tuple[str, Usage]] = []
        self._totals = Usage()

    def record(self, tag: str, usage: Usage) -> None:
        with self._lock:
            self._records.append((tag, usage))
            self._totals = self._totals + usage

    @property
    def records(self) -> list[tuple[str, Usage]]:
        with self._lock:
            return list(self._records)

    @property
    def totals(self) -> Usage:
        with self._lock:
            return self._totals

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def to_json(self) -> dict:
        with self._lock:
            return {
                "calls": len(self._records),
                "totals": self._totals.to_json(),
                "records": [{"tag": t, **u.to_json()} for t, u in self._records],
            }


class LlmBackend(Protocol):
    def complete(self, req: LlmRequest) -> LlmResponse: ...


class TransportError(RuntimeError):
    """The backend could not produce a response (after retries, if any)."""


class ScriptMiss(KeyError):
    def __init__(self, key: str, detail: str = ""):
        super().__init__(f"no scripted response for key {key}" + (f" ({detail})" if detail else ""))
        self.key = key


# -- scripted backend -----------------------------------------------------------

_QUESTION_LINE = re.compile(r"^Question:(.*)$", re.M)


def normalize_line(text: str) -> str:
    return " ".join(text.split())


def last_question_line(prompt: str) -> str:
    found = _QUESTION_LINE.findall(prompt)
    return normalize_line(found[-1]) if found else ""


def match_key(role: str, question: str) -> str:
    """Script key for a role tag and a (raw or already normalized) question."""
    payload = f"{role}\n{normalize_line(question)}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def prompt_key(req: LlmRequest, strict: bool = False) -> str:
    if strict:
        return hashlib.sha256(f"{req.tag}\n{req.prompt}".encode("utf-8")).hexdigest()
    return match_key(req.tag, last_question_line(req.prompt))


@dataclass(frozen=True)
class ScriptEntry:
    match_key: str
    response_text: str
    usage: Usage = Usage()
    note: str = field(default="", compare=False)

    @classmethod
    def from_json(cls, obj: dict) -> "ScriptEntry":
        if "match_key" in obj:
            key = obj["match_key"]
        elif "role" in obj and "question" in obj:
            key = match_key(obj["role"], obj["question"])
        else:
            raise ValueError("script entry needs match_key or role + question")
        note = f"{obj['role']}: {obj['question']}" if "question" in obj else ""
        return cls(key, obj["response_text"], Usage.from_json(obj.get("usage")), note)


class ScriptedBackend:
    """Deterministic replay backend.

    Requests are matched by :func:`prompt_key`; lookups are read-only so
    concurrent calls are safe and order-independent.
    """

    def __init__(self, entries, strict: bool = False):
        self.strict = strict
        self._entries: dict[str, ScriptEntry] = {}
        for e in entries:
            if e.match_key in self._entries:
                raise ValueError(f"duplicate match_key {e.match_key} ({e.note})")
            self._entries[e.match_key] = e

    @classmethod
    def from_file(cls, path: Union[str, Path], strict: bool = False) -> "ScriptedBackend":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        entries.append(ScriptEntry.from_json(json.loads(line)))
                    except (ValueError, KeyError) as exc:
                        raise ValueError(f"{path} line {lineno}: {exc}") from None
        return cls(entries, strict)

    def __len__(self):
        return len(self._entries)

    def complete(self, req: LlmRequest) -> LlmResponse:
        key = prompt_key(req, self.strict)
        entry = self._entries.get(key)
        if entry is None:
            raise ScriptMiss(key, f"role={req.tag!r} question={last_question_line(req.prompt)!r}")
        return LlmResponse(entry.response_text, entry.usage)


# -- HTTP backend ---------------------------------------------------------------


class HttpBackend:
    """OpenAI-compatible ``/chat/completions`` client with bounded retries.

    Retries cover transport failures and non-2xx statuses only; the response
    text is never inspected here.
    """

    def __init__(self, base_url: str, model: str, api_key: Optional[str] = None, timeout: float = 120.0,
                 attempts: int = 3, backoff: float = 1.0, client: Optional[httpx.Client] = None,
                 sleep: Callable[[float], None] = time.sleep):
        if attempts < 1:
            raise ValueError("attempts must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.attempts = attempts
        self.backoff = backoff
        self.sleep = sleep
        self.client = client or httpx.Client(timeout=timeout)

    def payload(self, req: LlmRequest) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": 0.0 if isinstance(req.decode_mode, Greedy) else req.temperature,
            "max_tokens": req.max_tokens,
        }
        if isinstance(req.decode_mode, Sample):
            body["top_p"] = req.decode_mode.top_p
        return body

    def complete(self, req: LlmRequest) -> LlmResponse:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        url = f"{self.base_url}/chat/completions"
        last_error = ""
        for attempt in range(self.attempts):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self.client.post(url, json=self.payload(req), headers=headers)
            except httpx.HTTPError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                logger.warning("attempt %d/%d failed: %s", attempt + 1, self.attempts, last_error)
                continue
            if not resp.is_success:
                last_error = f"HTTP {resp.status_code}"
                logger.warning("attempt %d/%d failed: %s", attempt + 1, self.attempts, last_error)
                continue
            return self._parse(resp)
        raise TransportError(f"{url}: giving up after {self.attempts} attempts ({last_error})")

    @staticmethod
    def _parse(resp: httpx.Response) -> LlmResponse:
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected response body: {exc}") from None
        usage = data.get("usage") or {}
        details = usage.get("prompt_tokens_details") or {}
        prompt = int(usage.get("prompt_tokens", 0) or 0)
        cached = min(int(details.get("cached_tokens", 0) or 0), prompt)
        return LlmResponse(text, Usage(prompt, int(usage.get("completion_tokens", 0) or 0), cached))


class MeteredLlm:
    """Wraps a backend and records every successful call in a ledger."""

    def __init__(self, backend: LlmBackend, ledger: Optional[UsageLedger] = None, max_tokens: int = DEFAULT_MAX_TOKENS,
                 temperature: float = 0.0, decode_mode: Union[Greedy, Sample] = Greedy()):
        self.backend = backend
        self.ledger = ledger if ledger is not None else UsageLedger()
        self.max_tokens = max_tokens
        self.temperature = temperature
        self.decode_mode = decode_mode

    def fetch(self, prompt: str, tag: str) -> LlmResponse:
        """Call the backend without recording; pair with :meth:`record`."""
        return self.backend.complete(LlmRequest(prompt, self.max_tokens, self.temperature, self.decode_mode, tag))

    def record(self, tag: str, resp: LlmResponse) -> None:
        self.ledger.record(tag, resp.usage)

    def __call__(self, prompt: str, tag: str) -> LlmResponse:
        resp = self.fetch(prompt, tag)
        self.record(tag, resp)
        return resp
