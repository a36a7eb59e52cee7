"""Chat-completion client for OpenAI-compatible endpoints, plus an offline mock."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx

log = logging.getLogger(__name__)

ROLES = frozenset({"system", "user", "assistant"})


class GatewayError(RuntimeError):
    def __init__(self, message: str, status: int | None = None, retryable: bool = False):
        super().__init__(message)
        self.status = status
        self.retryable = retryable


@dataclass(frozen=True)
class GatewayConfig:
    base_url: str = ""
    api_key_env: str = "PSL_API_KEY"
    model: str = "mock"
    temperature: float = 0.0
    max_tokens: int = 1024
    timeout: float = 60.0
    max_inflight: int = 4
    max_attempts: int = 4
    backoff_base: float = 0.5
    backoff_cap: float = 8.0
    verbose: bool = False

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_inflight < 1:
            raise ValueError("max_inflight must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    @property
    def resolved_base_url(self) -> str:
        return (self.base_url or os.environ.get("PSL_BASE_URL", "")).rstrip("/")

    def backoff(self, attempt: int) -> float:
        return min(self.backoff_cap, self.backoff_base * 2**attempt)


@dataclass
class Completion:
    text: str
    usage: dict = field(default_factory=dict)


@dataclass
class Usage:
    calls: int = 0
    attempts: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _check_messages(messages: Sequence[Mapping[str, str]]) -> None:
    if not messages:
        raise ValueError("messages must be non-empty")
    for m in messages:
        if m.get("role") not in ROLES:
            raise ValueError(f"bad message role {m.get('role')!r}")
        if not isinstance(m.get("content"), str):
            raise ValueError("message content must be a string")


class _Gateway:
    """Shared bookkeeping: inflight cap and usage accounting."""

    def __init__(self, model: str, max_inflight: int):
        self.model = model
        self.max_inflight = max_inflight
        self.usage = Usage()
        self._sem = threading.BoundedSemaphore(max_inflight)
        self._lock = threading.Lock()
        self.inflight = 0
        self.peak_inflight = 0

    def complete(self, messages: Sequence[Mapping[str, str]]) -> Completion:
        _check_messages(messages)
        with self._sem:
            with self._lock:
                self.inflight += 1
                self.peak_inflight = max(self.peak_inflight, self.inflight)
            try:
                result = self._complete(messages)
            finally:
                with self._lock:
                    self.inflight -= 1
        with self._lock:
            self.usage.calls += 1
            self.usage.prompt_tokens += int(result.usage.get("prompt_tokens", 0))
            self.usage.completion_tokens += int(result.usage.get("completion_tokens", 0))
        return result

    def _complete(self, messages) -> Completion:  # pragma: no cover - abstract
        raise NotImplementedError


class HttpGateway(_Gateway):
    """Blocking client for ``POST {base_url}/chat/completions``."""

    def __init__(
        self,
        config: GatewayConfig,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(config.model, config.max_inflight)
        self.config = config
        self._sleep = sleep
        base = config.resolved_base_url
        if not base and client is None:
            raise GatewayError("no base URL: set gateway.base_url or PSL_BASE_URL")
        self._client = client or httpx.Client(timeout=config.timeout)
        self._url = f"{base}/chat/completions"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _complete(self, messages) -> Completion:
        cfg = self.config
        body = {
            "model": cfg.model,
            "messages": [dict(m) for m in messages],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }
        last: GatewayError | None = None
        for attempt in range(cfg.max_attempts):
            with self._lock:
                self.usage.attempts += 1
            if cfg.verbose:
                log.info("POST %s model=%s attempt=%d body=%s", self._url, cfg.model, attempt + 1, json.dumps(body)[:2000])
            try:
                resp = self._client.post(self._url, json=body, headers=self._headers(), timeout=cfg.timeout)
            except httpx.TimeoutException as exc:
                last = GatewayError(f"timeout: {exc}", retryable=True)
            except httpx.TransportError as exc:
                last = GatewayError(f"transport error: {exc}", retryable=True)
            else:
                if resp.status_code == 200:
                    return self._parse(resp)
                retryable = resp.status_code == 429 or resp.status_code >= 500
                last = GatewayError(
                    f"HTTP {resp.status_code}: {resp.text[:300]}", status=resp.status_code, retryable=retryable
                )
                if not retryable:
                    raise last
            if attempt + 1 < cfg.max_attempts:
                delay = cfg.backoff(attempt)
                log.warning("%s; retrying in %.2fs", last, delay)
                self._sleep(delay)
        assert last is not None
        raise GatewayError(f"giving up after {cfg.max_attempts} attempts: {last}", status=last.status)

    def _parse(self, resp: httpx.Response) -> Completion:
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed completion response: {exc}") from None
        if self.config.verbose:
            log.info("response: %s", (text or "")[:2000])
        return Completion(text or "", data.get("usage") or {})


# Mock backend ---------------------------------------------------------------

_ECHO_WORDS = (
    "protein binds ATP and catalyzes phosphorylation in the cytoplasm",
    "enzyme involved in carbohydrate metabolism with hydrolase activity",
    "membrane transporter mediating ion transport across the plasma membrane",
    "DNA-binding protein acting in the nucleus during DNA repair",
    "ribosomal protein required for translation of messenger RNA",
    "oxidoreductase responding to oxidative stress in mitochondria",
    "peptidase that cleaves substrate proteins during proteolysis",
    "kinase regulating signal transduction and the cell cycle",
)


def _task_prompt(messages: Sequence[Mapping[str, str]]) -> str:
    return next((m["content"] for m in messages if m["role"] == "user"), "")


def prompt_key(messages: Sequence[Mapping[str, str]] | str) -> str:
    """Script lookup key: sha256 of the first user message (the task prompt).

    Retry turns append feedback after it, so a conversation keeps its key.
    """
    text = messages if isinstance(messages, str) else _task_prompt(messages)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class MockGateway(_Gateway):
    """Deterministic offline backend.

    ``script`` maps either the exact task prompt or its sha256 (see
    ``prompt_key``) to a reply. A list value is consumed one reply per call,
    its last element repeating, which scripts retry conversations. Unscripted prompts get a canned
    hash-derived answer in echo mode, and raise otherwise.
    """

    def __init__(
        self,
        script: Mapping[str, str | list[str]] | None = None,
        echo: bool = True,
        model: str = "mock",
        max_inflight: int = 4,
        seed: int = 0,
        delay: float = 0.0,
    ):
        super().__init__(model, max_inflight)
        self.script = dict(script or {})
        self.echo = echo
        self.seed = seed
        self.delay = delay
        self.calls = 0
        self._cursor: dict[str, int] = {}

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> "MockGateway":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(script=data.get("script", {}), echo=data.get("echo", True), **kwargs)

    def _complete(self, messages) -> Completion:
        with self._lock:
            self.calls += 1
        if self.delay:
            time.sleep(self.delay)
        task = _task_prompt(messages)
        key = prompt_key(task) if task else ""
        for k in (task, key):
            if k in self.script:
                return Completion(self._next(k), {"prompt_tokens": 0, "completion_tokens": 0})
        if not self.echo:
            raise GatewayError("mock gateway: no scripted reply for prompt")
        return Completion(self.canned(messages), {"prompt_tokens": 0, "completion_tokens": 0})

    def _next(self, k: str) -> str:
        value = self.script[k]
        if isinstance(value, str):
            return value
        with self._lock:
            i = self._cursor.get(k, 0)
            self._cursor[k] = i + 1
        return value[min(i, len(value) - 1)]

    def canned(self, messages) -> str:
        h = hashlib.sha256(f"{self.seed}\x00".encode() + "\x00".join(m["content"] for m in messages).encode())
        digest = h.digest()
        picks = [_ECHO_WORDS[b % len(_ECHO_WORDS)] for b in digest[:2]]
        return f"This {picks[0]}; it is also described as a {picks[1]}."


def make_gateway(config: GatewayConfig, backend: str = "http", mock_script: str | None = None, seed: int = 0):
    if backend == "mock":
        if mock_script:
            return MockGateway.from_file(mock_script, model=config.model, max_inflight=config.max_inflight, seed=seed)
        return MockGateway(model=config.model, max_inflight=config.max_inflight, seed=seed)
    if backend == "http":
        return HttpGateway(config)
    raise ValueError(f"unknown gateway backend {backend!r}")
