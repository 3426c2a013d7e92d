"""Uniform access to chat-completion backends.

Wraps a minimal backend interface with request caching, bounded
concurrency, retries with exponential backoff, a token budget and
per-stage token metering. The structured path re-asks once with the
validation error appended before giving up.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Protocol

import requests

from .errors import (
    BackendRefusal,
    BudgetExceeded,
    ConfigError,
    ParseError,
    SchemaError,
    TransportError,
)
from .schemas import extract_structured

log = logging.getLogger(__name__)

STAGES = (
    "mining",
    "request_gen",
    "dedup",
    "conflict",
    "blueprint",
    "revise",
    "judge",
    "heuristic",
    "engine",
)

REPAIR_SUFFIX = (
    "\n\nYour previous reply could not be used: {error}\n"
    "Reply again, following the required output format exactly."
)


def estimate_tokens(text: str) -> int:
    """Crude fallback when a backend reports no usage: ~4 chars per token."""
    return max(1, len(text) // 4)


@dataclass(frozen=True)
class PromptSpec:
    """Everything that identifies one completion call."""

    stage_id: str
    system_text: str
    user_text: str
    temperature: float = 0.2
    max_tokens: int = 4096

    def __post_init__(self) -> None:
        if self.stage_id not in STAGES:
            raise ValueError(f"unknown stage_id {self.stage_id!r}")
        if not self.system_text or not self.user_text:
            raise ValueError("system_text and user_text must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class Completion:
    raw_text: str
    prompt_tokens: int
    completion_tokens: int
    backend_id: str
    cached: bool = False


def cache_key(backend_id: str, spec: PromptSpec) -> str:
    """Deterministic key over everything that can change the reply."""
    material = json.dumps(
        [
            backend_id,
            spec.stage_id,
            spec.system_text,
            spec.user_text,
            spec.temperature,
            spec.max_tokens,
        ],
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


class TokenMeter:
    """Thread-safe per-stage token counters.

    Cached replays are metered as well so that accounting is identical
    between a cold and a warm run; ``fresh_tokens`` counts only tokens
    actually spent at a backend and is what budgets are charged against.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._by_stage: dict[str, dict[str, int]] = {}
        self._fresh = 0

    def add(self, stage_id: str, prompt_tokens: int, completion_tokens: int, *, fresh: bool) -> None:
        with self._lock:
            bucket = self._by_stage.setdefault(stage_id, {"prompt": 0, "completion": 0, "calls": 0})
            bucket["prompt"] += prompt_tokens
            bucket["completion"] += completion_tokens
            bucket["calls"] += 1
            if fresh:
                self._fresh += prompt_tokens + completion_tokens

    def merge(self, snapshot: dict[str, dict[str, int]]) -> None:
        """Fold another meter's snapshot into this one (not counted as fresh)."""
        with self._lock:
            for stage, counts in snapshot.items():
                bucket = self._by_stage.setdefault(stage, {"prompt": 0, "completion": 0, "calls": 0})
                bucket["prompt"] += counts.get("prompt", 0)
                bucket["completion"] += counts.get("completion", 0)
                bucket["calls"] += counts.get("calls", 0)

    def snapshot(self) -> dict[str, dict[str, int]]:
        with self._lock:
            return {stage: dict(counts) for stage, counts in sorted(self._by_stage.items())}

    def stage_total(self, stage_id: str) -> int:
        with self._lock:
            bucket = self._by_stage.get(stage_id, {})
            return bucket.get("prompt", 0) + bucket.get("completion", 0)

    @property
    def total_tokens(self) -> int:
        with self._lock:
            return sum(b["prompt"] + b["completion"] for b in self._by_stage.values())

    @property
    def fresh_tokens(self) -> int:
        with self._lock:
            return self._fresh


class Backend(Protocol):
    backend_id: str

    def send(self, spec: PromptSpec) -> Completion: ...


class HttpBackend:
    """OpenAI-style chat-completions endpoint.

    Reads IFGEO_BASE_URL, IFGEO_API_KEY and IFGEO_MODEL when arguments
    are omitted. 5xx and network failures surface as TransportError
    (retryable); 4xx as BackendRefusal (not retried).
    """

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        timeout: float = 120.0,
        session: requests.Session | None = None,
    ) -> None:
        self.base_url = (base_url or os.environ.get("IFGEO_BASE_URL", "")).rstrip("/")
        if not self.base_url:
            raise ConfigError("http backend needs a base url (IFGEO_BASE_URL)")
        self.model = model or os.environ.get("IFGEO_MODEL", "gpt-4o-mini")
        self.api_key = api_key if api_key is not None else os.environ.get("IFGEO_API_KEY", "")
        self.timeout = timeout
        self._session = session or requests.Session()
        self.backend_id = f"http:{self.model}"

    def send(self, spec: PromptSpec) -> Completion:
        payload = {
            "model": self.model,
            "temperature": spec.temperature,
            "max_tokens": spec.max_tokens,
            "messages": [
                {"role": "system", "content": spec.system_text},
                {"role": "user", "content": spec.user_text},
            ],
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = self._session.post(
                f"{self.base_url}/chat/completions",
                json=payload,
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if response.status_code >= 500:
            raise TransportError(f"server error {response.status_code}")
        if response.status_code >= 400:
            raise BackendRefusal(f"status {response.status_code}: {response.text[:300]}")
        try:
            data = response.json()
            text = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc
        usage = data.get("usage") or {}
        prompt_tokens = int(usage.get("prompt_tokens") or estimate_tokens(spec.system_text + spec.user_text))
        completion_tokens = int(usage.get("completion_tokens") or estimate_tokens(text))
        return Completion(text, prompt_tokens, completion_tokens, self.backend_id)


class CompletionCache:
    """One JSON file per cache key, written atomically."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def load(self, key: str) -> Completion | None:
        path = self._path(key)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except (ValueError, OSError) as exc:
            log.warning("unreadable cache entry %s: %s", path.name, exc)
            return None
        return Completion(
            raw_text=data["raw_text"],
            prompt_tokens=data["prompt_tokens"],
            completion_tokens=data["completion_tokens"],
            backend_id=data["backend_id"],
            cached=True,
        )

    def store(self, key: str, completion: Completion) -> None:
        payload = {
            "raw_text": completion.raw_text,
            "prompt_tokens": completion.prompt_tokens,
            "completion_tokens": completion.completion_tokens,
            "backend_id": completion.backend_id,
        }
        fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                json.dump(payload, handle, ensure_ascii=False)
            os.replace(tmp, self._path(key))
        except BaseException:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    base_delay: float = 1.0


class Gateway:
    """Single entry point the rest of the workbench calls backends through."""

    def __init__(
        self,
        backend: Backend,
        *,
        cache_dir: str | Path | None = None,
        token_budget: int | None = None,
        max_inflight: int = 8,
        retry: RetryPolicy = RetryPolicy(),
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if max_inflight < 1:
            raise ConfigError("max_inflight must be >= 1")
        self.backend = backend
        self.meter = TokenMeter()
        self.token_budget = token_budget
        self.retry = retry
        self._sleep = sleep
        self._sem = threading.BoundedSemaphore(max_inflight)
        self._cache = CompletionCache(cache_dir) if cache_dir is not None else None
        self._stats_lock = threading.Lock()
        self.cache_hits = 0

    def complete(self, spec: PromptSpec, meter: TokenMeter | None = None) -> Completion:
        """Run one completion, consulting the cache first.

        ``meter`` is an optional extra meter (e.g. per record) credited in
        addition to the gateway-wide one.
        """
        key = cache_key(self.backend.backend_id, spec)
        if self._cache is not None:
            hit = self._cache.load(key)
            if hit is not None:
                self._credit(spec, hit, meter, fresh=False)
                with self._stats_lock:
                    self.cache_hits += 1
                return hit
        if self.token_budget is not None and self.meter.fresh_tokens >= self.token_budget:
            raise BudgetExceeded(
                f"fresh token spend {self.meter.fresh_tokens} reached budget {self.token_budget}"
            )
        completion = self._send_with_retry(spec)
        self._credit(spec, completion, meter, fresh=True)
        if self._cache is not None:
            self._cache.store(key, completion)
        return completion

    def complete_structured(self, spec: PromptSpec, meter: TokenMeter | None = None):
        """Completion plus payload extraction, with one repair re-ask."""
        completion = self.complete(spec, meter)
        try:
            return extract_structured(completion.raw_text, spec.stage_id), completion
        except (ParseError, SchemaError) as exc:
            log.warning("stage %s output rejected (%s); re-asking once", spec.stage_id, exc)
            repair = replace(spec, user_text=spec.user_text + REPAIR_SUFFIX.format(error=exc))
            completion = self.complete(repair, meter)
            return extract_structured(completion.raw_text, spec.stage_id), completion

    def _credit(
        self,
        spec: PromptSpec,
        completion: Completion,
        meter: TokenMeter | None,
        *,
        fresh: bool,
    ) -> None:
        self.meter.add(spec.stage_id, completion.prompt_tokens, completion.completion_tokens, fresh=fresh)
        if meter is not None:
            meter.add(spec.stage_id, completion.prompt_tokens, completion.completion_tokens, fresh=fresh)

    def _send_with_retry(self, spec: PromptSpec) -> Completion:
        delay = self.retry.base_delay
        for attempt in range(1, self.retry.attempts + 1):
            try:
                with self._sem:
                    return self.backend.send(spec)
            except TransportError as exc:
                if attempt == self.retry.attempts:
                    raise
                log.warning(
                    "transient failure on stage %s (attempt %d/%d): %s",
                    spec.stage_id,
                    attempt,
                    self.retry.attempts,
                    exc,
                )
                self._sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")
