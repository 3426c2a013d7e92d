from __future__ import annotations

import json

import pytest
import requests

from conftest import FlakyBackend, ScriptedBackend
from ifgeo.errors import (
    BackendRefusal,
    BudgetExceeded,
    ConfigError,
    ParseError,
    TransportError,
)
from ifgeo.gateway import (
    Completion,
    CompletionCache,
    Gateway,
    HttpBackend,
    PromptSpec,
    RetryPolicy,
    TokenMeter,
    cache_key,
    estimate_tokens,
)
from ifgeo.mock import MockBackend

SPEC = PromptSpec("mining", "system", "user payload", 0.2, 256)


class CountingBackend:
    def __init__(self, text='{"queries": [{"query": "q", "probability": 70}]}'):
        self.backend_id = "counting:0"
        self.sent = 0
        self.text = text

    def send(self, spec: PromptSpec) -> Completion:
        self.sent += 1
        return Completion(self.text, 100, 40, self.backend_id)


def test_estimate_tokens_floor():
    assert estimate_tokens("") == 1
    assert estimate_tokens("x" * 8) == 2


def test_prompt_spec_validation():
    with pytest.raises(ValueError):
        PromptSpec("nope", "s", "u")
    with pytest.raises(ValueError):
        PromptSpec("mining", "", "u")
    with pytest.raises(ValueError):
        PromptSpec("mining", "s", "u", temperature=-0.1)
    with pytest.raises(ValueError):
        PromptSpec("mining", "s", "u", max_tokens=0)


def test_cache_key_sensitivity():
    base = cache_key("b", SPEC)
    assert base == cache_key("b", SPEC)
    assert base != cache_key("other", SPEC)
    assert base != cache_key("b", PromptSpec("judge", "system", "user payload", 0.2, 256))
    assert base != cache_key("b", PromptSpec("mining", "system2", "user payload", 0.2, 256))
    assert base != cache_key("b", PromptSpec("mining", "system", "user payload2", 0.2, 256))
    assert base != cache_key("b", PromptSpec("mining", "system", "user payload", 0.3, 256))
    assert base != cache_key("b", PromptSpec("mining", "system", "user payload", 0.2, 257))


def test_token_meter_counts_cached_but_budgets_fresh():
    meter = TokenMeter()
    meter.add("mining", 100, 40, fresh=True)
    meter.add("mining", 100, 40, fresh=False)
    assert meter.total_tokens == 280
    assert meter.fresh_tokens == 140
    assert meter.stage_total("mining") == 280
    assert meter.stage_total("judge") == 0
    snap = meter.snapshot()
    assert snap["mining"] == {"prompt": 200, "completion": 80, "calls": 2}


def test_token_meter_merge_is_not_fresh():
    a = TokenMeter()
    a.add("engine", 10, 5, fresh=True)
    b = TokenMeter()
    b.merge(a.snapshot())
    assert b.total_tokens == 15
    assert b.fresh_tokens == 0
    assert b.snapshot()["engine"]["calls"] == 1


def test_completion_cache_round_trip(tmp_path):
    cache = CompletionCache(tmp_path / "cache")
    completion = Completion("hello", 12, 3, "b:0")
    cache.store("k1", completion)
    loaded = cache.load("k1")
    assert loaded is not None
    assert loaded.raw_text == "hello"
    assert loaded.cached is True
    assert cache.load("missing") is None


def test_completion_cache_tolerates_corrupt_entries(tmp_path):
    cache = CompletionCache(tmp_path)
    (tmp_path / "bad.json").write_text("{not json", encoding="utf-8")
    assert cache.load("bad") is None


def test_gateway_serves_from_cache(tmp_path):
    backend = CountingBackend()
    gateway = Gateway(backend, cache_dir=tmp_path / "c")
    meter = TokenMeter()
    first = gateway.complete(SPEC, meter)
    second = gateway.complete(SPEC, meter)
    assert backend.sent == 1
    assert first.cached is False and second.cached is True
    assert gateway.cache_hits == 1
    assert meter.total_tokens == 280
    assert meter.fresh_tokens == 140
    assert gateway.meter.fresh_tokens == 140


def test_gateway_budget_blocks_fresh_but_not_cached(tmp_path):
    backend = CountingBackend()
    gateway = Gateway(backend, cache_dir=tmp_path / "c", token_budget=140)
    gateway.complete(SPEC)  # spends exactly the budget
    # identical call replays from cache even with the budget exhausted
    assert gateway.complete(SPEC).cached is True
    other = PromptSpec("mining", "system", "different payload", 0.2, 256)
    with pytest.raises(BudgetExceeded):
        gateway.complete(other)
    assert backend.sent == 1


def test_gateway_retries_transport_errors_with_backoff():
    sleeps: list[float] = []
    backend = FlakyBackend(failures=2)
    gateway = Gateway(backend, retry=RetryPolicy(attempts=3, base_delay=1.0), sleep=sleeps.append)
    completion = gateway.complete(PromptSpec("engine", "s", "u"))
    assert completion.raw_text == "ok"
    assert backend.attempts == 3
    assert sleeps == [1.0, 2.0]


def test_gateway_gives_up_after_max_attempts():
    sleeps: list[float] = []
    backend = FlakyBackend(failures=5)
    gateway = Gateway(backend, retry=RetryPolicy(attempts=3, base_delay=1.0), sleep=sleeps.append)
    with pytest.raises(TransportError):
        gateway.complete(PromptSpec("engine", "s", "u"))
    assert backend.attempts == 3
    assert sleeps == [1.0, 2.0]


def test_gateway_does_not_retry_refusals():
    class Refusing:
        backend_id = "refusing:0"

        def __init__(self):
            self.attempts = 0

        def send(self, spec):
            self.attempts += 1
            raise BackendRefusal("policy")

    backend = Refusing()
    gateway = Gateway(backend, sleep=lambda _: None)
    with pytest.raises(BackendRefusal):
        gateway.complete(PromptSpec("engine", "s", "u"))
    assert backend.attempts == 1


def test_structured_repair_reasks_once():
    good = json.dumps({"queries": [{"query": "q", "probability": 70}]})
    backend = ScriptedBackend({"mining": ["not json at all", good]})
    gateway = Gateway(backend)
    payload, completion = gateway.complete_structured(SPEC)
    assert payload["queries"][0]["query"] == "q"
    assert len(backend.calls) == 2
    assert "could not be used" in backend.calls[1].user_text
    assert backend.calls[1].user_text.startswith(SPEC.user_text)


def test_structured_repair_fails_after_second_bad_reply():
    backend = ScriptedBackend({"mining": ["still not json", "nope"]})
    gateway = Gateway(backend)
    with pytest.raises(ParseError):
        gateway.complete_structured(SPEC)
    assert len(backend.calls) == 2


def test_gateway_rejects_bad_inflight():
    with pytest.raises(ConfigError):
        Gateway(MockBackend(0), max_inflight=0)


class FakeResponse:
    def __init__(self, status_code: int, payload: dict | None = None, text: str = ""):
        self.status_code = status_code
        self._payload = payload
        self.text = text

    def json(self):
        if self._payload is None:
            raise ValueError("no json")
        return self._payload


class FakeSession:
    def __init__(self, response):
        self.response = response
        self.requests: list[dict] = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.requests.append({"url": url, "json": json, "headers": headers})
        if isinstance(self.response, Exception):
            raise self.response
        return self.response


def _http(session) -> HttpBackend:
    return HttpBackend(base_url="http://backend.test/v1", api_key="k", model="m", session=session)


def test_http_backend_happy_path_and_usage():
    payload = {
        "choices": [{"message": {"content": "answer"}}],
        "usage": {"prompt_tokens": 11, "completion_tokens": 7},
    }
    session = FakeSession(FakeResponse(200, payload))
    backend = _http(session)
    completion = backend.send(SPEC)
    assert completion.raw_text == "answer"
    assert (completion.prompt_tokens, completion.completion_tokens) == (11, 7)
    sent = session.requests[0]
    assert sent["url"].endswith("/chat/completions")
    assert sent["json"]["model"] == "m"
    assert sent["json"]["messages"][0]["role"] == "system"
    assert sent["headers"]["Authorization"] == "Bearer k"


def test_http_backend_estimates_missing_usage():
    payload = {"choices": [{"message": {"content": "answer text"}}]}
    backend = _http(FakeSession(FakeResponse(200, payload)))
    completion = backend.send(SPEC)
    assert completion.prompt_tokens == estimate_tokens(SPEC.system_text + SPEC.user_text)
    assert completion.completion_tokens == estimate_tokens("answer text")


def test_http_backend_maps_5xx_to_transport():
    backend = _http(FakeSession(FakeResponse(503)))
    with pytest.raises(TransportError):
        backend.send(SPEC)


def test_http_backend_maps_4xx_to_refusal():
    backend = _http(FakeSession(FakeResponse(401, text="no auth")))
    with pytest.raises(BackendRefusal):
        backend.send(SPEC)


def test_http_backend_maps_network_errors_to_transport():
    backend = _http(FakeSession(requests.ConnectionError("down")))
    with pytest.raises(TransportError):
        backend.send(SPEC)


def test_http_backend_maps_malformed_payload_to_transport():
    backend = _http(FakeSession(FakeResponse(200, {"choices": []})))
    with pytest.raises(TransportError):
        backend.send(SPEC)


def test_http_backend_requires_base_url(monkeypatch):
    monkeypatch.delenv("IFGEO_BASE_URL", raising=False)
    with pytest.raises(ConfigError):
        HttpBackend()
