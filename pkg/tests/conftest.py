"""Shared fixtures: documents, datasets and scriptable backends."""

from __future__ import annotations

import pytest

from ifgeo.dataset import BenchRecord
from ifgeo.errors import TransportError
from ifgeo.gateway import Completion, Gateway, PromptSpec, estimate_tokens
from ifgeo.mock import MockBackend
from ifgeo.model import Document

TOPICS = (
    ("espresso", "grinder", "extraction", "crema", "roast"),
    ("orchid", "humidity", "repotting", "bloom", "fertilizer"),
    ("kayak", "paddle", "portage", "hull", "rapids"),
    ("sourdough", "starter", "hydration", "crumb", "proofing"),
    ("telescope", "aperture", "collimation", "eyepiece", "tracking"),
    ("beehive", "nectar", "swarming", "frames", "harvest"),
    ("bonsai", "pruning", "wiring", "nebari", "repot"),
    ("aquarium", "filtration", "cycling", "substrate", "algae"),
)


def doc_body(words: tuple[str, ...]) -> str:
    return (
        f"# {words[0].title()} Overview\n"
        "\n"
        f"The {words[0]} process relies on {words[1]} quality and careful timing.\n"
        f"Good {words[2]} depends on water temperature and dose.\n"
        "\n"
        "# Preparation Steps\n"
        "\n"
        f"Start with fresh {words[3]} and adjust the {words[1]} setting slowly.\n"
        "Measure twice before changing any variable.\n"
        "\n"
        "# Troubleshooting\n"
        "\n"
        f"Unbalanced results usually mean the {words[2]} stage ran too long.\n"
        f"Flat results usually mean the {words[4]} was stale.\n"
    )


def make_document(i: int = 0, doc_id: str | None = None) -> Document:
    words = TOPICS[i % len(TOPICS)]
    return Document(doc_id or f"doc{i}", doc_body(words))


def make_record(i: int, n_queries: int = 5, n_candidates: int = 5) -> BenchRecord:
    words = TOPICS[i % len(TOPICS)]
    target = make_document(i)
    queries = (
        f"what is {words[0]}",
        f"how does {words[1]} work",
        f"benefits of {words[2]}",
        f"{words[3]} compared with alternatives",
        f"common problems with {words[4]}",
    )[:n_queries]
    target_position = i % n_candidates
    competitors = []
    for k in range(n_candidates - 1):
        other = TOPICS[(i + k + 1) % len(TOPICS)]
        competitors.append(
            Document(
                f"doc{i}_c{k}",
                f"A rival page about {other[0]} and {other[1]}.\n"
                f"It mentions {words[k % len(words)]} once in passing.\n",
            )
        )
    candidates = list(competitors)
    candidates.insert(target_position, target)
    return BenchRecord(
        document=target,
        queries=queries,
        candidates=tuple(candidates),
        target_position=target_position,
    )


def make_records(n: int) -> list[BenchRecord]:
    return [make_record(i) for i in range(n)]


class ScriptedBackend:
    """Backend replaying queued raw replies per stage, with optional fallback.

    Lets a test force a specific (possibly malformed) completion for one
    stage while every other stage behaves like the deterministic mock.
    """

    def __init__(self, replies: dict[str, list[str]] | None = None, fallback=None):
        self.replies = {k: list(v) for k, v in (replies or {}).items()}
        self.fallback = fallback
        self.backend_id = "scripted:0"
        self.calls: list[PromptSpec] = []

    def send(self, spec: PromptSpec) -> Completion:
        self.calls.append(spec)
        queue = self.replies.get(spec.stage_id)
        if queue:
            text = queue.pop(0)
            return Completion(
                text,
                estimate_tokens(spec.system_text + spec.user_text),
                estimate_tokens(text),
                self.backend_id,
            )
        if self.fallback is not None:
            return self.fallback.send(spec)
        raise AssertionError(f"no scripted reply left for stage {spec.stage_id!r}")


class FlakyBackend:
    """Fails with TransportError a fixed number of times, then succeeds."""

    def __init__(self, failures: int, text: str = "ok"):
        self.failures = failures
        self.text = text
        self.backend_id = "flaky:0"
        self.attempts = 0

    def send(self, spec: PromptSpec) -> Completion:
        self.attempts += 1
        if self.attempts <= self.failures:
            raise TransportError(f"simulated outage {self.attempts}")
        return Completion(self.text, 10, 5, self.backend_id)


class PoisonBackend:
    """Raises on any prompt whose user text carries a marker token."""

    def __init__(self, inner, marker: str = "POISON"):
        self.inner = inner
        self.marker = marker
        self.backend_id = inner.backend_id

    def send(self, spec: PromptSpec) -> Completion:
        if self.marker in spec.user_text:
            raise RuntimeError("poisoned document reached the backend")
        return self.inner.send(spec)


def make_gateway(seed: int = 0, **kwargs) -> Gateway:
    return Gateway(MockBackend(seed), **kwargs)


@pytest.fixture
def gateway() -> Gateway:
    return make_gateway(seed=7)


@pytest.fixture
def sample_doc() -> Document:
    return make_document(0)
