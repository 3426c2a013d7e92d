"""Prompt templates, builders and user-payload parsers.

System prompts live as versioned .txt assets next to this module.
Placeholders use {name} and are substituted with str.replace, since the
templates themselves contain literal JSON braces.

User payloads follow one convention across stages: scalar fields as
"Label: value" header lines, then named blocks introduced by a
``=== NAME ===`` marker line. The final block is free-form and carries
the only content (the webpage body) that must round-trip byte-exactly;
earlier blocks are JSON, which cannot produce a marker at column zero.
"""

from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Sequence

from ..gateway import PromptSpec

PROMPT_VERSION = "1"

HEURISTIC_STRATEGIES = (
    "traditional_seo",
    "unique_words",
    "simple_expression",
    "authoritative",
    "fluent",
    "technical_terms",
    "cite_sources",
    "quotation_addition",
    "statistics_addition",
)

_MARKER_RE = re.compile(r"^=== (.+?) ===$", re.MULTILINE)
_SOURCE_KEY_RE = re.compile(r"^SOURCE \[(\d+)\]$")


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


def _fill(template: str, values: Mapping[str, object]) -> str:
    out = template
    for key, value in values.items():
        out = out.replace("{" + key + "}", str(value))
    return out


def _dump(payload: object) -> str:
    return json.dumps(payload, ensure_ascii=False, indent=2)


# ---------------------------------------------------------------- builders


def mining_spec(body: str, n_queries: int, *, temperature: float = 0.2, max_tokens: int = 4096) -> PromptSpec:
    system = _fill(load_template("mining"), {"num_queries": n_queries})
    user = f"Query target count: {n_queries}\n\n=== WEBPAGE ===\n{body}"
    return PromptSpec("mining", system, user, temperature, max_tokens)


def request_spec(
    body: str, query: str, n_suggestions: int, *, temperature: float = 0.2, max_tokens: int = 4096
) -> PromptSpec:
    system = _fill(load_template("request_gen"), {"suggestions_num": n_suggestions})
    user = (
        f"Query: {query}\nSuggestion limit: {n_suggestions}\n\n=== WEBPAGE ===\n{body}"
    )
    return PromptSpec("request_gen", system, user, temperature, max_tokens)


def dedup_spec(groups: Sequence[Mapping], *, temperature: float = 0.2, max_tokens: int = 4096) -> PromptSpec:
    user = f"=== SUGGESTIONS BY QUERY (JSON) ===\n{_dump(list(groups))}\n"
    return PromptSpec("dedup", load_template("dedup"), user, temperature, max_tokens)


def conflict_spec(items: Sequence[Mapping], *, temperature: float = 0.2, max_tokens: int = 4096) -> PromptSpec:
    user = f"=== CANDIDATE INSTRUCTIONS (JSON) ===\n{_dump(list(items))}\n"
    return PromptSpec("conflict", load_template("conflict"), user, temperature, max_tokens)


def blueprint_spec(
    body: str, items: Sequence[Mapping], *, temperature: float = 0.2, max_tokens: int = 4096
) -> PromptSpec:
    user = (
        f"=== REVISION INSTRUCTIONS (JSON) ===\n{_dump(list(items))}\n"
        f"=== WEBPAGE ===\n{body}"
    )
    return PromptSpec("blueprint", load_template("blueprint"), user, temperature, max_tokens)


def revise_spec(
    body: str, blueprint_payload: Mapping, *, temperature: float = 0.2, max_tokens: int = 4096
) -> PromptSpec:
    user = (
        f"=== REVISION BLUEPRINT (JSON) ===\n{_dump(dict(blueprint_payload))}\n"
        f"=== WEBPAGE ===\n{body}"
    )
    return PromptSpec("revise", load_template("revise"), user, temperature, max_tokens)


def revise_flat_spec(
    body: str, items: Sequence[Mapping], *, temperature: float = 0.2, max_tokens: int = 4096
) -> PromptSpec:
    user = (
        f"=== REVISION INSTRUCTIONS (JSON) ===\n{_dump(list(items))}\n"
        f"=== WEBPAGE ===\n{body}"
    )
    return PromptSpec("revise", load_template("revise_flat"), user, temperature, max_tokens)


def engine_spec(
    question: str, bodies: Sequence[str], *, temperature: float = 0.2, max_tokens: int = 1024
) -> PromptSpec:
    parts = [f"Question: {question}\n"]
    for k, body in enumerate(bodies, start=1):
        parts.append(f"=== SOURCE [{k}] ===\n{body}\n")
    return PromptSpec("engine", load_template("engine"), "\n".join(parts), temperature, max_tokens)


def judge_spec(
    question: str,
    answer: str,
    citation_number: int,
    body: str,
    *,
    temperature: float = 0.0,
    max_tokens: int = 512,
) -> PromptSpec:
    user = (
        f"Question: {question}\nSource citation number: {citation_number}\n\n"
        f"=== ANSWER ===\n{answer}\n"
        f"=== SOURCE DOCUMENT ===\n{body}"
    )
    return PromptSpec("judge", load_template("judge"), user, temperature, max_tokens)


def heuristic_spec(
    strategy: str, body: str, *, temperature: float = 0.2, max_tokens: int = 4096
) -> PromptSpec:
    if strategy not in HEURISTIC_STRATEGIES:
        raise ValueError(f"unknown heuristic strategy {strategy!r}")
    system = load_template(f"heuristic_{strategy}")
    user = f"=== WEBPAGE ===\n{body}"
    return PromptSpec("heuristic", system, user, temperature, max_tokens)


# ----------------------------------------------------------------- parsers


def parse_user_text(user_text: str) -> tuple[dict[str, str], dict[str, str]]:
    """Split a built user payload back into scalar header fields and blocks."""
    markers = list(_MARKER_RE.finditer(user_text))
    head = user_text[: markers[0].start()] if markers else user_text
    scalars: dict[str, str] = {}
    for line in head.splitlines():
        if ": " in line:
            key, value = line.split(": ", 1)
            scalars[key.strip()] = value.strip()
    blocks: dict[str, str] = {}
    for i, match in enumerate(markers):
        start = match.end()
        if start < len(user_text) and user_text[start] == "\n":
            start += 1
        end = markers[i + 1].start() if i + 1 < len(markers) else len(user_text)
        blocks[match.group(1)] = user_text[start:end]
    return scalars, blocks


def parse_sources(blocks: Mapping[str, str]) -> list[str]:
    """Recover the ordered source bodies from an engine payload."""
    numbered: list[tuple[int, str]] = []
    for name, text in blocks.items():
        match = _SOURCE_KEY_RE.match(name)
        if match:
            numbered.append((int(match.group(1)), text))
    numbered.sort()
    return [text for _, text in numbered]


def parse_json_block(blocks: Mapping[str, str], name: str):
    return json.loads(blocks[name])


def strategy_for_system(system_text: str) -> str | None:
    """Identify which heuristic template produced a system prompt."""
    for strategy in HEURISTIC_STRATEGIES:
        if system_text == load_template(f"heuristic_{strategy}"):
            return strategy
    return None


def is_flat_revision(system_text: str) -> bool:
    return system_text == load_template("revise_flat")
