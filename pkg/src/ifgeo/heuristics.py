"""Single-shot rewrite baselines, one strategy per prompt template."""

from __future__ import annotations

from . import prompts
from .errors import ConfigError
from .gateway import Gateway, TokenMeter
from .model import Document

STRATEGIES = prompts.HEURISTIC_STRATEGIES

DISPLAY_NAMES = {
    "traditional_seo": "Tran. SEO",
    "unique_words": "Uniq. Word",
    "simple_expression": "Simp. Expr.",
    "authoritative": "Auth. Expr.",
    "fluent": "Flue. Expr.",
    "technical_terms": "Term. Addi.",
    "cite_sources": "Cite Sources",
    "quotation_addition": "Quot. Addi.",
    "statistics_addition": "Stat. Addi.",
}


def apply_heuristic(
    doc: Document,
    strategy: str,
    gateway: Gateway,
    *,
    temperature: float = 0.2,
    max_tokens: int = 4096,
    meter: TokenMeter | None = None,
) -> Document:
    """Rewrite the whole document with one strategy prompt.

    Unknown strategies fail before any backend call.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown heuristic strategy {strategy!r}; expected one of {list(STRATEGIES)}")
    spec = prompts.heuristic_spec(strategy, doc.body, temperature=temperature, max_tokens=max_tokens)
    text, _ = gateway.complete_structured(spec, meter)
    return Document(doc.doc_id, text, doc.origin_rank)
