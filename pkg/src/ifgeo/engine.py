"""Simulated generative engine: retrieval, answer synthesis, citation parsing."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import prompts
from .errors import UnknownQuery
from .gateway import Gateway, TokenMeter
from .model import Document
from .textutil import tokens as text_tokens

log = logging.getLogger(__name__)

CITATION_RE = re.compile(r"\[\s*\d+(?:\s*,\s*\d+)*\s*\]")
TERMINATORS = ".!?"


@dataclass(frozen=True)
class CandidateSet:
    """The ranked sources handed to the answer synthesizer for one query."""

    query: str
    docs: tuple[Document, ...]
    target_position: int | None = None  # 0-based slot of the doc under study

    def __post_init__(self) -> None:
        if not self.docs:
            raise ValueError("candidate set must hold at least one document")
        ids = [d.doc_id for d in self.docs]
        if len(set(ids)) != len(ids):
            raise ValueError(f"candidate doc_ids must be distinct, got {ids}")
        if self.target_position is not None and not 0 <= self.target_position < len(self.docs):
            raise ValueError(
                f"target_position {self.target_position} outside 0..{len(self.docs) - 1}"
            )


@dataclass(frozen=True)
class Sentence:
    text: str
    word_count: int
    cited: frozenset[int]  # 1-based candidate indices


@dataclass(frozen=True)
class EngineResponse:
    query: str
    text: str
    sentences: tuple[Sentence, ...]
    n_candidates: int


def retrieve(
    query: str,
    corpus: Sequence[Document],
    n: int,
    *,
    fixed: Mapping[str, CandidateSet] | None = None,
) -> CandidateSet:
    """Pick the top-n candidates for a query.

    With ``fixed`` the dataset-provided candidate set is returned verbatim
    (UnknownQuery if the query has none). Otherwise a lexical tf-idf score
    ranks the corpus: sum over unique query tokens of tf * log(1 + N/df),
    ties broken by doc_id.
    """
    if fixed is not None:
        try:
            return fixed[query]
        except KeyError:
            raise UnknownQuery(query) from None
    if not 1 <= n <= len(corpus):
        raise ValueError(f"cannot pick {n} candidates from a corpus of {len(corpus)}")
    ids = [d.doc_id for d in corpus]
    if len(set(ids)) != len(ids):
        raise ValueError("corpus doc_ids must be distinct")
    query_terms = sorted(set(text_tokens(query)))
    doc_tokens = {d.doc_id: text_tokens(d.body) for d in corpus}
    doc_sets = {doc_id: set(toks) for doc_id, toks in doc_tokens.items()}
    size = len(corpus)

    def score(doc: Document) -> float:
        total = 0.0
        toks = doc_tokens[doc.doc_id]
        for term in query_terms:
            df = sum(1 for s in doc_sets.values() if term in s)
            if df == 0:
                continue
            total += toks.count(term) * math.log(1 + size / df)
        return total

    ranked = sorted(corpus, key=lambda d: (-score(d), d.doc_id))
    return CandidateSet(query, tuple(ranked[:n]))


def parse_citations(text: str, n_candidates: int) -> tuple[Sentence, ...]:
    """Split an answer into sentences with attributed citation sets.

    Rules, kept simple and deterministic:
    - a citation group is ``[k]`` or ``[k, j, ...]``; adjacent groups are
      separate groups.
    - groups right after a sentence terminator (spaces/tabs in between are
      fine) attach back to the sentence that terminator closed.
    - a terminator ends a sentence only when, past the attached groups and
      any whitespace, the text ends or continues with an uppercase letter
      or a new citation group. Decimals (3.5) and abbreviations followed
      by lowercase stay inside one sentence.
    - sentence texts partition the input exactly; whitespace between
      sentences rides with the sentence it follows.
    - word_count counts whitespace-separated tokens that still contain an
      alphanumeric character once citation groups are removed.
    - citation indices outside 1..n_candidates are dropped with a warning.
    """
    if not text:
        return ()
    spans = [
        (m.start(), m.end(), tuple(int(x) for x in re.findall(r"\d+", m.group(0))))
        for m in CITATION_RE.finditer(text)
    ]
    span_end_at = {start: end for start, end, _ in spans}

    n = len(text)
    starts = [0]
    i = 0
    while i < n:
        if text[i] in TERMINATORS:
            j = i + 1
            while True:  # consume citation groups trailing the terminator
                k = j
                while k < n and text[k] in " \t":
                    k += 1
                if k in span_end_at:
                    j = span_end_at[k]
                else:
                    break
            t = j
            while t < n and text[t].isspace():
                t += 1
            if t >= n:
                break
            if text[t].isupper() or text[t] == "[":
                if t > starts[-1]:
                    starts.append(t)
                i = j
        i += 1

    sentences: list[Sentence] = []
    for si, start in enumerate(starts):
        end = starts[si + 1] if si + 1 < len(starts) else n
        segment = text[start:end]
        cited: set[int] = set()
        local_spans = [(s, e) for s, e, _ in spans if s >= start and e <= end]
        for s, e, indices in spans:
            if s >= start and e <= end:
                for k in indices:
                    if 1 <= k <= n_candidates:
                        cited.add(k)
                    else:
                        log.warning("citation [%d] outside 1..%d dropped", k, n_candidates)
        cleaned = []
        cursor = start
        for s, e in local_spans:
            cleaned.append(text[cursor:s])
            cursor = e
        cleaned.append(text[cursor:end])
        stripped = "".join(cleaned)
        word_count = sum(1 for tok in stripped.split() if any(c.isalnum() for c in tok))
        sentences.append(Sentence(segment, word_count, frozenset(cited)))
    return tuple(sentences)


def generate_response(
    query: str,
    candidates: CandidateSet,
    gateway: Gateway,
    *,
    temperature: float = 0.2,
    max_tokens: int = 1024,
    meter: TokenMeter | None = None,
) -> EngineResponse:
    """Synthesize a citation-attributed answer over the candidate set."""
    spec = prompts.engine_spec(
        query, [d.body for d in candidates.docs], temperature=temperature, max_tokens=max_tokens
    )
    text, _ = gateway.complete_structured(spec, meter)
    sentences = parse_citations(text, len(candidates.docs))
    if not any(s.cited for s in sentences):
        log.warning("engine answer for %r cites no sources", query)
    return EngineResponse(query, text, sentences, len(candidates.docs))
