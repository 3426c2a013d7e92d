"""Deterministic offline backend.

Every reply is a pure function of the prompt content and the seed, so
runs are bit-reproducible with or without the cache. Replies are shaped
to exercise the same paths a live model would: mined queries reuse
salient document vocabulary, edit suggestions quote real document lines,
revisions insert directive text at the end of the targeted section and
leave every other section byte-identical, and synthesized answers devote
more words to sources that share vocabulary with the question, so edits
that work query terms into a document raise its measured visibility.

Scored fields (probability, necessity) land in [60, 95].
"""

from __future__ import annotations

import hashlib
import json

from . import prompts
from .gateway import Completion, PromptSpec, estimate_tokens
from .model import Document, index_sections
from .textutil import STOPWORDS, content_tokens, normalize_text, tokens

QUERY_SHAPES = (
    "what is {a} and how does it relate to {b}",
    "how does {a} work",
    "causes and effects of {a}",
    "{a} vs {b} key differences",
    "best practices for {a} and {b}",
    "common problems with {a}",
    "benefits of {a} for {b}",
    "{a} guide for beginners",
    "latest research on {a} and {b}",
    "risks of {a} in {b}",
    "how to choose {a} for {b}",
)

HEURISTIC_MARKS = {
    "traditional_seo": "Keywords: {a}, {b}, overview, guide.",
    "unique_words": "This exposition elucidates {a} with recondite vocabulary.",
    "simple_expression": "In short, this page is about {a}.",
    "authoritative": "Experts agree this page settles the question of {a}.",
    "fluent": "Altogether, {a} and {b} flow naturally through this page.",
    "technical_terms": "Formally, {a} admits precise terminology alongside {b}.",
    "cite_sources": "According to a peer-reviewed survey of {a} [1], these claims are grounded.",
    "quotation_addition": '"Understanding {a} matters," notes a leading practitioner.',
    "statistics_addition": "Surveys show 87% of readers value coverage of {a}.",
}


def _digest(*parts: object) -> int:
    blob = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


def _salient(body: str, k: int = 12) -> list[str]:
    counts: dict[str, int] = {}
    for tok in content_tokens(body):
        if len(tok) >= 4:
            counts[tok] = counts.get(tok, 0) + 1
    ranked = sorted(counts, key=lambda t: (-counts[t], t))[:k]
    while len(ranked) < 2:
        ranked.append(("topic", "overview")[len(ranked)])
    return ranked


def _overlap(query: str, body: str) -> int:
    doc_counts: dict[str, int] = {}
    for tok in tokens(body):
        doc_counts[tok] = doc_counts.get(tok, 0) + 1
    total = 0
    for term in sorted(set(tokens(query))):
        if len(term) < 3 or term in STOPWORDS:
            continue
        total += min(doc_counts.get(term, 0), 4)
    return total


class MockBackend:
    backend_id: str

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed
        self.backend_id = f"mock:{seed}"

    def send(self, spec: PromptSpec) -> Completion:
        handler = getattr(self, f"_{spec.stage_id}")
        text = handler(spec)
        return Completion(
            raw_text=text,
            prompt_tokens=estimate_tokens(spec.system_text + spec.user_text),
            completion_tokens=estimate_tokens(text),
            backend_id=self.backend_id,
        )

    def _score(self, *parts: object) -> int:
        return 60 + _digest(self.seed, *parts) % 36

    # ------------------------------------------------------------- stages

    def _mining(self, spec: PromptSpec) -> str:
        scalars, blocks = prompts.parse_user_text(spec.user_text)
        n = int(scalars["Query target count"])
        body = blocks["WEBPAGE"]
        salient = _salient(body)
        queries = []
        for i in range(n):
            shape = QUERY_SHAPES[i % len(QUERY_SHAPES)]
            a = salient[i % len(salient)]
            b = salient[(i + 1) % len(salient)]
            query = shape.replace("{a}", a).replace("{b}", b)
            if i >= len(QUERY_SHAPES):
                query += f" part {i // len(QUERY_SHAPES) + 1}"
            queries.append({"query": query, "probability": self._score("mining", body, i)})
        return json.dumps({"queries": queries}, ensure_ascii=False)

    def _request_gen(self, spec: PromptSpec) -> str:
        scalars, blocks = prompts.parse_user_text(spec.user_text)
        query = scalars["Query"]
        limit = int(scalars["Suggestion limit"])
        body = blocks["WEBPAGE"]
        lines = [line.strip() for line in body.splitlines() if line.strip()]
        terms = content_tokens(query)[:6]
        coverage = ", ".join(terms) if terms else "the topic"
        suggestions = []
        for j in range(limit):
            line = lines[_digest(self.seed, "excerpt", query, j) % len(lines)]
            excerpt = " ".join(line.split()[:10])
            suggestions.append(
                {
                    "excerpt": excerpt,
                    "suggestion": (
                        f"Add a direct answer for '{query}' near this point, covering {coverage}."
                    ),
                    "necessity": self._score("necessity", query, excerpt, j),
                }
            )
        return json.dumps({"suggestions": suggestions}, ensure_ascii=False)

    def _dedup(self, spec: PromptSpec) -> str:
        _, blocks = prompts.parse_user_text(spec.user_text)
        groups = prompts.parse_json_block(blocks, "SUGGESTIONS BY QUERY (JSON)")
        order: list[str] = []
        merged: dict[str, dict] = {}
        for group in groups:
            for request in group.get("requests", []):
                if request["necessity"] < 60:
                    continue
                key = normalize_text(request["excerpt"])
                if key not in merged:
                    order.append(key)
                    merged[key] = {
                        "excerpt": request["excerpt"],
                        "suggestions": [],
                        "necessity": 0,
                    }
                entry = merged[key]
                if request["suggestion"] not in entry["suggestions"]:
                    entry["suggestions"].append(request["suggestion"])
                entry["necessity"] = max(entry["necessity"], request["necessity"])
        items = []
        for k, key in enumerate(order, start=1):
            entry = merged[key]
            topic_words = content_tokens(entry["excerpt"])[:2] or ["general"]
            items.append(
                {
                    "id": f"suggest_{k}",
                    "topic": " ".join(topic_words).title(),
                    "excerpt": entry["excerpt"],
                    "suggestion": "; ".join(entry["suggestions"]),
                    "necessity": entry["necessity"],
                }
            )
        return json.dumps(items, ensure_ascii=False)

    def _conflict(self, spec: PromptSpec) -> str:
        _, blocks = prompts.parse_user_text(spec.user_text)
        items = prompts.parse_json_block(blocks, "CANDIDATE INSTRUCTIONS (JSON)")
        order: list[str] = []
        groups: dict[str, list[dict]] = {}
        for item in items:
            key = normalize_text(item["excerpt"])
            if key not in groups:
                order.append(key)
                groups[key] = []
            groups[key].append(item)
        out = []
        for key in order:
            group = groups[key]
            if len(group) == 1:
                item = group[0]
                out.append(
                    {"id": item["id"], "excerpt": item["excerpt"], "suggestion": item["suggestion"]}
                )
                continue
            necessities = [int(it.get("necessity", 0)) for it in group]
            if max(necessities) - min(necessities) >= 15:
                winner = group[0]
                for it in group[1:]:
                    if int(it.get("necessity", 0)) > int(winner.get("necessity", 0)):
                        winner = it
                out.append(
                    {
                        "id": winner["id"],
                        "excerpt": winner["excerpt"],
                        "suggestion": winner["suggestion"],
                    }
                )
            else:
                out.append(
                    {
                        "id": "+".join(it["id"] for it in group),
                        "excerpt": group[0]["excerpt"],
                        "suggestion": "Balance the following needs in one coherent edit: "
                        + " | ".join(it["suggestion"] for it in group),
                    }
                )
        return json.dumps(out, ensure_ascii=False)

    def _section_of(self, body: str, excerpt: str) -> int:
        """Index of the section containing the excerpt; last section if unfound."""
        index = index_sections(Document("mock", body))
        body_bytes = body.encode("utf-8")
        pos = body_bytes.find(excerpt.encode("utf-8"))
        if pos < 0:
            char_pos = body.casefold().find(excerpt.casefold())
            pos = len(body[:char_pos].encode("utf-8")) if char_pos >= 0 else -1
        if pos < 0:
            return len(index.sections) - 1
        for i, section in enumerate(index.sections):
            if section.start <= pos < section.end:
                return i
        return len(index.sections) - 1

    def _blueprint(self, spec: PromptSpec) -> str:
        _, blocks = prompts.parse_user_text(spec.user_text)
        items = prompts.parse_json_block(blocks, "REVISION INSTRUCTIONS (JSON)")
        body = blocks["WEBPAGE"]
        index = index_sections(Document("mock", body))
        grouped: dict[int, list[dict]] = {}
        for item in items:
            grouped.setdefault(self._section_of(body, item["excerpt"]), []).append(item)
        plan = []
        for section_idx in sorted(grouped):
            section = index.sections[section_idx]
            plan.append(
                {
                    "section_name": section.name,
                    "target_location": f"end of '{section.name}'",
                    "modification_intent": "Integrate the grouped revision instructions",
                    "directives": [
                        f"Integrate instruction {it['id']}: {it['suggestion']}"
                        for it in grouped[section_idx]
                    ],
                    "format_note": "Keep as text paragraphs.",
                }
            )
        return json.dumps({"revision_blueprint": plan}, ensure_ascii=False)

    def _revise(self, spec: PromptSpec) -> str:
        _, blocks = prompts.parse_user_text(spec.user_text)
        body = blocks["WEBPAGE"]
        index = index_sections(Document("mock", body))
        insertions: dict[int, list[str]] = {}
        if prompts.is_flat_revision(spec.system_text):
            items = prompts.parse_json_block(blocks, "REVISION INSTRUCTIONS (JSON)")
            for item in items:
                idx = self._section_of(body, item["excerpt"])
                insertions.setdefault(idx, []).append(item["suggestion"])
        else:
            payload = prompts.parse_json_block(blocks, "REVISION BLUEPRINT (JSON)")
            names = {normalize_text(s.name): i for i, s in enumerate(index.sections)}
            for item in payload.get("revision_blueprint", []):
                idx = names.get(normalize_text(item["section_name"]), len(index.sections) - 1)
                insertions.setdefault(idx, []).extend(item.get("directives", []))
        body_bytes = body.encode("utf-8")
        pieces = []
        for i, section in enumerate(index.sections):
            piece = body_bytes[section.start : section.end]
            if i in insertions:
                if not piece.endswith(b"\n"):
                    piece += b"\n"
                piece += ("\n".join(insertions[i]) + "\n").encode("utf-8")
            pieces.append(piece)
        return b"".join(pieces).decode("utf-8")

    def _engine(self, spec: PromptSpec) -> str:
        scalars, blocks = prompts.parse_user_text(spec.user_text)
        question = scalars["Question"]
        sources = prompts.parse_sources(blocks)
        sentences = []
        for k, body in enumerate(sources, start=1):
            n_words = 5 + 2 * min(_overlap(question, body), 25)
            filler = content_tokens(body) or ["details"]
            words = ["Source", str(k), "explains"]
            f = 0
            while len(words) < n_words:
                words.append(filler[f % len(filler)])
                f += 1
            sentences.append(" ".join(words) + f" [{k}].")
        return " ".join(sentences)

    def _judge(self, spec: PromptSpec) -> str:
        scalars, blocks = prompts.parse_user_text(spec.user_text)
        question = scalars["Question"]
        k = int(scalars["Source citation number"])
        answer = blocks["ANSWER"]
        mark = f"[{k}]"
        hits = answer.count(mark)
        first = answer.find(mark)
        position = 5 - int(4 * first / max(1, len(answer))) if first >= 0 else 1
        scores = {
            "relevance": 1 + _digest(self.seed, "judge", question, k, "relevance") % 5,
            "influence": min(5, 1 + hits),
            "uniqueness": 1 + _digest(self.seed, "judge", question, k, "uniqueness") % 5,
            "diversity": 1 + _digest(self.seed, "judge", question, k, "diversity") % 5,
            "followup": 1 + _digest(self.seed, "judge", question, k, answer, "followup") % 5,
            "position": max(1, min(5, position)),
            "count": min(5, 1 + 2 * hits),
        }
        return json.dumps(scores)

    def _heuristic(self, spec: PromptSpec) -> str:
        strategy = prompts.strategy_for_system(spec.system_text)
        if strategy is None:
            raise ValueError("unrecognized heuristic system prompt")
        _, blocks = prompts.parse_user_text(spec.user_text)
        body = blocks["WEBPAGE"]
        salient = _salient(body)
        mark = HEURISTIC_MARKS[strategy].replace("{a}", salient[0]).replace("{b}", salient[1])
        out = body if body.endswith("\n") else body + "\n"
        return f"{out}\n{mark}\n"
