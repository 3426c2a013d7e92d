"""Diverge-then-converge document optimization pipeline.

Stage order: mine weighted queries for the document, fan out per-query
edit requests, score each request by query weight times necessity and
filter at tau, semantically deduplicate, resolve conflicts, map the
survivors onto the document as a section-ordered blueprint, then execute
the blueprint with one guarded revision call. Ablation switches cut
individual converge stages; skipped stages consume zero tokens.

Model outputs at every converge stage are re-anchored to pipeline state:
dedup output maps back to request provenance, conflict output maps back
to instruction ids, blueprint directives are checked to cover every
instruction, and the revision is diffed section by section against the
original so untouched sections stay byte-identical.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone

from . import prompts
from .errors import ConfigError, CoverageError, EmptyQuerySet, ProvenanceError, TruncationError
from .gateway import Gateway, TokenMeter
from .model import (
    Blueprint,
    BlueprintItem,
    Document,
    EditRequest,
    FusedInstruction,
    QuerySet,
    RunManifest,
    SectionIndex,
    WeightedQuery,
    index_sections,
)
from .textutil import best_match, content_tokens, jaccard, normalize_text

log = logging.getLogger(__name__)

ABLATIONS = ("no_blueprint", "no_fusion", "no_conflict_res")

# Minimum excerpt-match quality to consider a request locatable, and to
# accept a fuzzy mapping between model output items and pipeline state.
ANCHOR_FLOOR = 0.6
# Mined queries closer than this (token Jaccard) collapse to one entry.
QUERY_DEDUP_JACCARD = 0.9


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True)
class PipelineConfig:
    n_queries: int = 5
    n_suggestions: int = 5
    tau: float = 0.7
    temperature: float = 0.2
    max_tokens: int = 4096
    ablation: frozenset[str] = frozenset()
    strict_preservation: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "ablation", frozenset(self.ablation))
        if self.n_queries < 1:
            raise ConfigError("n_queries must be >= 1")
        if self.n_suggestions < 1:
            raise ConfigError("n_suggestions must be >= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must be in [0, 1], got {self.tau}")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        unknown = self.ablation - set(ABLATIONS)
        if unknown:
            raise ConfigError(f"unknown ablation switches: {sorted(unknown)}")

    def describe(self) -> dict[str, object]:
        return {
            "n_queries": self.n_queries,
            "n_suggestions": self.n_suggestions,
            "tau": self.tau,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "ablation": sorted(self.ablation),
            "strict_preservation": self.strict_preservation,
        }


@dataclass(frozen=True)
class PreservationReport:
    """Section-level diff of a revision against its source."""

    planned: tuple[str, ...]  # sections the plan was allowed to touch
    changed: tuple[str, ...]  # planned sections that did change
    violated: tuple[str, ...]  # unplanned sections whose bytes changed
    omitted: tuple[str, ...]  # unplanned sections missing from the revision
    added: tuple[str, ...]  # sections present only in the revision
    restored: bool = False

    @property
    def clean(self) -> bool:
        return not self.violated and not self.omitted


@dataclass(frozen=True)
class RevisionResult:
    document: Document
    preservation: PreservationReport


@dataclass
class PipelineArtifacts:
    doc_id: str
    query_set: QuerySet | None = None
    raw_pool: list[EditRequest] = field(default_factory=list)
    filtered_pool: list[EditRequest] = field(default_factory=list)
    fused: list[FusedInstruction] = field(default_factory=list)
    blueprint: Blueprint | None = None
    revised: Document | None = None
    preservation: PreservationReport | None = None
    manifest: RunManifest = field(default_factory=RunManifest)

    def to_dict(self) -> dict[str, object]:
        return {
            "doc_id": self.doc_id,
            "query_set": asdict(self.query_set) if self.query_set else None,
            "raw_pool": [asdict(r) for r in self.raw_pool],
            "filtered_pool": [asdict(r) for r in self.filtered_pool],
            "fused": [asdict(f) for f in self.fused],
            "blueprint": asdict(self.blueprint) if self.blueprint is not None else None,
            "revised_body": self.revised.body if self.revised else None,
            "preservation": asdict(self.preservation) if self.preservation else None,
            "manifest": self.manifest.to_dict(),
        }


@dataclass(frozen=True)
class TuneResult:
    document: Document
    pool: tuple[EditRequest, ...]
    preservation: PreservationReport | None


def score_requests(pool: list[EditRequest], query_set: QuerySet) -> list[EditRequest]:
    """Attach global priority (weight/100) * (necessity/100) to every request."""
    scored = []
    for request in pool:
        if not 0 <= request.query_index < len(query_set.entries):
            raise IndexError(
                f"request references query {request.query_index} outside the query set"
            )
        weight = query_set.entries[request.query_index].weight
        priority = (weight / 100.0) * (request.necessity / 100.0)
        scored.append(replace(request, global_priority=priority))
    return scored


def prioritize_and_filter(
    pool: list[EditRequest], query_set: QuerySet, tau: float
) -> list[EditRequest]:
    """Score the pool and keep requests with priority >= tau, order preserved."""
    return [r for r in score_requests(pool, query_set) if r.global_priority >= tau]


def lift_requests(requests: list[EditRequest]) -> list[FusedInstruction]:
    """1:1 promotion of edit requests to instructions (fusion skipped)."""
    lifted = []
    for request in requests:
        topic_words = content_tokens(request.excerpt)[:2] or ["general"]
        lifted.append(
            FusedInstruction(
                id=f"req_{request.query_index}_{request.request_index}",
                topic=" ".join(topic_words).title(),
                excerpt=request.excerpt,
                suggestion=request.suggestion,
                necessity=request.necessity,
                provenance=((request.query_index, request.request_index),),
                resolution="kept",
            )
        )
    return lifted


def validate_provenance(artifacts: PipelineArtifacts) -> None:
    known = {(r.query_index, r.request_index) for r in artifacts.raw_pool}
    for instruction in artifacts.fused:
        for pair in instruction.provenance:
            if pair not in known:
                raise ProvenanceError(
                    f"instruction {instruction.id!r} cites unknown request {pair}"
                )


def _excerpt_similarity(a: str, b: str) -> float:
    na, nb = normalize_text(a), normalize_text(b)
    if not na or not nb:
        return 0.0
    if na == nb:
        return 1.0
    if na in nb or nb in na:
        return 0.95
    return jaccard(a, b)


def _byte_offset(body: str, char_pos: int) -> int:
    return len(body[:char_pos].encode("utf-8"))


def _section_for_excerpt(doc: Document, index: SectionIndex, excerpt: str) -> str:
    """Name of the section holding the excerpt's best anchor; last if unfound."""
    start, _, score = best_match(excerpt, doc.body)
    if score < ANCHOR_FLOOR:
        return index.sections[-1].name
    pos = _byte_offset(doc.body, start)
    for section in index.sections:
        if section.start <= pos < section.end:
            return section.name
    return index.sections[-1].name


class Pipeline:
    """Stage orchestration around a gateway and a config."""

    def __init__(self, gateway: Gateway, config: PipelineConfig = PipelineConfig()) -> None:
        self.gateway = gateway
        self.config = config

    # ------------------------------------------------------------ diverge

    def mine_queries(
        self, doc: Document, meter: TokenMeter | None = None, n_queries: int | None = None
    ) -> QuerySet:
        """Mine n weighted queries for the document.

        A wrong-cardinality reply triggers one re-ask; after that an
        overlong list is truncated and a short one accepted with a
        warning. Near-duplicate queries collapse to the higher weight.
        """
        n = self.config.n_queries if n_queries is None else n_queries
        spec = prompts.mining_spec(
            doc.body, n, temperature=self.config.temperature, max_tokens=self.config.max_tokens
        )
        payload, _ = self.gateway.complete_structured(spec, meter)
        entries = payload["queries"]
        if len(entries) != n:
            log.warning("mining returned %d queries, wanted %d; re-asking", len(entries), n)
            retry = replace(
                spec,
                user_text=spec.user_text
                + f"\n\nYour previous reply had {len(entries)} queries. Return exactly {n}.",
            )
            retry_payload, _ = self.gateway.complete_structured(retry, meter)
            retry_entries = retry_payload["queries"]
            if abs(len(retry_entries) - n) < abs(len(entries) - n):
                entries = retry_entries
            if len(entries) != n:
                log.warning("mining cardinality still %d, wanted %d; proceeding", len(entries), n)
        kept: list[WeightedQuery] = []
        for item in entries[:n]:
            text = item["query"].strip()
            if not text:
                continue
            weight = int(item["probability"])
            merged = False
            for i, existing in enumerate(kept):
                if jaccard(text, existing.text) > QUERY_DEDUP_JACCARD:
                    if weight > existing.weight:
                        kept[i] = WeightedQuery(existing.text, weight)
                    log.warning("near-duplicate mined query dropped: %r", text)
                    merged = True
                    break
            if not merged:
                kept.append(WeightedQuery(text, weight))
        if not kept:
            raise EmptyQuerySet(f"no usable queries mined for {doc.doc_id}")
        return QuerySet(doc.doc_id, tuple(kept))

    def generate_requests(
        self,
        doc: Document,
        query_set: QuerySet,
        meter: TokenMeter | None = None,
        only: int | None = None,
    ) -> list[EditRequest]:
        """Fan out per-query edit requests; at most n_suggestions per query.

        Excerpts are anchored in the document body; an excerpt without an
        acceptable anchor is flagged unlocatable, not dropped. ``only``
        restricts generation to a single query index.
        """
        pool: list[EditRequest] = []
        for qi, wq in enumerate(query_set.entries):
            if only is not None and qi != only:
                continue
            spec = prompts.request_spec(
                doc.body,
                wq.text,
                self.config.n_suggestions,
                temperature=self.config.temperature,
                max_tokens=self.config.max_tokens,
            )
            payload, _ = self.gateway.complete_structured(spec, meter)
            suggestions = payload["suggestions"]
            if len(suggestions) > self.config.n_suggestions:
                log.warning(
                    "%d suggestions for %r capped at %d",
                    len(suggestions),
                    wq.text,
                    self.config.n_suggestions,
                )
                suggestions = suggestions[: self.config.n_suggestions]
            for rj, item in enumerate(suggestions):
                start, end, score = best_match(item["excerpt"], doc.body)
                locatable = score >= ANCHOR_FLOOR
                if not locatable:
                    log.warning("unlocatable excerpt for %r: %r", wq.text, item["excerpt"][:60])
                pool.append(
                    EditRequest(
                        query_index=qi,
                        request_index=rj,
                        excerpt=item["excerpt"],
                        suggestion=item["suggestion"],
                        necessity=int(item["necessity"]),
                        anchor=(start, end) if score > 0 else None,
                        anchor_score=score,
                        locatable=locatable,
                    )
                )
        return pool

    # ----------------------------------------------------------- converge

    def deduplicate(
        self,
        doc: Document,
        filtered: list[EditRequest],
        query_set: QuerySet,
        meter: TokenMeter | None = None,
    ) -> list[FusedInstruction]:
        """Merge near-duplicate requests into instructions via the backend.

        Output items are mapped back to input requests by excerpt
        similarity; a merged item inherits the highest constituent
        necessity regardless of what the backend reported. Items that
        map to nothing are dropped with a warning; if every item fails
        to map, the filtered pool is lifted 1:1 instead.
        """
        if not filtered:
            return []
        by_query: dict[int, list[EditRequest]] = {}
        for request in filtered:
            by_query.setdefault(request.query_index, []).append(request)
        groups = [
            {
                "query_index": qi,
                "query": query_set.entries[qi].text,
                "weight": query_set.entries[qi].weight,
                "requests": [
                    {
                        "request_index": r.request_index,
                        "excerpt": r.excerpt,
                        "suggestion": r.suggestion,
                        "necessity": r.necessity,
                        "global_priority": round(r.global_priority or 0.0, 4),
                    }
                    for r in requests
                ],
            }
            for qi, requests in sorted(by_query.items())
        ]
        spec = prompts.dedup_spec(
            groups, temperature=self.config.temperature, max_tokens=self.config.max_tokens
        )
        payload, _ = self.gateway.complete_structured(spec, meter)
        fused: list[FusedInstruction] = []
        seen_ids: set[str] = set()
        for k, item in enumerate(payload):
            matched = [
                r for r in filtered if _excerpt_similarity(item["excerpt"], r.excerpt) >= ANCHOR_FLOOR
            ]
            if not matched:
                log.warning("dedup item %r maps to no request; dropped", item["id"])
                continue
            necessity = max(r.necessity for r in matched)
            if int(item["necessity"]) != necessity:
                log.warning(
                    "dedup item %r necessity %s corrected to constituent max %d",
                    item["id"],
                    item["necessity"],
                    necessity,
                )
            item_id = item["id"]
            if item_id in seen_ids:
                item_id = f"{item_id}_{k + 1}"
            seen_ids.add(item_id)
            topic = item.get("topic") or " ".join(content_tokens(item["excerpt"])[:2]).title()
            fused.append(
                FusedInstruction(
                    id=item_id,
                    topic=topic or "General",
                    excerpt=item["excerpt"],
                    suggestion=item["suggestion"],
                    necessity=necessity,
                    provenance=tuple((r.query_index, r.request_index) for r in matched),
                    resolution="merged" if len(matched) > 1 else "kept",
                )
            )
        if payload and not fused:
            log.warning("all dedup items unmappable; lifting filtered pool 1:1")
            return lift_requests(filtered)
        return fused

    def resolve_conflicts(
        self,
        fused: list[FusedInstruction],
        query_set: QuerySet | None = None,
        meter: TokenMeter | None = None,
    ) -> list[FusedInstruction]:
        """Arbitrate contradictory instructions via the backend.

        An output keeping one id of a competing group marks a selection;
        an output joining ids (with "+") marks a synthesis inheriting the
        max necessity and the union of provenance. If the backend drops a
        whole group, the highest-necessity member is restored (ties on
        necessity fall to the higher provenance query weight, then input
        order) so no conflict silently deletes all its participants.
        """
        if len(fused) <= 1:
            return list(fused)
        items = [
            {
                "id": f.id,
                "topic": f.topic,
                "excerpt": f.excerpt,
                "suggestion": f.suggestion,
                "necessity": f.necessity,
            }
            for f in fused
        ]
        spec = prompts.conflict_spec(
            items, temperature=self.config.temperature, max_tokens=self.config.max_tokens
        )
        payload, _ = self.gateway.complete_structured(spec, meter)
        by_id = {f.id: f for f in fused}

        def sources_for(item: dict) -> list[FusedInstruction]:
            rid = item["id"]
            if rid in by_id:
                return [by_id[rid]]
            parts = [p for p in rid.split("+") if p in by_id]
            if parts and len(parts) == len(rid.split("+")):
                return [by_id[p] for p in parts]
            fuzzy = [
                f for f in fused if _excerpt_similarity(item["excerpt"], f.excerpt) >= ANCHOR_FLOOR
            ]
            return fuzzy

        out: list[FusedInstruction] = []
        consumed: set[str] = set()
        seen_ids: set[str] = set()
        for k, item in enumerate(payload):
            sources = sources_for(item)
            if not sources:
                log.warning("conflict item %r maps to no instruction; dropped", item["id"])
                continue
            consumed.update(f.id for f in sources)
            item_id = item["id"]
            if item_id in seen_ids:
                item_id = f"{item_id}_{k + 1}"
            seen_ids.add(item_id)
            if len(sources) == 1:
                src = sources[0]
                out.append(
                    replace(
                        src,
                        id=item_id,
                        suggestion=item["suggestion"],
                        excerpt=item["excerpt"],
                    )
                )
            else:
                provenance = tuple(dict.fromkeys(p for f in sources for p in f.provenance))
                out.append(
                    FusedInstruction(
                        id=item_id,
                        topic=sources[0].topic,
                        excerpt=item["excerpt"],
                        suggestion=item["suggestion"],
                        necessity=max(f.necessity for f in sources),
                        provenance=provenance,
                        resolution="synthesized",
                    )
                )

        def max_weight(instruction: FusedInstruction) -> int:
            if query_set is None:
                return 0
            return max(query_set.entries[qi].weight for qi, _ in instruction.provenance)

        # Re-mark selections and restore groups the backend dropped whole.
        groups: dict[str, list[FusedInstruction]] = {}
        for f in fused:
            groups.setdefault(normalize_text(f.excerpt), []).append(f)
        for group in groups.values():
            if len(group) < 2:
                if group[0].id not in consumed:
                    log.warning("instruction %r dropped by conflict stage; restored", group[0].id)
                    out.append(group[0])
                continue
            survivors = [f for f in group if f.id in consumed]
            if not survivors:
                winner = sorted(
                    enumerate(group), key=lambda p: (-p[1].necessity, -max_weight(p[1]), p[0])
                )[0][1]
                log.warning("conflict group dropped whole; restoring %r", winner.id)
                out.append(replace(winner, resolution="selected"))
            elif len(survivors) < len(group):
                for i, candidate in enumerate(out):
                    if candidate.id in {s.id for s in survivors} and candidate.resolution in (
                        "kept",
                        "merged",
                    ):
                        out[i] = replace(candidate, resolution="selected")
        return out

    def build_blueprint(
        self, doc: Document, fused: list[FusedInstruction], meter: TokenMeter | None = None
    ) -> Blueprint:
        """Map instructions onto document sections as an ordered plan.

        Every instruction must be covered by exactly one plan item:
        duplicates are pruned from later items, missing instructions get
        a fallback item on the section holding their excerpt anchor.
        Items are ordered by target section position; unknown sections
        go last.
        """
        if not fused:
            return Blueprint()
        items = [
            {
                "id": f.id,
                "topic": f.topic,
                "excerpt": f.excerpt,
                "suggestion": f.suggestion,
                "necessity": f.necessity,
            }
            for f in fused
        ]
        spec = prompts.blueprint_spec(
            doc.body, items, temperature=self.config.temperature, max_tokens=self.config.max_tokens
        )
        payload, _ = self.gateway.complete_structured(spec, meter)
        plan = payload["revision_blueprint"]

        def owner_of(directive: str) -> str | None:
            for f in fused:
                if f.id in directive:
                    return f.id
            best_id, best_sim = None, 0.0
            for f in fused:
                sim = jaccard(directive, f.suggestion)
                if sim > best_sim:
                    best_id, best_sim = f.id, sim
            return best_id if best_sim >= ANCHOR_FLOOR else None

        covered: set[str] = set()
        built: list[BlueprintItem] = []
        for entry in plan:
            directives = []
            for directive in entry.get("directives", []):
                owner = owner_of(directive)
                if owner is not None and owner in covered:
                    log.warning("duplicate coverage of %r pruned from blueprint", owner)
                    continue
                if owner is not None:
                    covered.add(owner)
                directives.append(directive)
            if not directives:
                continue
            built.append(
                BlueprintItem(
                    section_name=entry["section_name"],
                    target_location=entry.get("target_location", ""),
                    modification_intent=entry.get("modification_intent", ""),
                    directives=tuple(directives),
                    format_note=entry.get("format_note", ""),
                )
            )
        index = index_sections(doc)
        missing = [f for f in fused if f.id not in covered]
        for f in missing:
            log.warning("instruction %r missing from blueprint; adding fallback item", f.id)
            section_name = _section_for_excerpt(doc, index, f.excerpt)
            built.append(
                BlueprintItem(
                    section_name=section_name,
                    target_location=f"within '{section_name}'",
                    modification_intent="Integrate an instruction the plan omitted",
                    directives=(f"Integrate instruction {f.id}: {f.suggestion}",),
                    format_note="Keep as text paragraphs.",
                )
            )
            covered.add(f.id)
        if {f.id for f in fused} - covered:
            raise CoverageError(f"instructions lost from blueprint: {sorted({f.id for f in fused} - covered)}")

        def section_key(item: BlueprintItem) -> tuple[int, int]:
            section = index.find(item.section_name)
            return (0, section.start) if section is not None else (1, 0)

        built.sort(key=section_key)
        return Blueprint(tuple(built))

    # ------------------------------------------------------------- revise

    def execute_blueprint(
        self, doc: Document, blueprint: Blueprint, meter: TokenMeter | None = None
    ) -> RevisionResult:
        """One revision call guided by the blueprint, then a section diff.

        An empty blueprint returns the document unchanged without any
        backend call.
        """
        if not blueprint.items:
            return RevisionResult(doc, _empty_preservation())
        payload = {"revision_blueprint": [asdict(item) for item in blueprint.items]}
        for entry in payload["revision_blueprint"]:
            entry["directives"] = list(entry["directives"])
        spec = prompts.revise_spec(
            doc.body, payload, temperature=self.config.temperature, max_tokens=self.config.max_tokens
        )
        text, _ = self.gateway.complete_structured(spec, meter)
        planned = [item.section_name for item in blueprint.items]
        return self._finish_revision(doc, text, planned)

    def execute_flat(
        self, doc: Document, fused: list[FusedInstruction], meter: TokenMeter | None = None
    ) -> RevisionResult:
        """Revision from a flat instruction list (blueprint stage ablated)."""
        if not fused:
            return RevisionResult(doc, _empty_preservation())
        items = [{"id": f.id, "excerpt": f.excerpt, "suggestion": f.suggestion} for f in fused]
        spec = prompts.revise_flat_spec(
            doc.body, items, temperature=self.config.temperature, max_tokens=self.config.max_tokens
        )
        text, _ = self.gateway.complete_structured(spec, meter)
        index = index_sections(doc)
        planned = sorted({_section_for_excerpt(doc, index, f.excerpt) for f in fused})
        return self._finish_revision(doc, text, planned)

    def _finish_revision(
        self, doc: Document, revised_text: str, planned: list[str]
    ) -> RevisionResult:
        final_text, report = check_preservation(
            doc, revised_text, planned, strict=self.config.strict_preservation
        )
        return RevisionResult(Document(doc.doc_id, final_text, doc.origin_rank), report)

    # ---------------------------------------------------------------- run

    def run(self, doc: Document, meter: TokenMeter | None = None) -> PipelineArtifacts:
        """Full pipeline pass; stage behavior follows config.ablation."""
        cfg = self.config
        stage_meter = TokenMeter()
        artifacts = PipelineArtifacts(
            doc_id=doc.doc_id,
            manifest=RunManifest(
                config=cfg.describe(),
                backend_id=self.gateway.backend.backend_id,
                started_at=_utcnow(),
            ),
        )

        fan = _FanoutMeter(stage_meter, meter)
        query_set = self.mine_queries(doc, fan)
        artifacts.query_set = query_set
        pool = self.generate_requests(doc, query_set, fan)
        scored = score_requests(pool, query_set)
        filtered = [r for r in scored if (r.global_priority or 0.0) >= cfg.tau]
        artifacts.raw_pool = scored
        artifacts.filtered_pool = filtered
        unlocatable = sum(1 for r in scored if not r.locatable)
        if unlocatable:
            artifacts.manifest.warn(f"{unlocatable} requests had unlocatable excerpts")

        if "no_fusion" in cfg.ablation:
            fused = lift_requests(filtered)
        else:
            fused = self.deduplicate(doc, filtered, query_set, fan)
            if "no_conflict_res" not in cfg.ablation:
                fused = self.resolve_conflicts(fused, query_set, fan)
        artifacts.fused = fused

        flat = bool({"no_fusion", "no_blueprint"} & cfg.ablation)
        if flat:
            artifacts.blueprint = None
            result = self.execute_flat(doc, fused, fan)
        else:
            blueprint = self.build_blueprint(doc, fused, fan) if fused else Blueprint()
            artifacts.blueprint = blueprint
            result = self.execute_blueprint(doc, blueprint, fan)
        artifacts.revised = result.document
        artifacts.preservation = result.preservation
        if result.preservation.violated:
            artifacts.manifest.warn(
                f"revision touched unplanned sections: {list(result.preservation.violated)}"
            )
        if result.preservation.restored:
            artifacts.manifest.warn("strict preservation restored unplanned sections")
        validate_provenance(artifacts)
        artifacts.manifest.tokens = stage_meter.snapshot()
        artifacts.manifest.finished_at = _utcnow()
        return artifacts

    def per_query_tune(
        self,
        doc: Document,
        query_set: QuerySet,
        target_index: int,
        meter: TokenMeter | None = None,
    ) -> TuneResult:
        """Optimize for exactly one query: its raw requests, no fusion, flat revision."""
        if not 0 <= target_index < len(query_set.entries):
            raise IndexError(f"target index {target_index} outside the query set")
        pool = self.generate_requests(doc, query_set, meter, only=target_index)
        if not pool:
            return TuneResult(doc, (), None)
        fused = lift_requests(pool)
        result = self.execute_flat(doc, fused, meter)
        return TuneResult(result.document, tuple(pool), result.preservation)


class _FanoutMeter:
    """Credits every add() to several meters; quacks like TokenMeter."""

    def __init__(self, *meters: TokenMeter | None) -> None:
        self.meters = [m for m in meters if m is not None]

    def add(self, stage_id: str, prompt_tokens: int, completion_tokens: int, *, fresh: bool) -> None:
        for meter in self.meters:
            meter.add(stage_id, prompt_tokens, completion_tokens, fresh=fresh)


def _empty_preservation() -> PreservationReport:
    return PreservationReport((), (), (), (), (), False)


def check_preservation(
    doc: Document, revised_text: str, planned_names: list[str], *, strict: bool = False
) -> tuple[str, PreservationReport]:
    """Diff a revision against its source, section by section.

    Sections pair up by normalized heading, forward-only, so a reordered
    revision reads as omission plus addition. Unplanned sections must be
    byte-identical: changed ones are violations, missing ones raise
    TruncationError unless strict mode is on, in which case the original
    bytes are put back (violations too) and the report says so.
    """
    orig_index = index_sections(doc)
    revised_doc = Document(doc.doc_id, revised_text)
    rev_index = index_sections(revised_doc)
    planned = {normalize_text(name) for name in planned_names}
    orig_bytes = doc.body.encode("utf-8")
    rev_bytes = revised_text.encode("utf-8")

    used = [False] * len(rev_index.sections)
    pairs: list[tuple[object, object | None]] = []
    cursor = 0
    for osec in orig_index.sections:
        want = normalize_text(osec.name)
        match = None
        for j in range(cursor, len(rev_index.sections)):
            if not used[j] and normalize_text(rev_index.sections[j].name) == want:
                match = j
                break
        if match is None:
            pairs.append((osec, None))
        else:
            used[match] = True
            cursor = match + 1
            pairs.append((osec, rev_index.sections[match]))
    added = tuple(
        rev_index.sections[j].name for j in range(len(rev_index.sections)) if not used[j]
    )

    changed: list[str] = []
    violated: list[str] = []
    omitted: list[str] = []
    for osec, rsec in pairs:
        is_planned = normalize_text(osec.name) in planned
        if rsec is None:
            (changed if is_planned else omitted).append(osec.name)
            continue
        if orig_bytes[osec.start : osec.end] != rev_bytes[rsec.start : rsec.end]:
            (changed if is_planned else violated).append(osec.name)

    restored = False
    final_text = revised_text
    if (violated or omitted) and strict:
        pieces: list[bytes] = []
        for osec, rsec in pairs:
            if normalize_text(osec.name) in planned:
                if rsec is not None:
                    pieces.append(rev_bytes[rsec.start : rsec.end])
            else:
                pieces.append(orig_bytes[osec.start : osec.end])
        for j, section in enumerate(rev_index.sections):
            if not used[j]:
                pieces.append(rev_bytes[section.start : section.end])
        glued: list[bytes] = []
        for piece in pieces:
            if not piece:
                continue
            if glued and piece.startswith(b"#") and not glued[-1].endswith(b"\n"):
                glued.append(b"\n")
            glued.append(piece)
        final_text = b"".join(glued).decode("utf-8")
        restored = True
    elif omitted and not strict:
        raise TruncationError(f"revision of {doc.doc_id} dropped sections: {omitted}")
    elif violated:
        log.warning("revision of %s touched unplanned sections: %s", doc.doc_id, violated)

    report = PreservationReport(
        planned=tuple(planned_names),
        changed=tuple(changed),
        violated=tuple(violated),
        omitted=tuple(omitted),
        added=added,
        restored=restored,
    )
    return final_text, report
