"""Core domain types and markdown section segmentation."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field

from .textutil import normalize_text

ATX_HEADING = re.compile(r"^(#{1,6}) (\S.*)$")
PREAMBLE_NAME = "(preamble)"

RESOLUTIONS = ("kept", "merged", "selected", "synthesized")


@dataclass(frozen=True)
class Document:
    """A markdown page under optimization. ``body`` is never empty."""

    doc_id: str
    body: str
    origin_rank: int | None = None  # 1-based rank in the engine that surfaced it

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if not self.body:
            raise ValueError(f"document {self.doc_id!r} has an empty body")
        if self.origin_rank is not None and not 1 <= self.origin_rank <= 5:
            raise ValueError(f"origin_rank must be in 1..5, got {self.origin_rank}")


@dataclass(frozen=True)
class Section:
    """Half-open byte span [start, end) into the UTF-8 encoded body."""

    heading: str | None  # None for text before the first heading
    start: int
    end: int

    @property
    def name(self) -> str:
        return self.heading if self.heading is not None else PREAMBLE_NAME


@dataclass(frozen=True)
class SectionIndex:
    doc_id: str
    sections: tuple[Section, ...]

    def names(self) -> list[str]:
        return [s.name for s in self.sections]

    def text(self, body: str, section: Section) -> str:
        return body.encode("utf-8")[section.start : section.end].decode("utf-8")

    def find(self, name: str) -> Section | None:
        """First section whose name matches after token normalization."""
        want = normalize_text(name)
        for section in self.sections:
            if normalize_text(section.name) == want:
                return section
        return None


def index_sections(doc: Document) -> SectionIndex:
    """Segment a document into a flat list of heading-delimited spans.

    A section opens at each line matching 1-6 leading ``#`` followed by a
    space and runs to the next heading or end of body. Text before the
    first heading forms a preamble section; a body with no headings is a
    single preamble. Nested heading levels do not nest sections. The spans
    partition the encoded body exactly.
    """
    sections: list[Section] = []
    cur_start = 0
    cur_heading: str | None = None
    offset = 0
    for line in doc.body.splitlines(keepends=True):
        match = ATX_HEADING.match(line.rstrip("\r\n"))
        if match:
            if offset > cur_start:
                sections.append(Section(cur_heading, cur_start, offset))
            cur_heading = match.group(2).strip()
            cur_start = offset
        offset += len(line.encode("utf-8"))
    total = len(doc.body.encode("utf-8"))
    sections.append(Section(cur_heading, cur_start, total))
    return SectionIndex(doc.doc_id, tuple(sections))


@dataclass(frozen=True)
class WeightedQuery:
    """A mined query with a 0-100 likelihood weight."""

    text: str
    weight: int

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("query text must be non-empty")
        if not 0 <= self.weight <= 100:
            raise ValueError(f"query weight must be in 0..100, got {self.weight}")


@dataclass(frozen=True)
class QuerySet:
    doc_id: str
    entries: tuple[WeightedQuery, ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("query set must hold at least one query")
        seen: set[str] = set()
        for entry in self.entries:
            key = normalize_text(entry.text)
            if key in seen:
                raise ValueError(f"duplicate query after normalization: {entry.text!r}")
            seen.add(key)


@dataclass(frozen=True)
class EditRequest:
    """One revision suggestion tied to a source query.

    ``anchor`` is the best character span for ``excerpt`` in the source
    body; ``locatable`` is False when no acceptable span was found (the
    request is kept and flagged, never silently dropped).
    """

    query_index: int
    request_index: int
    excerpt: str
    suggestion: str
    necessity: int
    global_priority: float | None = None
    anchor: tuple[int, int] | None = None
    anchor_score: float = 0.0
    locatable: bool = True

    def __post_init__(self) -> None:
        if not self.excerpt.strip():
            raise ValueError("excerpt must be non-empty")
        if not 0 <= self.necessity <= 100:
            raise ValueError(f"necessity must be in 0..100, got {self.necessity}")
        if self.global_priority is not None and not 0.0 <= self.global_priority <= 1.0:
            raise ValueError(f"global priority must be in [0, 1], got {self.global_priority}")


@dataclass(frozen=True)
class FusedInstruction:
    """A deduplicated, conflict-resolved instruction ready for planning."""

    id: str
    topic: str
    excerpt: str
    suggestion: str
    necessity: int
    provenance: tuple[tuple[int, int], ...]  # (query_index, request_index) pairs
    resolution: str = "kept"

    def __post_init__(self) -> None:
        if not self.provenance:
            raise ValueError(f"instruction {self.id!r} has empty provenance")
        if self.resolution not in RESOLUTIONS:
            raise ValueError(f"unknown resolution {self.resolution!r}")
        if not 0 <= self.necessity <= 100:
            raise ValueError(f"necessity must be in 0..100, got {self.necessity}")


@dataclass(frozen=True)
class BlueprintItem:
    section_name: str
    target_location: str
    modification_intent: str
    directives: tuple[str, ...]
    format_note: str = ""

    def __post_init__(self) -> None:
        if not self.section_name.strip():
            raise ValueError("blueprint item needs a section name")


@dataclass(frozen=True)
class Blueprint:
    """Ordered, section-mapped revision plan. May be empty (no-op)."""

    items: tuple[BlueprintItem, ...] = ()


@dataclass
class RunManifest:
    """Reproducibility envelope persisted next to run artifacts."""

    config: dict[str, object] = field(default_factory=dict)
    backend_id: str = ""
    seed: int | None = None
    tokens: dict[str, dict[str, int]] = field(default_factory=dict)
    started_at: str = ""
    finished_at: str | None = None
    artifact_paths: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def total_tokens(self) -> int:
        return sum(v.get("prompt", 0) + v.get("completion", 0) for v in self.tokens.values())

    def warn(self, message: str) -> None:
        self.warnings.append(message)

    def to_dict(self) -> dict[str, object]:
        return asdict(self)
