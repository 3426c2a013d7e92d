"""JSONL benchmark dataset loading, validation and round-trip."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import FormatError, InvariantError
from .model import Document
from .textutil import normalize_text

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchRecord:
    """One target document with its query cluster and candidate sets.

    ``candidates`` is shared across the cluster's queries unless
    ``candidates_by_query`` (one list per query) is present. The target
    document sits at ``target_position`` in every candidate list.
    """

    document: Document
    queries: tuple[str, ...]
    candidates: tuple[Document, ...]
    target_position: int
    candidates_by_query: tuple[tuple[Document, ...], ...] | None = None

    @property
    def doc_id(self) -> str:
        return self.document.doc_id

    def candidates_for(self, query_index: int) -> tuple[Document, ...]:
        if self.candidates_by_query is not None:
            return self.candidates_by_query[query_index]
        return self.candidates


@dataclass(frozen=True)
class SkippedRecord:
    line: int
    reason: str


@dataclass(frozen=True)
class DatasetLoad:
    records: tuple[BenchRecord, ...]
    skipped: tuple[SkippedRecord, ...]


def _parse_documents(raw, label: str, expected: int, target_id: str, target_body: str, target_position: int, origin_rank) -> tuple[Document, ...]:
    if not isinstance(raw, list) or len(raw) != expected:
        raise InvariantError(f"{label} must be a list of {expected} entries")
    docs = []
    for k, entry in enumerate(raw):
        if not isinstance(entry, dict) or not isinstance(entry.get("doc_id"), str) or not isinstance(entry.get("document"), str):
            raise InvariantError(f"{label}[{k}] must carry string doc_id and document")
        rank = origin_rank if k == target_position else None
        try:
            docs.append(Document(entry["doc_id"], entry["document"], rank))
        except ValueError as exc:
            raise InvariantError(f"{label}[{k}]: {exc}") from exc
    ids = [d.doc_id for d in docs]
    if len(set(ids)) != len(ids):
        raise InvariantError(f"{label} doc_ids are not distinct")
    if docs[target_position].doc_id != target_id:
        raise InvariantError(
            f"{label}[{target_position}] holds {docs[target_position].doc_id!r}, not the target"
        )
    if docs[target_position].body != target_body:
        raise InvariantError(f"{label}[{target_position}] body differs from the target document")
    return tuple(docs)


def _parse_record(obj: dict, expected_queries: int, expected_candidates: int) -> BenchRecord:
    if not isinstance(obj, dict):
        raise InvariantError("record must be a JSON object")
    doc_id = obj.get("doc_id")
    body = obj.get("document")
    if not isinstance(doc_id, str) or not doc_id:
        raise InvariantError("doc_id must be a non-empty string")
    if not isinstance(body, str) or not body:
        raise InvariantError("document must be a non-empty string")
    origin_rank = obj.get("origin_rank")
    if origin_rank is not None and (not isinstance(origin_rank, int) or not 1 <= origin_rank <= 5):
        raise InvariantError(f"origin_rank must be an int in 1..5, got {origin_rank!r}")

    queries = obj.get("queries")
    if not isinstance(queries, list) or len(queries) != expected_queries:
        raise InvariantError(f"queries must be a list of {expected_queries} strings")
    if not all(isinstance(q, str) and q.strip() for q in queries):
        raise InvariantError("every query must be a non-empty string")
    normalized = [normalize_text(q) for q in queries]
    if len(set(normalized)) != len(normalized):
        raise InvariantError("queries must be distinct after normalization")

    target_position = obj.get("target_position")
    if not isinstance(target_position, int) or not 0 <= target_position < expected_candidates:
        raise InvariantError(
            f"target_position must be an int in 0..{expected_candidates - 1}, got {target_position!r}"
        )

    try:
        document = Document(doc_id, body, origin_rank)
    except ValueError as exc:
        raise InvariantError(str(exc)) from exc

    candidates = _parse_documents(
        obj.get("candidates"), "candidates", expected_candidates, doc_id, body, target_position, origin_rank
    )

    by_query = None
    if obj.get("candidates_by_query") is not None:
        raw_lists = obj["candidates_by_query"]
        if not isinstance(raw_lists, list) or len(raw_lists) != expected_queries:
            raise InvariantError(f"candidates_by_query must hold {expected_queries} lists")
        by_query = tuple(
            _parse_documents(
                raw, f"candidates_by_query[{i}]", expected_candidates, doc_id, body, target_position, origin_rank
            )
            for i, raw in enumerate(raw_lists)
        )

    return BenchRecord(document, tuple(queries), candidates, target_position, by_query)


def read_records(
    path: str | Path, *, expected_queries: int = 5, expected_candidates: int = 5
) -> DatasetLoad:
    """Read a JSONL dataset.

    A line that is not valid JSON aborts with FormatError (the file is
    broken); a well-formed line violating a record invariant is skipped
    and counted. Duplicate doc_ids keep the first occurrence.
    """
    records: list[BenchRecord] = []
    skipped: list[SkippedRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise FormatError(str(exc), lineno) from exc
            try:
                record = _parse_record(obj, expected_queries, expected_candidates)
                if record.doc_id in seen:
                    raise InvariantError(f"duplicate doc_id {record.doc_id!r}")
            except InvariantError as exc:
                log.warning("line %d skipped: %s", lineno, exc)
                skipped.append(SkippedRecord(lineno, str(exc)))
                continue
            seen.add(record.doc_id)
            records.append(record)
    return DatasetLoad(tuple(records), tuple(skipped))


def load_dataset(
    path: str | Path, *, expected_queries: int = 5, expected_candidates: int = 5
) -> list[BenchRecord]:
    return list(
        read_records(
            path, expected_queries=expected_queries, expected_candidates=expected_candidates
        ).records
    )


def record_to_dict(record: BenchRecord) -> dict:
    out = {
        "doc_id": record.doc_id,
        "document": record.document.body,
        "queries": list(record.queries),
        "candidates": [{"doc_id": d.doc_id, "document": d.body} for d in record.candidates],
        "target_position": record.target_position,
    }
    if record.document.origin_rank is not None:
        out["origin_rank"] = record.document.origin_rank
    if record.candidates_by_query is not None:
        out["candidates_by_query"] = [
            [{"doc_id": d.doc_id, "document": d.body} for d in docs]
            for docs in record.candidates_by_query
        ]
    return out


def write_records(path: str | Path, records: Iterable[BenchRecord]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record_to_dict(record), ensure_ascii=False) + "\n")
