"""Benchmark orchestration: run one method over a dataset and persist results.

A run directory holds manifest.json (config, backend, seed, token
accounting), aggregate.json (per-group metric summaries) and one
directory per record with gains.json plus method artifacts. Evaluation
always uses the record's query cluster and candidate sets; optimization
queries for the pipeline method are mined from the document itself.
"""

from __future__ import annotations

import json
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

from .dataset import BenchRecord
from .engine import CandidateSet, generate_response
from .errors import ConfigError
from .gateway import Gateway, TokenMeter
from .heuristics import STRATEGIES, apply_heuristic
from .model import Document, QuerySet, WeightedQuery
from .pipeline import Pipeline, PipelineConfig
from .stability import (
    GainVector,
    StabilityReport,
    competition_stats,
    stability_summary,
    summarize_documents,
)
from .schemas import JUDGE_DIMENSIONS
from .visibility import (
    SubjectiveScore,
    impression_profile,
    match_moments,
    objective_impression,
    subjective_impression,
)

log = logging.getLogger(__name__)

_KEY_RE = re.compile(r"[^A-Za-z0-9_.-]+")


def method_names() -> list[str]:
    return ["ifgeo", "per_query_tune"] + [f"heuristic:{s}" for s in STRATEGIES]


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "ifgeo"
    pipeline: PipelineConfig = PipelineConfig()
    sweep: tuple[int, ...] = ()  # n_queries values; empty = single group
    strata: bool = False
    sample_size: int | None = None
    seed: int = 0
    judge: bool = False
    max_workers: int = 4

    def __post_init__(self) -> None:
        object.__setattr__(self, "sweep", tuple(self.sweep))
        if self.method not in method_names():
            raise ConfigError(f"unknown method {self.method!r}; expected one of {method_names()}")
        if any(n < 1 for n in self.sweep):
            raise ConfigError("sweep values must be >= 1")
        if self.sample_size is not None and self.sample_size < 1:
            raise ConfigError("sample_size must be >= 1")
        if self.max_workers < 1:
            raise ConfigError("max_workers must be >= 1")
        if self.method == "per_query_tune" and self.sweep:
            raise ConfigError("per_query_tune does not take an n_queries sweep")

    def describe(self) -> dict[str, object]:
        return {
            "method": self.method,
            "pipeline": self.pipeline.describe(),
            "sweep": list(self.sweep),
            "strata": self.strata,
            "sample_size": self.sample_size,
            "seed": self.seed,
            "judge": self.judge,
            "max_workers": self.max_workers,
        }


@dataclass(frozen=True)
class EvalPoint:
    raw: float
    share: float
    word: float
    position: float
    subjective: SubjectiveScore | None = None


@dataclass
class RecordOutcome:
    doc_id: str
    group: str
    origin_rank: int | None
    queries: tuple[str, ...]
    target_index: int | None = None
    before: list[EvalPoint] | None = None
    after: list[EvalPoint] | None = None
    tokens: dict | None = None
    artifacts: dict | None = None
    revised_body: str | None = None
    error: str | None = None

    def share_gains(self) -> list[float]:
        assert self.before is not None and self.after is not None
        return [a.share - b.share for b, a in zip(self.before, self.after)]

    def stability(self) -> StabilityReport:
        return stability_summary(GainVector(self.doc_id, tuple(self.share_gains())))


def _substitute(docs: Sequence[Document], revised: Document) -> tuple[Document, ...]:
    return tuple(revised if d.doc_id == revised.doc_id else d for d in docs)


def _evaluate(
    query: str,
    docs: Sequence[Document],
    target_position: int,
    gateway: Gateway,
    *,
    temperature: float,
    judge: bool,
    meter: TokenMeter,
) -> EvalPoint:
    candidates = CandidateSet(query, tuple(docs), target_position)
    response = generate_response(query, candidates, gateway, temperature=temperature, meter=meter)
    doc_index = target_position + 1
    vis = objective_impression(response, doc_index)
    profile = impression_profile(response, doc_index)
    subjective = None
    if judge:
        subjective = subjective_impression(
            response, docs[target_position], doc_index, gateway, meter=meter
        )
    return EvalPoint(vis.raw, vis.share, profile["word"], profile["position"], subjective)


def _apply_method(
    record: BenchRecord,
    cfg: ExperimentConfig,
    pipeline_cfg: PipelineConfig,
    gateway: Gateway,
    meter: TokenMeter,
) -> tuple[Document, dict | None, int | None]:
    doc = record.document
    if cfg.method == "ifgeo":
        artifacts = Pipeline(gateway, pipeline_cfg).run(doc, meter)
        assert artifacts.revised is not None
        return artifacts.revised, artifacts.to_dict(), None
    if cfg.method == "per_query_tune":
        query_set = QuerySet(doc.doc_id, tuple(WeightedQuery(q, 100) for q in record.queries))
        rng = random.Random(f"{cfg.seed}:{doc.doc_id}")
        target = rng.randrange(len(record.queries))
        tune = Pipeline(gateway, pipeline_cfg).per_query_tune(doc, query_set, target, meter)
        payload = {
            "doc_id": doc.doc_id,
            "target_index": target,
            "target_query": record.queries[target],
            "pool_size": len(tune.pool),
            "revised_body": tune.document.body,
        }
        return tune.document, payload, target
    strategy = cfg.method.split(":", 1)[1]
    revised = apply_heuristic(
        doc, strategy, gateway, temperature=pipeline_cfg.temperature, meter=meter
    )
    return revised, {"strategy": strategy, "revised_body": revised.body}, None


def _process_record(
    record: BenchRecord,
    cfg: ExperimentConfig,
    pipeline_cfg: PipelineConfig,
    gateway: Gateway,
    group: str,
) -> RecordOutcome:
    meter = TokenMeter()
    outcome = RecordOutcome(
        doc_id=record.doc_id,
        group=group,
        origin_rank=record.document.origin_rank,
        queries=record.queries,
    )
    try:
        before = [
            _evaluate(
                query,
                record.candidates_for(i),
                record.target_position,
                gateway,
                temperature=pipeline_cfg.temperature,
                judge=cfg.judge,
                meter=meter,
            )
            for i, query in enumerate(record.queries)
        ]
        revised, artifacts, target_index = _apply_method(record, cfg, pipeline_cfg, gateway, meter)
        after = [
            _evaluate(
                query,
                _substitute(record.candidates_for(i), revised),
                record.target_position,
                gateway,
                temperature=pipeline_cfg.temperature,
                judge=cfg.judge,
                meter=meter,
            )
            for i, query in enumerate(record.queries)
        ]
        outcome.before = before
        outcome.after = after
        outcome.artifacts = artifacts
        outcome.revised_body = revised.body
        outcome.target_index = target_index
    except Exception as exc:  # quarantine; one bad record must not sink the run
        log.warning("record %s quarantined: %s: %s", record.doc_id, type(exc).__name__, exc)
        outcome.error = f"{type(exc).__name__}: {exc}"
    outcome.tokens = meter.snapshot()
    return outcome


def _sample(records: Sequence[BenchRecord], size: int | None, seed: int) -> list[BenchRecord]:
    if size is None or size >= len(records):
        return list(records)
    rng = random.Random(seed)
    picked = sorted(rng.sample(range(len(records)), size))
    return [records[i] for i in picked]


def _subjective_payload(point: EvalPoint) -> dict | None:
    if point.subjective is None:
        return None
    return {"average": point.subjective.average, "dims": point.subjective.as_dict()}


def _eval_payload(point: EvalPoint) -> dict:
    return {
        "raw": point.raw,
        "share": point.share,
        "word": point.word,
        "position": point.position,
        "subjective": _subjective_payload(point),
    }


def _aggregate_group(
    label: str, outcomes: list[RecordOutcome], cfg: ExperimentConfig
) -> tuple[dict, dict[str, list[float]]]:
    ok = [o for o in outcomes if o.error is None]
    reports = [o.stability() for o in ok]
    objective = summarize_documents(reports).to_dict() if reports else None

    def profile_mean(attr: str) -> float:
        deltas = [
            getattr(a, attr) - getattr(b, attr) for o in ok for b, a in zip(o.before, o.after)
        ]
        return sum(deltas) / len(deltas) if deltas else 0.0

    profile_pp = {
        "word": profile_mean("word") * 100.0,
        "position": profile_mean("position") * 100.0,
        "overall": profile_mean("share") * 100.0,
    }

    subjective = None
    subjective_dims_pp = None
    per_record_subj: dict[str, list[float]] = {}
    if cfg.judge and ok:
        obj_deltas = [g for o in ok for g in o.share_gains()]
        avg_deltas = [
            a.subjective.average - b.subjective.average
            for o in ok
            for b, a in zip(o.before, o.after)
        ]
        normalized = match_moments(avg_deltas, obj_deltas)
        cursor = 0
        subj_reports = []
        for o in ok:
            n = len(o.queries)
            slice_ = normalized[cursor : cursor + n]
            cursor += n
            per_record_subj[o.doc_id] = slice_
            subj_reports.append(stability_summary(GainVector(o.doc_id, tuple(slice_))))
        subjective = summarize_documents(subj_reports).to_dict()
        subjective_dims_pp = {}
        for i, dim in enumerate(JUDGE_DIMENSIONS):
            dim_deltas = [
                a.subjective.scores[i] - b.subjective.scores[i]
                for o in ok
                for b, a in zip(o.before, o.after)
            ]
            dim_norm = match_moments(dim_deltas, obj_deltas)
            subjective_dims_pp[dim] = (sum(dim_norm) / len(dim_norm)) * 100.0 if dim_norm else 0.0

    strata = None
    if cfg.strata:
        strata = {}
        buckets: dict[str, list[RecordOutcome]] = {}
        for o in ok:
            key = f"rank_{o.origin_rank}" if o.origin_rank is not None else "rank_unknown"
            buckets.setdefault(key, []).append(o)
        for key in sorted(buckets):
            strata[key] = {
                "records": len(buckets[key]),
                "objective": summarize_documents([o.stability() for o in buckets[key]]).to_dict(),
            }

    competition = None
    if cfg.method == "per_query_tune" and ok:
        vectors = [GainVector(o.doc_id, tuple(o.share_gains())) for o in ok]
        targets = [o.target_index for o in ok]
        report = competition_stats(vectors, targets)
        competition = {
            "records": report.records,
            "target": vars(report.target),
            "non_target": vars(report.non_target),
            "spillover": vars(report.spillover),
        }

    tokens = TokenMeter()
    for o in outcomes:
        tokens.merge(o.tokens or {})

    group = {
        "records": len(outcomes),
        "failed": len(outcomes) - len(ok),
        "survival": len(ok) / len(outcomes) if outcomes else 0.0,
        "objective": objective,
        "profile_pp": profile_pp,
        "subjective": subjective,
        "subjective_dims_pp": subjective_dims_pp,
        "strata": strata,
        "competition": competition,
        "tokens": tokens.snapshot(),
    }
    return group, per_record_subj


def _record_key(doc_id: str, label: str, multi_group: bool) -> str:
    base = _KEY_RE.sub("_", doc_id)
    if not multi_group:
        return base
    return f"{base}__{_KEY_RE.sub('', label)}"


def _dump_json(path: Path, payload: object) -> None:
    path.write_text(
        json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def _gains_payload(outcome: RecordOutcome, subj_norm: list[float] | None) -> dict:
    payload = {
        "doc_id": outcome.doc_id,
        "group": outcome.group,
        "origin_rank": outcome.origin_rank,
        "queries": list(outcome.queries),
        "target_index": outcome.target_index,
        "error": outcome.error,
        "tokens": outcome.tokens,
    }
    if outcome.error is None:
        gains = outcome.share_gains()
        payload.update(
            {
                "before": [_eval_payload(p) for p in outcome.before],
                "after": [_eval_payload(p) for p in outcome.after],
                "gains_share": gains,
                "gains_pp": [g * 100.0 for g in gains],
                "stability": outcome.stability().to_dict(),
                "subjective_normalized": subj_norm,
            }
        )
    return payload


def run_experiment(
    cfg: ExperimentConfig,
    records: Sequence[BenchRecord],
    out_dir: str | Path,
    gateway: Gateway,
    *,
    clock: Callable[[], str] = _utcnow,
) -> Path:
    """Run the configured method over the records; returns the run directory."""
    out = Path(out_dir)
    records_dir = out / "records"
    records_dir.mkdir(parents=True, exist_ok=True)
    chosen = _sample(records, cfg.sample_size, cfg.seed)
    if not chosen:
        raise ConfigError("no records to run")
    started = clock()

    if cfg.sweep:
        groups = [(f"n={n}", replace(cfg.pipeline, n_queries=n)) for n in cfg.sweep]
    else:
        groups = [("main", cfg.pipeline)]

    outcome_map: dict[str, list[RecordOutcome]] = {}
    for label, pipeline_cfg in groups:
        with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
            futures = [
                pool.submit(_process_record, record, cfg, pipeline_cfg, gateway, label)
                for record in chosen
            ]
            outcomes = [f.result() for f in futures]
        outcomes.sort(key=lambda o: o.doc_id)
        outcome_map[label] = outcomes

    aggregate: dict = {"groups": {}}
    total_tokens = TokenMeter()
    warnings: list[str] = []
    multi_group = len(groups) > 1
    for label, outcomes in outcome_map.items():
        group_agg, per_record_subj = _aggregate_group(label, outcomes, cfg)
        aggregate["groups"][label] = group_agg
        for o in outcomes:
            total_tokens.merge(o.tokens or {})
            if o.error:
                warnings.append(f"{label}/{o.doc_id}: {o.error}")
            key = _record_key(o.doc_id, label, multi_group)
            rdir = records_dir / key
            rdir.mkdir(parents=True, exist_ok=True)
            _dump_json(rdir / "gains.json", _gains_payload(o, per_record_subj.get(o.doc_id)))
            if o.artifacts is not None:
                _dump_json(rdir / "artifacts.json", o.artifacts)
            if o.error is not None:
                _dump_json(rdir / "error.json", {"doc_id": o.doc_id, "error": o.error})

    manifest = {
        "config": cfg.describe(),
        "backend_id": gateway.backend.backend_id,
        "seed": cfg.seed,
        "started_at": started,
        "finished_at": clock(),
        "tokens": total_tokens.snapshot(),
        "records": {"available": len(records), "sampled": len(chosen)},
        "survival": {label: aggregate["groups"][label]["survival"] for label in aggregate["groups"]},
        "cache_hits": gateway.cache_hits,
        "artifact_paths": {"aggregate": "aggregate.json", "records": "records"},
        "warnings": warnings,
    }
    _dump_json(out / "aggregate.json", aggregate)
    _dump_json(out / "manifest.json", manifest)
    return out
