"""Document optimization workbench for simulated generative engines.

Optimizes web documents for visibility inside citation-attributed
answers: a diverge-then-converge LLM pipeline proposes and fuses edits
across a set of mined queries, a simulated engine scores documents
before and after, and risk-aware stability metrics summarize whether
gains on some queries cost visibility on others.
"""

from .dataset import BenchRecord, DatasetLoad, load_dataset, read_records
from .engine import CandidateSet, EngineResponse, Sentence, generate_response, parse_citations, retrieve
from .gateway import Completion, Gateway, HttpBackend, PromptSpec, TokenMeter
from .heuristics import DISPLAY_NAMES, STRATEGIES, apply_heuristic
from .mock import MockBackend
from .model import (
    Blueprint,
    BlueprintItem,
    Document,
    EditRequest,
    FusedInstruction,
    QuerySet,
    RunManifest,
    Section,
    SectionIndex,
    WeightedQuery,
    index_sections,
)
from .pipeline import (
    ABLATIONS,
    Pipeline,
    PipelineArtifacts,
    PipelineConfig,
    PreservationReport,
    RevisionResult,
    TuneResult,
    check_preservation,
    lift_requests,
    prioritize_and_filter,
    score_requests,
    validate_provenance,
)
from .reports import emit_reports
from .runner import ExperimentConfig, method_names, run_experiment
from .stability import (
    AggregationSpec,
    CompetitionReport,
    GainVector,
    PopulationStats,
    StabilityReport,
    aggregate,
    competition_stats,
    gain_vector,
    stability_summary,
    summarize_documents,
)
from .visibility import (
    SubjectiveScore,
    VisibilityScore,
    impression_profile,
    match_moments,
    objective_impression,
    subjective_impression,
)

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS",
    "AggregationSpec",
    "BenchRecord",
    "Blueprint",
    "BlueprintItem",
    "CandidateSet",
    "CompetitionReport",
    "Completion",
    "DISPLAY_NAMES",
    "DatasetLoad",
    "Document",
    "EditRequest",
    "EngineResponse",
    "ExperimentConfig",
    "FusedInstruction",
    "GainVector",
    "Gateway",
    "HttpBackend",
    "MockBackend",
    "Pipeline",
    "PipelineArtifacts",
    "PipelineConfig",
    "PopulationStats",
    "PreservationReport",
    "PromptSpec",
    "QuerySet",
    "RevisionResult",
    "RunManifest",
    "STRATEGIES",
    "Section",
    "SectionIndex",
    "Sentence",
    "StabilityReport",
    "SubjectiveScore",
    "TokenMeter",
    "TuneResult",
    "VisibilityScore",
    "WeightedQuery",
    "aggregate",
    "apply_heuristic",
    "check_preservation",
    "competition_stats",
    "emit_reports",
    "gain_vector",
    "generate_response",
    "impression_profile",
    "index_sections",
    "lift_requests",
    "load_dataset",
    "match_moments",
    "method_names",
    "objective_impression",
    "parse_citations",
    "prioritize_and_filter",
    "read_records",
    "retrieve",
    "run_experiment",
    "score_requests",
    "stability_summary",
    "subjective_impression",
    "summarize_documents",
    "validate_provenance",
]
