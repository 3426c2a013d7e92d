"""Stage output schemas and tolerant structured-output extraction."""

from __future__ import annotations

import json
import logging
import re

import jsonschema

from .errors import ParseError, SchemaError

log = logging.getLogger(__name__)

# Stages whose completions are consumed as plain text, not JSON.
TEXT_STAGES = frozenset({"revise", "heuristic", "engine"})

MINING_SCHEMA = {
    "type": "object",
    "required": ["queries"],
    "properties": {
        "queries": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["query", "probability"],
                "properties": {
                    "query": {"type": "string", "minLength": 1},
                    "probability": {"type": "number"},
                },
            },
        }
    },
}

REQUEST_SCHEMA = {
    "type": "object",
    "required": ["suggestions"],
    "properties": {
        "suggestions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["excerpt", "suggestion", "necessity"],
                "properties": {
                    "excerpt": {"type": "string", "minLength": 1},
                    "suggestion": {"type": "string"},
                    "necessity": {"type": "number"},
                },
            },
        }
    },
}

DEDUP_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["id", "excerpt", "suggestion", "necessity"],
        "properties": {
            "id": {"type": "string", "minLength": 1},
            "topic": {"type": "string"},
            "excerpt": {"type": "string", "minLength": 1},
            "suggestion": {"type": "string"},
            "necessity": {"type": "number"},
        },
    },
}

CONFLICT_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["id", "excerpt", "suggestion"],
        "properties": {
            "id": {"type": "string", "minLength": 1},
            "excerpt": {"type": "string", "minLength": 1},
            "suggestion": {"type": "string"},
            "necessity": {"type": "number"},
        },
    },
}

BLUEPRINT_SCHEMA = {
    "type": "object",
    "required": ["revision_blueprint"],
    "properties": {
        "revision_blueprint": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["section_name", "directives"],
                "properties": {
                    "section_name": {"type": "string", "minLength": 1},
                    "target_location": {"type": "string"},
                    "modification_intent": {"type": "string"},
                    "directives": {"type": "array", "items": {"type": "string"}},
                    "format_note": {"type": "string"},
                },
            },
        }
    },
}

JUDGE_DIMENSIONS = (
    "relevance",
    "influence",
    "uniqueness",
    "diversity",
    "followup",
    "position",
    "count",
)

JUDGE_SCHEMA = {
    "type": "object",
    "required": list(JUDGE_DIMENSIONS),
    "properties": {dim: {"type": "number"} for dim in JUDGE_DIMENSIONS},
}

STAGE_SCHEMAS: dict[str, dict] = {
    "mining": MINING_SCHEMA,
    "request_gen": REQUEST_SCHEMA,
    "dedup": DEDUP_SCHEMA,
    "conflict": CONFLICT_SCHEMA,
    "blueprint": BLUEPRINT_SCHEMA,
    "judge": JUDGE_SCHEMA,
}

_JSON_START = re.compile(r"[\[{]")


def strip_fences(text: str) -> str:
    """Drop a single wrapping markdown code fence, if present."""
    s = text.strip()
    if s.startswith("```"):
        lines = s.splitlines()
        if lines and lines[0].startswith("```"):
            lines = lines[1:]
        if lines and lines[-1].strip() == "```":
            lines = lines[:-1]
        s = "\n".join(lines)
    return s.strip()


def _first_payload(text: str):
    """Parse the first complete top-level JSON object or array in ``text``."""
    decoder = json.JSONDecoder()
    for match in _JSON_START.finditer(text):
        try:
            value, _ = decoder.raw_decode(text, match.start())
        except ValueError:
            continue
        if isinstance(value, (dict, list)):
            return value
    raise ParseError("no JSON object or array found in completion text")


def _clamp_int(value, lo: int, hi: int, label: str) -> int:
    result = int(round(float(value)))
    if result < lo or result > hi:
        log.warning("%s=%r outside [%d, %d]; clamped", label, value, lo, hi)
        result = min(hi, max(lo, result))
    return result


def _clamp_stage(payload, stage_id: str):
    if stage_id == "mining":
        for item in payload.get("queries", []):
            item["probability"] = _clamp_int(item["probability"], 0, 100, "probability")
    elif stage_id == "request_gen":
        for item in payload.get("suggestions", []):
            item["necessity"] = _clamp_int(item["necessity"], 0, 100, "necessity")
    elif stage_id in ("dedup", "conflict"):
        for item in payload:
            if "necessity" in item:
                item["necessity"] = _clamp_int(item["necessity"], 0, 100, "necessity")
    elif stage_id == "judge":
        for dim in JUDGE_DIMENSIONS:
            payload[dim] = _clamp_int(payload[dim], 1, 5, dim)
    return payload


def extract_structured(raw_text: str, stage_id: str):
    """Turn a raw completion into the stage's payload.

    Text stages get fence-stripped text back. JSON stages get the first
    parseable top-level object/array, validated against the stage schema
    (SchemaError carries the offending path) and with out-of-range scores
    clamped into bounds under a logged warning.
    """
    if stage_id in TEXT_STAGES:
        text = strip_fences(raw_text)
        if not text:
            raise ParseError(f"stage {stage_id} returned empty text")
        return text
    payload = _first_payload(raw_text)
    schema = STAGE_SCHEMAS.get(stage_id)
    if schema is not None:
        try:
            jsonschema.validate(payload, schema)
        except jsonschema.ValidationError as exc:
            raise SchemaError(exc.message, tuple(exc.absolute_path)) from exc
    return _clamp_stage(payload, stage_id)
