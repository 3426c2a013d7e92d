from __future__ import annotations

import json

from conftest import make_document
from ifgeo import prompts
from ifgeo.mock import MockBackend
from ifgeo.model import Document, index_sections


def test_same_prompt_same_seed_same_bytes():
    spec = prompts.mining_spec(make_document(0).body, 5)
    a = MockBackend(4).send(spec)
    b = MockBackend(4).send(spec)
    assert a.raw_text == b.raw_text
    assert a.prompt_tokens == b.prompt_tokens


def test_different_seed_changes_scores():
    spec = prompts.mining_spec(make_document(0).body, 5)
    a = json.loads(MockBackend(1).send(spec).raw_text)
    b = json.loads(MockBackend(2).send(spec).raw_text)
    probs_a = [q["probability"] for q in a["queries"]]
    probs_b = [q["probability"] for q in b["queries"]]
    assert probs_a != probs_b


def test_mining_respects_count_and_score_range():
    for n in (1, 5, 13):
        spec = prompts.mining_spec(make_document(1).body, n)
        payload = json.loads(MockBackend(0).send(spec).raw_text)
        assert len(payload["queries"]) == n
        for item in payload["queries"]:
            assert 60 <= item["probability"] <= 95
        texts = [q["query"] for q in payload["queries"]]
        assert len(set(texts)) == n


def test_request_gen_quotes_document_lines():
    doc = make_document(2)
    spec = prompts.request_spec(doc.body, "how does paddle work", 5)
    payload = json.loads(MockBackend(0).send(spec).raw_text)
    assert len(payload["suggestions"]) == 5
    for item in payload["suggestions"]:
        assert item["excerpt"] in doc.body
        assert 60 <= item["necessity"] <= 95
        assert "how does paddle work" in item["suggestion"]


def test_dedup_drops_low_necessity_and_keeps_max():
    groups = [
        {
            "query_index": 0,
            "query": "q0",
            "weight": 80,
            "requests": [
                {"request_index": 0, "excerpt": "Shared excerpt line.", "suggestion": "a", "necessity": 70},
                {"request_index": 1, "excerpt": "shared excerpt line.", "suggestion": "b", "necessity": 90},
                {"request_index": 2, "excerpt": "Too weak to keep.", "suggestion": "c", "necessity": 40},
            ],
        }
    ]
    payload = json.loads(MockBackend(0).send(prompts.dedup_spec(groups)).raw_text)
    assert len(payload) == 1
    assert payload[0]["necessity"] == 90
    assert "a" in payload[0]["suggestion"] and "b" in payload[0]["suggestion"]


def test_conflict_selects_on_gap_and_synthesizes_otherwise():
    items = [
        {"id": "s1", "topic": "t", "excerpt": "Same spot.", "suggestion": "strong", "necessity": 90},
        {"id": "s2", "topic": "t", "excerpt": "same spot.", "suggestion": "weak", "necessity": 60},
        {"id": "s3", "topic": "t", "excerpt": "Other spot.", "suggestion": "x", "necessity": 80},
        {"id": "s4", "topic": "t", "excerpt": "other spot.", "suggestion": "y", "necessity": 75},
    ]
    payload = json.loads(MockBackend(0).send(prompts.conflict_spec(items)).raw_text)
    by_id = {item["id"]: item for item in payload}
    assert "s1" in by_id  # 90 vs 60: selection keeps the stronger
    assert "s3+s4" in by_id  # 80 vs 75: synthesis joins ids
    assert "Balance the following needs" in by_id["s3+s4"]["suggestion"]


def test_revision_touches_only_targeted_sections():
    doc = make_document(3)
    index = index_sections(doc)
    excerpt = "Measure twice before changing any variable."
    items = [{"id": "s1", "excerpt": excerpt, "suggestion": "Add a worked example."}]
    spec = prompts.revise_flat_spec(doc.body, items)
    revised = MockBackend(0).send(spec).raw_text
    new_index = index_sections(Document(doc.doc_id, revised))
    assert new_index.names() == index.names()
    orig = doc.body.encode("utf-8")
    new = revised.encode("utf-8")
    for old_s, new_s in zip(index.sections, new_index.sections):
        old_bytes = orig[old_s.start : old_s.end]
        new_bytes = new[new_s.start : new_s.end]
        if old_s.name == "Preparation Steps":
            assert old_bytes != new_bytes
            assert b"Add a worked example." in new_bytes
        else:
            assert old_bytes == new_bytes


def test_engine_answer_length_is_monotone_in_overlap():
    bodies = ["espresso extraction espresso extraction details", "unrelated filler text page"]
    spec = prompts.engine_spec("espresso extraction", bodies)
    text = MockBackend(0).send(spec).raw_text
    assert "[1]" in text and "[2]" in text
    first, second = text.split("[1].")
    assert len(first.split()) > len(second.split())


def test_judge_scores_within_rubric_range():
    spec = prompts.judge_spec("q", "Answer words [1]. More [1].", 1, "doc body")
    payload = json.loads(MockBackend(5).send(spec).raw_text)
    assert set(payload) == {
        "relevance",
        "influence",
        "uniqueness",
        "diversity",
        "followup",
        "position",
        "count",
    }
    for value in payload.values():
        assert 1 <= value <= 5
    assert payload["influence"] == 3  # 1 + two [1] hits
    assert payload["count"] == 5  # min(5, 1 + 2*2)


def test_heuristic_appends_strategy_mark():
    doc = make_document(4)
    for strategy in prompts.HEURISTIC_STRATEGIES:
        spec = prompts.heuristic_spec(strategy, doc.body)
        out = MockBackend(0).send(spec).raw_text
        assert out.startswith(doc.body)
        assert len(out) > len(doc.body)
