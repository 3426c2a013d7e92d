from __future__ import annotations

import json
from pathlib import Path

import pytest

import ifgeo.pipeline
from conftest import make_records
from ifgeo.errors import MissingArtifact
from ifgeo.gateway import Gateway
from ifgeo.mock import MockBackend
from ifgeo.pipeline import PipelineConfig
from ifgeo.reports import (
    REFERENCE_COMPARISON,
    REFERENCE_TOKENS,
    STAGE_ROWS,
    emit_reports,
)
from ifgeo.runner import ExperimentConfig, run_experiment

CLOCK = lambda: "2026-01-01T00:00:00+00:00"  # noqa: E731

PIPELINE_ROWS = [row for row, _ in STAGE_ROWS]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    import unittest.mock

    out = tmp_path_factory.mktemp("run")
    cfg = ExperimentConfig(pipeline=PipelineConfig(tau=0.5), judge=True)
    with unittest.mock.patch.object(ifgeo.pipeline, "_utcnow", CLOCK):
        run_experiment(cfg, make_records(2), out, Gateway(MockBackend(7)), clock=CLOCK)
    emit_reports(out)
    return out


def _json(run: Path, name: str) -> dict:
    return json.loads((run / "reports" / f"{name}.json").read_text())


def test_stage_rows_have_display_names():
    assert PIPELINE_ROWS == [
        "Query Mining",
        "Edit Request Generation",
        "Instruction Fusion",
        "Blueprint-Guided Revision",
    ]


def test_core_reports_emitted(run_dir):
    names = {p.name for p in (run_dir / "reports").iterdir()}
    assert {
        "comparison.json",
        "comparison.txt",
        "robustness.json",
        "robustness.txt",
        "tokens.json",
        "tokens.txt",
    } <= names
    assert "stratified.json" not in names  # no strata were requested
    assert "competition.json" not in names  # only per-query tuning emits it


def test_token_rows_and_exact_total(run_dir):
    tokens = _json(run_dir, "tokens")
    group = tokens["groups"]["main"]
    assert set(group["stages"]) == set(PIPELINE_ROWS)
    assert group["total"] == sum(group["stages"].values())
    assert group["records"] == 2
    for row in PIPELINE_ROWS:
        assert group["per_record"][row] == group["stages"][row] / 2
    text = (run_dir / "reports" / "tokens.txt").read_text()
    order = [text.index(row) for row in PIPELINE_ROWS + ["Total"]]
    assert order == sorted(order)  # table rows keep the pipeline order


def test_evaluation_overhead_kept_apart(run_dir):
    group = _json(run_dir, "tokens")["groups"]["main"]
    assert set(group["evaluation"]) == {"engine", "judge", "heuristic"}
    assert group["evaluation"]["engine"] > 0
    assert group["evaluation"]["judge"] > 0
    assert group["evaluation"]["heuristic"] == 0
    assert "engine" not in group["stages"]


def test_comparison_embeds_reference_values(run_dir):
    comparison = _json(run_dir, "comparison")
    assert comparison["reference"]["comparison"] == REFERENCE_COMPARISON
    assert "note" in comparison["reference"]
    text = (run_dir / "reports" / "comparison.txt").read_text()
    assert "11.03" in text
    tokens = _json(run_dir, "tokens")
    assert tokens["reference"]["tokens_per_record"] == REFERENCE_TOKENS


def test_robustness_report_carries_risk_fields(run_dir):
    robustness = _json(run_dir, "robustness")
    group = robustness["groups"]["main"]
    for field in ("mean", "variance", "wcp", "wtr", "dr"):
        assert field in group["objective"]
    text = (run_dir / "reports" / "robustness.txt").read_text()
    assert "wcp" in text.lower()


def test_reemit_is_byte_identical(run_dir):
    before = {
        p.name: p.read_bytes() for p in (run_dir / "reports").iterdir() if p.is_file()
    }
    emit_reports(run_dir)
    after = {
        p.name: p.read_bytes() for p in (run_dir / "reports").iterdir() if p.is_file()
    }
    assert before == after


def test_missing_artifacts_raise(tmp_path):
    with pytest.raises(MissingArtifact):
        emit_reports(tmp_path)


def test_stratified_and_competition_reports(tmp_path):
    import unittest.mock

    from test_runner import _ranked_record

    records = [_ranked_record(0, 1), _ranked_record(1, 2)]
    cfg = ExperimentConfig(
        method="per_query_tune", pipeline=PipelineConfig(tau=0.5), strata=True
    )
    with unittest.mock.patch.object(ifgeo.pipeline, "_utcnow", CLOCK):
        run_experiment(cfg, records, tmp_path, Gateway(MockBackend(7)), clock=CLOCK)
    paths = emit_reports(tmp_path)
    names = {p.name for p in paths}
    assert {"stratified.json", "stratified.txt", "competition.json", "competition.txt"} <= names

    stratified = json.loads((tmp_path / "reports" / "stratified.json").read_text())
    assert set(stratified["groups"]["main"]) == {"rank_1", "rank_2"}

    competition = json.loads((tmp_path / "reports" / "competition.json").read_text())
    group = competition["groups"]["main"]
    assert {"target", "non_target", "spillover"} <= set(group)
    assert "reference" in competition
    text = (tmp_path / "reports" / "competition.txt").read_text()
    assert "spillover" in text.lower()
