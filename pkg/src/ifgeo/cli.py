"""Command-line interface.

Subcommands: run (benchmark a method over a dataset), report (re-emit
reports for a run directory), diagnose-competition (per-query tuning
diagnostic) and validate-dataset.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .dataset import read_records
from .errors import ConfigError, FormatError, GatewayError, MissingArtifact
from .gateway import Gateway, HttpBackend
from .mock import MockBackend
from .pipeline import ABLATIONS, PipelineConfig
from .reports import emit_reports
from .runner import ExperimentConfig, method_names, run_experiment

log = logging.getLogger(__name__)


def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", choices=("mock", "http"), default="mock")
    parser.add_argument("--model", default=None, help="model name for the http backend")
    parser.add_argument("--cache-dir", default=None, help="completion cache directory")
    parser.add_argument("--token-budget", type=int, default=None)
    parser.add_argument("--seed", type=int, default=0)


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", required=True)
    parser.add_argument("--out", required=True, help="run directory to create")
    parser.add_argument("--n-queries", type=int, default=5)
    parser.add_argument("--n-suggestions", type=int, default=5)
    parser.add_argument("--tau", type=float, default=0.7)
    parser.add_argument("--temperature", type=float, default=0.2)
    parser.add_argument(
        "--ablation", action="append", choices=ABLATIONS, default=[], help="repeatable"
    )
    parser.add_argument("--strict-preservation", action="store_true")
    parser.add_argument("--sweep", default=None, help="comma-separated n-queries values")
    parser.add_argument("--strata", action="store_true")
    parser.add_argument("--sample", type=int, default=None, help="record sample size")
    parser.add_argument("--judge", action="store_true", help="also score with the LLM judge")
    parser.add_argument("--max-workers", type=int, default=4)
    parser.add_argument("--expected-queries", type=int, default=5)
    parser.add_argument("--expected-candidates", type=int, default=5)
    _add_backend_flags(parser)


def build_gateway(args: argparse.Namespace) -> Gateway:
    if args.backend == "mock":
        backend = MockBackend(args.seed)
    else:
        backend = HttpBackend(model=args.model)
    budget = args.token_budget
    if budget is None and os.environ.get("IFGEO_TOKEN_BUDGET"):
        budget = int(os.environ["IFGEO_TOKEN_BUDGET"])
    max_inflight = int(os.environ.get("IFGEO_MAX_INFLIGHT", "8"))
    return Gateway(
        backend, cache_dir=args.cache_dir, token_budget=budget, max_inflight=max_inflight
    )


def _experiment_config(args: argparse.Namespace, method: str) -> ExperimentConfig:
    sweep: tuple[int, ...] = ()
    if getattr(args, "sweep", None):
        sweep = tuple(int(part) for part in args.sweep.split(",") if part.strip())
    pipeline = PipelineConfig(
        n_queries=args.n_queries,
        n_suggestions=args.n_suggestions,
        tau=args.tau,
        temperature=args.temperature,
        ablation=frozenset(args.ablation),
        strict_preservation=args.strict_preservation,
    )
    return ExperimentConfig(
        method=method,
        pipeline=pipeline,
        sweep=sweep,
        strata=args.strata,
        sample_size=args.sample,
        seed=args.seed,
        judge=args.judge,
        max_workers=args.max_workers,
    )


def _cmd_run(args: argparse.Namespace) -> int:
    load = read_records(
        args.dataset,
        expected_queries=args.expected_queries,
        expected_candidates=args.expected_candidates,
    )
    if load.skipped:
        print(f"skipped {len(load.skipped)} invalid records", file=sys.stderr)
    if not load.records:
        print("no valid records in dataset", file=sys.stderr)
        return 1
    cfg = _experiment_config(args, args.method)
    gateway = build_gateway(args)
    run_dir = run_experiment(cfg, list(load.records), args.out, gateway)
    paths = emit_reports(run_dir)
    print(f"run complete: {len(load.records)} records, method {args.method}")
    print(f"run dir: {run_dir}")
    for path in paths:
        print(f"report: {path}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    for path in emit_reports(args.run_dir):
        print(f"report: {path}")
    return 0


def _cmd_diagnose(args: argparse.Namespace) -> int:
    args.method = "per_query_tune"
    args.sweep = None
    rc = _cmd_run(args)
    if rc == 0:
        competition_txt = os.path.join(args.out, "reports", "competition.txt")
        if os.path.isfile(competition_txt):
            with open(competition_txt, encoding="utf-8") as handle:
                print(handle.read(), end="")
    return rc


def _cmd_validate(args: argparse.Namespace) -> int:
    load = read_records(
        args.dataset,
        expected_queries=args.expected_queries,
        expected_candidates=args.expected_candidates,
    )
    print(f"valid records: {len(load.records)}")
    print(f"skipped records: {len(load.skipped)}")
    for skip in load.skipped:
        print(f"  line {skip.line}: {skip.reason}")
    return 0 if load.records else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ifgeo",
        description="Document optimization workbench for simulated generative engines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="benchmark one method over a dataset")
    run_p.add_argument("--method", default="ifgeo", choices=method_names())
    _add_run_flags(run_p)
    run_p.set_defaults(fn=_cmd_run)

    report_p = sub.add_parser("report", help="re-emit reports for a run directory")
    report_p.add_argument("--run-dir", required=True)
    report_p.set_defaults(fn=_cmd_report)

    diag_p = sub.add_parser(
        "diagnose-competition", help="run the per-query tuning diagnostic"
    )
    _add_run_flags(diag_p)
    diag_p.set_defaults(fn=_cmd_diagnose)

    val_p = sub.add_parser("validate-dataset", help="check a dataset file")
    val_p.add_argument("--dataset", required=True)
    val_p.add_argument("--expected-queries", type=int, default=5)
    val_p.add_argument("--expected-candidates", type=int, default=5)
    val_p.set_defaults(fn=_cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("IFGEO_LOG", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FormatError, MissingArtifact, GatewayError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
