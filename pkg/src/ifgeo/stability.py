"""Risk-aware cross-query stability metrics.

For one document, the gain vector holds the visibility delta per query.
The summary reports the mean, the (population) variance, the worst-case
single-query gain, the win-trial ratio (share of queries with gain >= 0)
and the downside risk (mean squared negative part). WCP >= 0, WTR = 1
and DR = 0 are three faces of the same event: no query lost visibility.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import LengthMismatch

AGGREGATION_KINDS = ("mean", "min", "custom")


@dataclass(frozen=True)
class GainVector:
    doc_id: str
    gains: tuple[float, ...]
    weights: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if not self.gains:
            raise ValueError("gain vector must hold at least one entry")
        if not all(np.isfinite(self.gains)):
            raise ValueError(f"non-finite gain in {self.doc_id}: {self.gains}")
        if self.weights is not None and len(self.weights) != len(self.gains):
            raise LengthMismatch(
                f"{len(self.weights)} weights vs {len(self.gains)} gains for {self.doc_id}"
            )


def gain_vector(
    before: Sequence[float],
    after: Sequence[float],
    *,
    doc_id: str = "doc",
    weights: Sequence[int] | None = None,
) -> GainVector:
    """Per-query deltas after - before."""
    if len(before) != len(after):
        raise LengthMismatch(f"{len(before)} before vs {len(after)} after scores")
    gains = tuple(float(a) - float(b) for b, a in zip(before, after))
    return GainVector(doc_id, gains, tuple(weights) if weights is not None else None)


@dataclass(frozen=True)
class StabilityReport:
    mean: float
    variance: float
    wcp: float  # worst-case performance: min single-query gain
    wtr: float  # win-trial ratio in [0, 1]; zero gain counts as a win
    dr: float  # downside risk: mean squared negative gain
    per_document: bool
    count: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.wtr <= 1.0:
            raise ValueError(f"wtr outside [0, 1]: {self.wtr}")
        if self.dr < 0.0:
            raise ValueError(f"dr must be >= 0: {self.dr}")

    def to_dict(self) -> dict[str, float]:
        return {
            "mean": self.mean,
            "variance": self.variance,
            "wcp": self.wcp,
            "wtr": self.wtr,
            "dr": self.dr,
            "count": self.count,
        }


def stability_summary(gains: GainVector, *, sample_variance: bool = False) -> StabilityReport:
    a = np.asarray(gains.gains, dtype=float)
    if sample_variance:
        variance = float(a.var(ddof=1)) if a.size > 1 else 0.0
    else:
        variance = float(a.var())
    return StabilityReport(
        mean=float(a.mean()),
        variance=variance,
        wcp=float(a.min()),
        wtr=float((a >= 0.0).mean()),
        dr=float((np.minimum(a, 0.0) ** 2).mean()),
        per_document=True,
        count=int(a.size),
    )


def summarize_documents(reports: Iterable[StabilityReport]) -> StabilityReport:
    """Field-wise average across per-document reports."""
    items = list(reports)
    if not items:
        raise ValueError("no stability reports to summarize")
    n = len(items)
    return StabilityReport(
        mean=sum(r.mean for r in items) / n,
        variance=sum(r.variance for r in items) / n,
        wcp=sum(r.wcp for r in items) / n,
        wtr=sum(r.wtr for r in items) / n,
        dr=sum(r.dr for r in items) / n,
        per_document=False,
        count=n,
    )


@dataclass(frozen=True)
class AggregationSpec:
    kind: str = "mean"
    fn: Callable[[tuple[float, ...]], float] | None = None

    def __post_init__(self) -> None:
        if self.kind not in AGGREGATION_KINDS:
            raise ValueError(f"unknown aggregation {self.kind!r}")
        if self.kind == "custom" and self.fn is None:
            raise ValueError("custom aggregation needs fn")


def aggregate(gains: GainVector, spec: AggregationSpec = AggregationSpec()) -> float:
    if spec.kind == "mean":
        return float(np.mean(gains.gains))
    if spec.kind == "min":
        return float(np.min(gains.gains))
    assert spec.fn is not None
    return float(spec.fn(gains.gains))


@dataclass(frozen=True)
class PopulationStats:
    mean: float
    p_negative: float
    dm: float  # expected downside magnitude E[-min(0, x)]
    count: int


@dataclass(frozen=True)
class CompetitionReport:
    """Per-query tuning diagnostic over target/non-target/spillover populations.

    One record contributes its target-query gain to ``target``, every
    other query's gain to ``non_target``, and per-pair relative gains
    (non-target minus target) to ``spillover``.
    """

    target: PopulationStats
    non_target: PopulationStats
    spillover: PopulationStats
    records: int


def _population(values: list[float]) -> PopulationStats:
    if not values:
        return PopulationStats(0.0, 0.0, 0.0, 0)
    a = np.asarray(values, dtype=float)
    return PopulationStats(
        mean=float(a.mean()),
        p_negative=float((a < 0.0).mean()),
        dm=float(np.maximum(-a, 0.0).mean()),
        count=int(a.size),
    )


def competition_stats(
    gain_vectors: Sequence[GainVector], targets: Sequence[int]
) -> CompetitionReport:
    if len(gain_vectors) != len(targets):
        raise LengthMismatch(f"{len(gain_vectors)} gain vectors vs {len(targets)} targets")
    target_vals: list[float] = []
    non_vals: list[float] = []
    spill_vals: list[float] = []
    for gv, target in zip(gain_vectors, targets):
        if not 0 <= target < len(gv.gains):
            raise ValueError(f"target index {target} outside gain vector of {gv.doc_id}")
        t_gain = gv.gains[target]
        target_vals.append(t_gain)
        for j, gain in enumerate(gv.gains):
            if j == target:
                continue
            non_vals.append(gain)
            spill_vals.append(gain - t_gain)
    return CompetitionReport(
        target=_population(target_vals),
        non_target=_population(non_vals),
        spillover=_population(spill_vals),
        records=len(gain_vectors),
    )
