"""Visibility scoring of one candidate document inside an engine answer.

The objective score sums, over the sentences citing the document,
word_count * decay(position), with positions 0-based and the decay
horizon set to the sentence count. The share normalizes that mass over
all candidates. The subjective score asks a judge model for seven 1-5
dimension scores; deltas of the two tracks are made comparable by
rescaling to matched moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import prompts
from .engine import EngineResponse
from .gateway import Gateway, TokenMeter
from .model import Document
from .schemas import JUDGE_DIMENSIONS


def exp_decay(position: int, total: int) -> float:
    return math.exp(-position / total)


def linear_decay(position: int, total: int) -> float:
    return max(0.0, 1.0 - position / total)


def uniform_decay(position: int, total: int) -> float:
    return 1.0


DECAYS: dict[str, Callable[[int, int], float]] = {
    "exp": exp_decay,
    "linear": linear_decay,
    "uniform": uniform_decay,
}


@dataclass(frozen=True)
class VisibilityScore:
    doc_index: int  # 1-based candidate index
    raw: float
    share: float


@dataclass(frozen=True)
class SubjectiveScore:
    scores: tuple[float, ...]  # aligned with JUDGE_DIMENSIONS

    def __post_init__(self) -> None:
        if len(self.scores) != len(JUDGE_DIMENSIONS):
            raise ValueError(f"expected {len(JUDGE_DIMENSIONS)} dimension scores")

    @property
    def average(self) -> float:
        return sum(self.scores) / len(self.scores)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(JUDGE_DIMENSIONS, self.scores))


def _decay_fn(decay: str | Callable[[int, int], float]) -> Callable[[int, int], float]:
    if callable(decay):
        return decay
    try:
        return DECAYS[decay]
    except KeyError:
        raise ValueError(f"unknown decay {decay!r}; expected one of {sorted(DECAYS)}") from None


def raw_masses(
    response: EngineResponse,
    *,
    decay: str | Callable[[int, int], float] = "exp",
    count_words: bool = True,
) -> list[float]:
    """Positional-decay citation mass per candidate (index 0 = candidate 1)."""
    fn = _decay_fn(decay)
    total = len(response.sentences)
    masses = [0.0] * response.n_candidates
    for position, sentence in enumerate(response.sentences):
        if not sentence.cited:
            continue
        weight = (sentence.word_count if count_words else 1.0) * fn(position, total)
        for k in sentence.cited:
            masses[k - 1] += weight
    return masses


def objective_impression(
    response: EngineResponse,
    doc_index: int,
    *,
    decay: str | Callable[[int, int], float] = "exp",
) -> VisibilityScore:
    """Raw mass and share for one candidate. Share is 0 when nothing is cited."""
    if not 1 <= doc_index <= response.n_candidates:
        raise ValueError(f"doc_index {doc_index} outside 1..{response.n_candidates}")
    masses = raw_masses(response, decay=decay)
    denom = sum(masses)
    raw = masses[doc_index - 1]
    return VisibilityScore(doc_index, raw, raw / denom if denom > 0 else 0.0)


def impression_profile(response: EngineResponse, doc_index: int) -> dict[str, float]:
    """Three share variants: word (no decay), position (unit weight), overall."""
    if not 1 <= doc_index <= response.n_candidates:
        raise ValueError(f"doc_index {doc_index} outside 1..{response.n_candidates}")

    def share(masses: list[float]) -> float:
        denom = sum(masses)
        return masses[doc_index - 1] / denom if denom > 0 else 0.0

    return {
        "word": share(raw_masses(response, decay="uniform")),
        "position": share(raw_masses(response, decay="exp", count_words=False)),
        "overall": share(raw_masses(response, decay="exp")),
    }


def subjective_impression(
    response: EngineResponse,
    doc: Document,
    doc_index: int,
    gateway: Gateway,
    *,
    temperature: float = 0.0,
    meter: TokenMeter | None = None,
) -> SubjectiveScore:
    """Seven-dimension judge rating of the document's visibility in the answer."""
    if not 1 <= doc_index <= response.n_candidates:
        raise ValueError(f"doc_index {doc_index} outside 1..{response.n_candidates}")
    spec = prompts.judge_spec(
        response.query, response.text, doc_index, doc.body, temperature=temperature
    )
    payload, _ = gateway.complete_structured(spec, meter)
    return SubjectiveScore(tuple(float(payload[dim]) for dim in JUDGE_DIMENSIONS))


def match_moments(values: Sequence[float], reference: Sequence[float]) -> list[float]:
    """Rescale ``values`` to carry the mean and spread of ``reference``.

    Population moments on both sides. A degenerate spread (all values
    equal, or empty reference) collapses to the reference mean.
    """
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        return []
    r = np.asarray(list(reference), dtype=float)
    ref_mean = float(r.mean()) if r.size else 0.0
    ref_std = float(r.std()) if r.size else 0.0
    v_std = float(v.std())
    if v_std == 0.0 or ref_std == 0.0:
        return [ref_mean] * v.size
    return [float(x) for x in (v - v.mean()) / v_std * ref_std + ref_mean]
