"""Deployment-facing path: batch-score SP candidates for a page of ads, pick
the top k per ad, render the refined title under a display-character budget,
and measure latency."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Ad, Query, UserRepr, Vocabulary
from .network import NetworkParams, predict_sp_scores


@dataclass(frozen=True)
class ExhibitionConfig:
    k: int = 2
    budget: int = 28
    emphasis: bool = True
    open_marker: str = "【"
    close_marker: str = "】"
    ellipsis: str = "…"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.emphasis and (not self.open_marker or not self.close_marker):
            raise ValueError("emphasis markers must be non-empty")


@dataclass(frozen=True)
class RefinedResult:
    ad_id: int
    chosen_sps: tuple[str, ...]
    display_string: str
    scores: tuple[float, ...]


def select_top_k(scores: Sequence[float], k: int) -> list[int]:
    """Indices of the k highest scores, descending; ties keep input order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(scores) == 0:
        raise ValueError("no candidates to select from")
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    return [int(i) for i in order[:k]]


def refine_title(title: str, sps: Sequence[str], config: ExhibitionConfig) -> str:
    """Chosen SPs first (each wrapped in the emphasis markers, or separated by
    single spaces when emphasis is off), then as much of the title as fits.

    Length is counted in display characters, one per character including each
    marker. Trailing SPs that do not fit are dropped; truncation consumes the
    budget exactly, so no ellipsis is ever appended in this counting mode.
    """
    if not sps:
        raise ValueError("no SPs to exhibit")
    per_sp_extra = (len(config.open_marker) + len(config.close_marker)
                    if config.emphasis else 1)
    kept: list[str] = []
    used = 0
    for sp in sps:
        cost = len(sp) + per_sp_extra
        if used + cost > config.budget:
            break
        kept.append(sp)
        used += cost
    if not kept:
        raise ValueError(
            f"first SP ({sps[0]!r}) does not fit display budget {config.budget}")
    remaining = config.budget - used
    title_part = title[:remaining]
    if config.emphasis:
        return "".join(f"{config.open_marker}{sp}{config.close_marker}" for sp in kept) + title_part
    if title_part:
        return " ".join(kept) + " " + title_part
    return " ".join(kept)


def render_phrase(phrase, vocab: Vocabulary) -> str:
    """Display form of an SP phrase: its keyword terms joined by hyphens."""
    return "-".join(vocab.term_of(i) for i in sorted(phrase))


def render_title(title_keywords: Sequence[int], vocab: Vocabulary) -> str:
    return " ".join(vocab.term_of(i) for i in title_keywords)


def score_page(params: NetworkParams, vocab: Vocabulary, user: UserRepr,
               query: Query, ads: Sequence[Ad], config: ExhibitionConfig
               ) -> tuple[list[RefinedResult], float]:
    """Score all candidate SPs on a page, refine each ad's title, and report
    wall-clock time for the page (parameter load excluded).

    Scores depend only on (user, query, phrase): a phrase repeated across ads
    is scored once per page and shares its score.
    """
    start = time.perf_counter()
    if not ads:
        return [], time.perf_counter() - start
    unique: dict[tuple[int, ...], int] = {}
    for ad in ads:
        for sp in ad.sp_candidates:
            key = tuple(sorted(sp))
            if key not in unique:
                unique[key] = len(unique)
    phrases = list(unique)
    scores = predict_sp_scores(params, user, query, phrases)
    results: list[RefinedResult] = []
    for ad in ads:
        cand_scores = [float(scores[unique[tuple(sorted(sp))]]) for sp in ad.sp_candidates]
        chosen = select_top_k(cand_scores, config.k)
        sp_strings = [render_phrase(ad.sp_candidates[i], vocab) for i in chosen]
        display = refine_title(render_title(ad.title_keywords, vocab), sp_strings, config)
        results.append(RefinedResult(
            ad_id=ad.ad_id, chosen_sps=tuple(sp_strings), display_string=display,
            scores=tuple(cand_scores[i] for i in chosen)))
    return results, time.perf_counter() - start


@dataclass
class BenchmarkResult:
    latencies_ms: list[float]
    p50_ms: float
    p95_ms: float
    p99_ms: float
    pages_per_second: float

    def to_csv_rows(self) -> list[list]:
        return [["p50_ms", "p95_ms", "p99_ms", "pages_per_second", "n_pages"],
                [f"{self.p50_ms:.3f}", f"{self.p95_ms:.3f}", f"{self.p99_ms:.3f}",
                 f"{self.pages_per_second:.2f}", len(self.latencies_ms)]]


def benchmark_pages(params: NetworkParams, vocab: Vocabulary,
                    pages: Sequence[tuple[UserRepr, Query, Sequence[Ad]]],
                    config: ExhibitionConfig) -> BenchmarkResult:
    """Latency percentiles over per-page wall-clock scoring times."""
    if not pages:
        raise ValueError("no pages to benchmark")
    latencies = []
    for user, query, ads in pages:
        _, elapsed = score_page(params, vocab, user, query, ads, config)
        latencies.append(elapsed * 1000.0)
    arr = np.asarray(latencies)
    total_s = arr.sum() / 1000.0
    return BenchmarkResult(
        latencies_ms=latencies,
        p50_ms=float(np.percentile(arr, 50)),
        p95_ms=float(np.percentile(arr, 95)),
        p99_ms=float(np.percentile(arr, 99)),
        pages_per_second=len(latencies) / total_s if total_s > 0 else float("inf"))
