"""Selective content reduction: sentence windowing, query-similarity scoring,
top-window selection with context extension, and score-based reordering.

Sentence splitting is intentionally naive: a terminator (. ! ?) followed by
whitespace or end of text ends a sentence, so abbreviations like "Dr." split.
Token counts throughout are whitespace-delimited tokens.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from ecovector.core import Metric, distance


_BOUNDARY = re.compile(r"(?<=[.!?])(?=\s|$)")


@dataclass(frozen=True)
class ScrParams:
    sliding_window_size: int = 3
    overlap_size: int = 2
    context_extension_size: int = 1

    def __post_init__(self):
        if self.sliding_window_size < 1:
            raise ValueError("sliding_window_size must be >= 1")
        if not 0 <= self.overlap_size < self.sliding_window_size:
            raise ValueError("overlap_size must satisfy 0 <= overlap < window size")
        if self.context_extension_size < 0:
            raise ValueError("context_extension_size must be >= 0")

    @property
    def merged_segment_length(self) -> int:
        return self.sliding_window_size + 2 * self.context_extension_size


@dataclass(frozen=True)
class RetrievedDocument:
    """A document handed to reduction, in retrieval order."""

    doc_id: int
    title: str
    text: str


@dataclass(frozen=True)
class ScoredWindow:
    doc_id: int
    sentence_range: tuple[int, int]  # inclusive indices
    score: float


@dataclass(frozen=True)
class ReducedDocument:
    doc_id: int
    text: str
    best_score: float
    source_ranges: tuple[tuple[int, int], ...] = field(default_factory=tuple)


def whitespace_tokens(text: str) -> int:
    return len(text.split())


def split_sentences(text: str) -> list[str]:
    """Terminator-followed-by-whitespace splitting; trimmed, empties dropped."""
    parts = _BOUNDARY.split(text)
    return [p.strip() for p in parts if p.strip()]


def make_windows(sentences: list[str], params: ScrParams) -> list[tuple[int, int]]:
    """Inclusive (start, end) sentence ranges; step = window - overlap.

    A document shorter than one window yields a single covering range, and a
    final partial window picks up any uncovered tail.
    """
    n = len(sentences)
    if n == 0:
        return []
    w = params.sliding_window_size
    if n <= w:
        return [(0, n - 1)]
    step = w - params.overlap_size
    windows = [(start, start + w - 1) for start in range(0, n - w + 1, step)]
    if windows[-1][1] < n - 1:
        windows.append((windows[-1][0] + step, n - 1))
    return windows


def score_windows(
    query_vec: np.ndarray,
    sentences: list[str],
    windows: list[tuple[int, int]],
    embedder,
    doc_id: int = 0,
) -> list[ScoredWindow]:
    """Embed each window's concatenated text once; cosine similarity to query."""
    texts = [" ".join(sentences[a : b + 1]) for a, b in windows]
    if not texts:
        return []
    vectors = embedder.embed(texts)
    scored = []
    for (a, b), vec in zip(windows, vectors):
        similarity = 1.0 - distance(query_vec, vec, Metric.COSINE)
        scored.append(ScoredWindow(doc_id, (a, b), float(similarity)))
    return scored


def select_and_merge(
    doc: RetrievedDocument,
    scored_windows: list[ScoredWindow],
    params: ScrParams,
    sentences: list[str] | None = None,
) -> ReducedDocument:
    """Keep the best-scoring window (ties to the earlier range), extended by
    context_extension_size sentences on each side.

    Extension clamped at a document edge is borrowed by the other side, so the
    merged segment always spans window length + 2*extension sentences (capped
    by the document itself); the segment length never depends on where the
    best window sits.
    """
    if not scored_windows:
        raise ValueError("select_and_merge needs at least one scored window")
    if sentences is None:
        sentences = split_sentences(doc.text)
    best = min(scored_windows, key=lambda sw: (-sw.score, sw.sentence_range[0]))
    a, b = best.sentence_range
    e = params.context_extension_size
    last = len(sentences) - 1
    right = min(last, b + e + max(0, e - a))
    left = max(0, a - e - max(0, b + e - last))
    return ReducedDocument(
        doc_id=doc.doc_id,
        text=" ".join(sentences[left : right + 1]),
        best_score=best.score,
        source_ranges=((left, right),),
    )


def reorder(reduced_docs: list[ReducedDocument]) -> list[ReducedDocument]:
    """Descending best_score; stable, so ties keep retrieval order."""
    return sorted(reduced_docs, key=lambda r: -r.best_score)


def run_scr(
    query_vec: np.ndarray,
    docs: list[RetrievedDocument],
    params: ScrParams,
    embedder,
) -> list[ReducedDocument]:
    """Full reduction over retrieved documents, reordered by best score.

    A document with no sentences reduces to empty text with the floor score
    so it sorts last without being dropped.
    """
    reduced = []
    for doc in docs:
        sentences = split_sentences(doc.text)
        if not sentences:
            reduced.append(ReducedDocument(doc.doc_id, "", -1.0))
            continue
        windows = make_windows(sentences, params)
        scored = score_windows(query_vec, sentences, windows, embedder, doc.doc_id)
        reduced.append(select_and_merge(doc, scored, params, sentences))
    return reorder(reduced)
