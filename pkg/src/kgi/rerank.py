"""Candidate fusion and reranking.

Sparse and dense retrievers score on incomparable scales, so merging never
compares scores across sources: lists are interleaved by rank, deduplicated
by pid, and the merged pool is re-scored by a reranker that reads only the
query and passage text. Any monotone transformation of either retriever's
scores therefore leaves the final ranking unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import httpx

from kgi.corpus import Passage, retrieval_text
from kgi.errors import TransportError, ValidationError
from kgi.tokenization import tokenize


@dataclass(frozen=True)
class ScoredCandidate:
    """A passage reference with its retriever-local score, pre-fusion."""

    pid: str
    retriever_score: float
    source: str  # "sparse" | "dense" | "both" (both only after merging)
    retriever_rank: int


@dataclass(frozen=True)
class RankedEvidence:
    pid: str
    rerank_score: float
    final_rank: int


class Reranker(Protocol):
    """Scores (query, passage text) pairs jointly; never sees retriever scores."""

    def score_batch(self, query: str, passages: Sequence[tuple[str, str]]) -> list[float]:
        """Return one score per (pid, text) pair, order-aligned."""
        ...


class LexicalOverlapReranker:
    """Deterministic fallback: sum over unique query terms of tf-in-passage x idf.

    idf is an optional term->weight callable (typically SparseIndex.idf);
    without one every term weighs 1.0, reducing to plain term-frequency
    overlap. Enables fully offline operation.
    """

    def __init__(self, idf: Callable[[str], float] | None = None):
        self._idf = idf

    def score_batch(self, query: str, passages: Sequence[tuple[str, str]]) -> list[float]:
        query_terms = sorted(set(tokenize(query)))
        scores = []
        for _, text in passages:
            counts: dict[str, int] = {}
            for token in tokenize(text):
                counts[token] = counts.get(token, 0) + 1
            total = 0.0
            for term in query_terms:
                tf = counts.get(term, 0)
                if tf:
                    total += tf * (self._idf(term) if self._idf else 1.0)
            scores.append(total)
        return scores


class RemoteReranker:
    """Client for a remote cross-scorer.

    Protocol: POST {query, passages:[{pid, text}]} -> {scores:[...]},
    order-aligned with the request.
    """

    def __init__(
        self,
        endpoint: str,
        timeout: float = 30.0,
        attempts: int = 2,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.timeout = timeout
        self.attempts = attempts
        self._client = httpx.Client(transport=transport, timeout=timeout)

    def score_batch(self, query: str, passages: Sequence[tuple[str, str]]) -> list[float]:
        payload = {
            "query": query,
            "passages": [{"pid": pid, "text": text} for pid, text in passages],
        }
        last_error: Exception | None = None
        for _ in range(self.attempts):
            try:
                response = self._client.post(self.endpoint, content=json.dumps(payload))
                response.raise_for_status()
                scores = response.json()["scores"]
                if len(scores) != len(passages):
                    raise TransportError(
                        f"reranker returned {len(scores)} scores for {len(passages)} passages",
                        endpoint=self.endpoint,
                        attempts=self.attempts,
                    )
                return [float(s) for s in scores]
            except TransportError:
                raise
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_error = exc
        raise TransportError(
            f"reranker unreachable after {self.attempts} attempts: {last_error}",
            endpoint=self.endpoint,
            attempts=self.attempts,
            cause=last_error,
        )


def merge_candidates(
    sparse_list: Sequence[ScoredCandidate],
    dense_list: Sequence[ScoredCandidate],
    n_total: int,
) -> list[ScoredCandidate]:
    """Union the two candidate lists, interleaved by rank.

    Order is sparse rank 1, dense rank 1, sparse rank 2, ... truncated to
    n_total after deduplication. A pid present in both lists keeps the
    score and rank of its first appearance and is tagged source="both".
    Retriever scores are carried through but never compared across sources.
    """
    if n_total < 1:
        raise ValidationError(f"n_total must be >= 1, got {n_total}")

    merged: dict[str, ScoredCandidate] = {}
    order: list[str] = []
    for i in range(max(len(sparse_list), len(dense_list))):
        for lst in (sparse_list, dense_list):
            if i >= len(lst):
                continue
            candidate = lst[i]
            if candidate.pid in merged:
                existing = merged[candidate.pid]
                if existing.source != candidate.source:
                    merged[candidate.pid] = ScoredCandidate(
                        pid=existing.pid,
                        retriever_score=existing.retriever_score,
                        source="both",
                        retriever_rank=existing.retriever_rank,
                    )
            else:
                merged[candidate.pid] = candidate
                order.append(candidate.pid)
    return [merged[pid] for pid in order[:n_total]]


def rerank(
    query: str,
    candidates: Sequence[ScoredCandidate],
    reranker: Reranker,
    k: int,
    resolve: Callable[[str], Passage],
    fallback: Reranker | None = None,
) -> list[RankedEvidence]:
    """Re-score the merged pool and keep the top k.

    The output ordering is a pure function of the query, the passage texts
    and the candidate pid set: ties break by pid ascending. A transport
    failure propagates unless a fallback reranker was explicitly configured.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if not candidates:
        return []

    pairs = [(c.pid, retrieval_text(resolve(c.pid))) for c in candidates]
    try:
        scores = reranker.score_batch(query, pairs)
    except TransportError:
        if fallback is None:
            raise
        scores = fallback.score_batch(query, pairs)

    ranked = sorted(zip(pairs, scores), key=lambda item: (-item[1], item[0][0]))[:k]
    return [
        RankedEvidence(pid=pid, rerank_score=score, final_rank=rank)
        for rank, ((pid, _), score) in enumerate(ranked, start=1)
    ]
