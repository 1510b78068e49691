"""BM25 inverted index: the lexical leg of the ensemble retriever.

Scoring uses the non-negative IDF variant ln(1 + (N - df + 0.5)/(df + 0.5))
with k1=0.9, b=0.4 defaults. No stemming; an optional stopword set can be
supplied at build time and is applied to queries too (off by default).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from kgi.corpus import Passage, retrieval_text
from kgi.errors import ValidationError
from kgi.rerank import ScoredCandidate
from kgi.tokenization import tokenize

__all__ = ["SparseIndex", "build_sparse_index", "sparse_search", "tokenize"]

INDEX_FILE = "sparse_index.json"


@dataclass
class SparseIndex:
    """Immutable after build; safe for concurrent searches."""

    postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    avg_doc_length: float
    n_docs: int
    k1: float = 0.9
    b: float = 0.4
    stopwords: frozenset[str] = field(default_factory=frozenset)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        if df == 0:
            return 0.0
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))


def build_sparse_index(
    passages: Iterable[Passage],
    k1: float = 0.9,
    b: float = 0.4,
    stopwords: Iterable[str] = (),
) -> SparseIndex:
    """Index the title-prepended text of every passage.

    Postings are sorted by pid so builds are deterministic regardless of
    input order. An empty corpus yields a searchable index that returns
    nothing.
    """
    if k1 <= 0:
        raise ValidationError(f"k1 must be > 0, got {k1}")
    if not 0 <= b <= 1:
        raise ValidationError(f"b must be in [0, 1], got {b}")
    stopword_set = frozenset(stopwords)

    postings: dict[str, dict[str, int]] = {}
    doc_lengths: dict[str, int] = {}
    for passage in passages:
        tokens = [t for t in tokenize(retrieval_text(passage)) if t not in stopword_set]
        doc_lengths[passage.pid] = len(tokens)
        for token in tokens:
            term_postings = postings.setdefault(token, {})
            term_postings[passage.pid] = term_postings.get(passage.pid, 0) + 1

    sorted_postings = {
        term: sorted(by_pid.items()) for term, by_pid in sorted(postings.items())
    }
    n_docs = len(doc_lengths)
    avg = sum(doc_lengths.values()) / n_docs if n_docs else 0.0
    return SparseIndex(
        postings=sorted_postings,
        doc_lengths=doc_lengths,
        avg_doc_length=avg,
        n_docs=n_docs,
        k1=k1,
        b=b,
        stopwords=stopword_set,
    )


def sparse_search(index: SparseIndex, query_text: str, k: int) -> list[ScoredCandidate]:
    """Rank passages by BM25 against the query.

    Only passages sharing at least one term with the query appear. The sum
    runs over unique query terms in order of first appearance; ties break by
    pid ascending for full determinism.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if index.n_docs == 0:
        return []

    query_terms = []
    seen = set()
    for token in tokenize(query_text):
        if token not in seen and token not in index.stopwords:
            seen.add(token)
            query_terms.append(token)

    scores: dict[str, float] = {}
    for term in query_terms:
        term_postings = index.postings.get(term)
        if not term_postings:
            continue
        idf = index.idf(term)
        for pid, tf in term_postings:
            length_norm = 1.0 - index.b + index.b * index.doc_lengths[pid] / index.avg_doc_length
            contribution = idf * tf * (index.k1 + 1.0) / (tf + index.k1 * length_norm)
            scores[pid] = scores.get(pid, 0.0) + contribution

    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))[:k]
    return [
        ScoredCandidate(pid=pid, retriever_score=score, source="sparse", retriever_rank=rank)
        for rank, (pid, score) in enumerate(ranked, start=1)
    ]


def save_sparse_index(index: SparseIndex, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = {
        "k1": index.k1,
        "b": index.b,
        "n_docs": index.n_docs,
        "avg_doc_length": index.avg_doc_length,
        "doc_lengths": index.doc_lengths,
        "postings": {term: [[pid, tf] for pid, tf in plist] for term, plist in index.postings.items()},
        "stopwords": sorted(index.stopwords),
    }
    with (directory / INDEX_FILE).open("w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True, separators=(",", ":"))


def load_sparse_index(directory: str | Path) -> SparseIndex:
    with (Path(directory) / INDEX_FILE).open("r", encoding="utf-8") as handle:
        payload = json.load(handle)
    return SparseIndex(
        postings={
            term: [(pid, tf) for pid, tf in plist] for term, plist in payload["postings"].items()
        },
        doc_lengths=payload["doc_lengths"],
        avg_doc_length=payload["avg_doc_length"],
        n_docs=payload["n_docs"],
        k1=payload["k1"],
        b=payload["b"],
        stopwords=frozenset(payload.get("stopwords", ())),
    )
