"""Shared fixtures: a tiny corpus with known answers and a pipeline over it."""

from __future__ import annotations

import pytest

from kgi.corpus import Passage
from kgi.embedding import HashedBowEmbedder
from kgi.generator import ExtractiveGenerator
from kgi.hnsw import build_dense_index
from kgi.rerank import LexicalOverlapReranker
from kgi.sparse import build_sparse_index
from kgi.tasks import Pipeline
from kgi.tokenization import tokenize


def passage(pid: str, title: str, text: str) -> Passage:
    doc_id = pid.rsplit("::", 1)[0]
    return Passage(
        pid=pid, doc_id=doc_id, title=title, text=text, token_count=len(tokenize(text))
    )


def toy_corpus() -> list[Passage]:
    return [
        passage(
            "P1::0",
            "Elizabeth Cromwell",
            "Oliver Cromwell was the spouse of Elizabeth Cromwell",
        ),
        passage(
            "P2::0",
            "Slovenia",
            "Slovenia uses the euro. Slovenia joined the eurozone in 2007.",
        ),
        passage(
            "P3::0",
            "France",
            "Paris is the capital of France and its largest city.",
        ),
        passage(
            "P4::0",
            "Nordic countries",
            "Denmark, Iceland, Finland, Norway and Sweden are all Nordic countries. "
            "Iceland has a small population.",
        ),
        passage(
            "P5::0",
            "Facebook",
            "Facebook is an online social media service. It was launched on "
            "February 4, 2004 . Facebook was founded by Mark Zuckerberg.",
        ),
    ]


def make_pipeline(passages: list[Passage], model=None, **knobs) -> Pipeline:
    by_pid = {p.pid: p for p in passages}
    sparse = build_sparse_index(passages)
    embedder = HashedBowEmbedder(dim=128)
    dense = build_dense_index(passages, embedder, seed=11)
    return Pipeline(
        resolve=by_pid.__getitem__,
        sparse=sparse,
        dense=dense,
        embedder=embedder,
        reranker=LexicalOverlapReranker(sparse.idf),
        model=model if model is not None else ExtractiveGenerator(),
        **knobs,
    )


@pytest.fixture
def toy_passages() -> list[Passage]:
    return toy_corpus()


@pytest.fixture
def toy_pipeline(toy_passages) -> Pipeline:
    return make_pipeline(toy_passages)
