"""Task adapters and the end-to-end retrieve, rerank, generate pipeline.

Each task has a fixed query serialization; the pipeline itself is
task-agnostic: both retrievers run, candidates are fused by rank,
reranked, and the top passages condition generation. Cross-examination
runs several task formulations of one information need and reports
whether the answers agree and how much evidence they share.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from kgi.corpus import Passage, doc_id_of_pid
from kgi.embedding import Embedder
from kgi.errors import ConfigurationError, KgiError, TransportError, ValidationError
from kgi.generator import GeneratedOutput, GeneratorModel, format_context, generate
from kgi.hnsw import HnswIndex, dense_search
from kgi.metrics import normalize_answer
from kgi.rerank import RankedEvidence, Reranker, ScoredCandidate, merge_candidates, rerank
from kgi.sparse import SparseIndex, sparse_search

QUERY_SEPARATOR = " [SEP] "
DIALOG_TURN_SEPARATOR = " * "


class TaskKind(str, enum.Enum):
    slot_filling = "slot_filling"
    fact_checking = "fact_checking"
    dialog = "dialog"
    question_answering = "question_answering"


@dataclass(frozen=True)
class TaskResult:
    task: TaskKind
    query_text: str
    outputs: tuple[GeneratedOutput, ...]
    evidence: tuple[RankedEvidence, ...]
    candidates: tuple[ScoredCandidate, ...]
    closed_book: bool


@dataclass(frozen=True)
class CrossExamReport:
    results: dict[TaskKind, TaskResult]
    answer_agreement: bool
    evidence_overlap: float


class GenerationUnavailable(KgiError):
    """Generation backend failed after retrieval succeeded.

    Carries the reranked evidence so callers can still show a
    retrieval-only result.
    """

    def __init__(
        self,
        message: str,
        *,
        task: TaskKind,
        query_text: str,
        evidence: tuple[RankedEvidence, ...],
        cause: Exception | None = None,
    ):
        super().__init__(message)
        self.task = task
        self.query_text = query_text
        self.evidence = evidence
        self.cause = cause


def format_task_input(task: TaskKind, raw_fields: Mapping[str, object]) -> str:
    """Serialize task input fields into the task's query convention.

    slot_filling: head and relation joined by " [SEP] ". fact_checking:
    the claim verbatim. question_answering: the question verbatim.
    dialog: turn texts joined by " * " in chronological order.
    """
    task = TaskKind(task)
    if task is TaskKind.slot_filling:
        head = _require_str(raw_fields, "head")
        relation = _require_str(raw_fields, "relation")
        return f"{head}{QUERY_SEPARATOR}{relation}"
    if task is TaskKind.fact_checking:
        return _require_str(raw_fields, "claim")
    if task is TaskKind.question_answering:
        return _require_str(raw_fields, "question")
    turns = raw_fields.get("turns")
    if not isinstance(turns, Sequence) or isinstance(turns, (str, bytes)) or not turns:
        raise ValidationError("dialog input requires field 'turns': a non-empty list")
    rendered = []
    for turn in turns:
        if not isinstance(turn, str) or not turn:
            raise ValidationError("field 'turns' must contain non-empty strings")
        rendered.append(turn)
    return DIALOG_TURN_SEPARATOR.join(rendered)


def _require_str(raw_fields: Mapping[str, object], name: str) -> str:
    value = raw_fields.get(name)
    if not isinstance(value, str) or not value:
        raise ValidationError(f"missing or empty field {name!r}")
    return value


@dataclass
class Pipeline:
    """Everything a task run needs: indexes, reranker, generation model.

    n_sparse and n_dense candidates are fused into at most n_total, the
    reranker keeps k_evidence passages, and the model returns n_best
    outputs conditioned on them.
    """

    resolve: Callable[[str], Passage]
    sparse: SparseIndex
    dense: HnswIndex
    embedder: Embedder
    reranker: Reranker
    model: GeneratorModel
    rerank_fallback: Reranker | None = None
    n_sparse: int = 12
    n_dense: int = 12
    n_total: int = 24
    k_evidence: int = 5
    n_best: int = 1
    ef_search: int = 128

    def __post_init__(self):
        for name in ("resolve", "sparse", "dense", "embedder", "reranker", "model"):
            if getattr(self, name) is None:
                raise ConfigurationError(f"pipeline is missing {name!r}")
        for name in ("n_sparse", "n_dense", "n_total", "k_evidence", "n_best"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")


def run_pipeline(task: TaskKind, query_text: str, pipeline: Pipeline) -> TaskResult:
    """Retrieve from both indexes, fuse, rerank, and generate.

    Empty indexes degrade to a closed-book run. A generation transport
    failure is re-raised as GenerationUnavailable with the reranked
    evidence attached.
    """
    task = TaskKind(task)
    if not query_text:
        raise ValidationError("query text must be non-empty")

    sparse_hits = sparse_search(pipeline.sparse, query_text, pipeline.n_sparse)
    if len(pipeline.dense):
        query_vector = pipeline.embedder.embed(query_text)
        dense_hits = dense_search(
            pipeline.dense,
            query_vector,
            pipeline.n_dense,
            ef_search=max(pipeline.ef_search, pipeline.n_dense),
        )
    else:
        dense_hits = []
    candidates = merge_candidates(sparse_hits, dense_hits, pipeline.n_total)
    evidence = rerank(
        query_text,
        candidates,
        pipeline.reranker,
        pipeline.k_evidence,
        pipeline.resolve,
        fallback=pipeline.rerank_fallback,
    )
    passages = [pipeline.resolve(e.pid) for e in evidence]
    conditioned = format_context(query_text, passages, task)
    try:
        outputs = generate(pipeline.model, conditioned, pipeline.n_best)
    except TransportError as exc:
        raise GenerationUnavailable(
            f"generation failed: {exc}",
            task=task,
            query_text=query_text,
            evidence=tuple(evidence),
            cause=exc,
        )
    return TaskResult(
        task=task,
        query_text=query_text,
        outputs=tuple(outputs),
        evidence=tuple(evidence),
        candidates=tuple(candidates),
        closed_book=conditioned.closed_book,
    )


def cross_examine(
    formulations: Mapping[TaskKind, Mapping[str, object]], pipeline: Pipeline
) -> CrossExamReport:
    """Run one information need through several task formulations.

    Agreement holds when all slot-filling and QA answers normalize to the
    same string and every fact-check formulation (whose claim the caller
    words around the expected common answer) comes back SUPPORTS. Dialog
    answers are free-form and excluded from agreement, but all tasks
    contribute evidence to the overlap fraction, computed on document ids.
    """
    if len(formulations) < 2:
        raise ValidationError("cross-examination needs at least 2 task formulations")
    results: dict[TaskKind, TaskResult] = {}
    for raw_task, raw_fields in formulations.items():
        task = TaskKind(raw_task)
        query_text = format_task_input(task, raw_fields)
        results[task] = run_pipeline(task, query_text, pipeline)

    answers = [
        normalize_answer(result.outputs[0].text)
        for task, result in results.items()
        if task in (TaskKind.slot_filling, TaskKind.question_answering)
    ]
    agreement = len(set(answers)) <= 1
    fact_result = results.get(TaskKind.fact_checking)
    if fact_result is not None and fact_result.outputs[0].text != "SUPPORTS":
        agreement = False

    doc_sets = [
        {doc_id_of_pid(e.pid) for e in result.evidence} for result in results.values()
    ]
    union = set().union(*doc_sets)
    intersection = set.intersection(*doc_sets) if doc_sets else set()
    overlap = len(intersection) / len(union) if union else 0.0
    return CrossExamReport(
        results=results, answer_agreement=agreement, evidence_overlap=overlap
    )


def prediction_record(instance_id: str, result: TaskResult) -> dict:
    """One evaluation record: best answer plus ranked document provenance.

    Documents are deduplicated in rank order so a document chunked into
    several retrieved passages occupies a single rank.
    """
    doc_ids: list[str] = []
    for e in result.evidence:
        doc_id = doc_id_of_pid(e.pid)
        if doc_id not in doc_ids:
            doc_ids.append(doc_id)
    return {
        "id": instance_id,
        "output": [{"answer": result.outputs[0].text}],
        "provenance": [{"wikipedia_id": doc_id} for doc_id in doc_ids],
    }


def write_predictions(path: str | Path, records: Sequence[dict]) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
            handle.write("\n")
