"""Task-conditioned output generation over reranked evidence.

The production path sends a serialized context to a remote
sequence-to-sequence model. The offline path is a deterministic extractive
stand-in: short spans for slot filling and QA, a binary label for fact
checking, a sentence for dialog. Fact-checking output is constrained to the
two-label vocabulary on every path, and each output's evidence_pids always
point back into the conditioning evidence.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Protocol, Sequence

import httpx

from kgi.corpus import Passage
from kgi.errors import InternalError, TransportError, ValidationError
from kgi.tokenization import token_spans, tokenize

if TYPE_CHECKING:
    from kgi.tasks import TaskKind

log = logging.getLogger(__name__)

FACT_CHECK_LABELS = ("SUPPORTS", "REFUTES")
SPAN_TOKEN_CAP = 5
QUERY_NEIGHBORHOOD = 5
FACT_CHECK_THRESHOLD = 0.5

# closed-class words: span candidates never cross these, and a claim's
# content tokens exclude them
_FUNCTION_WORDS = frozenset(
    """
    a an the this that these those some any no every each all both either
    neither other another such same
    i you he she it we they me him her us them my your his its our their
    mine yours hers ours theirs myself yourself himself herself itself
    ourselves themselves
    who whom whose which what when where why how
    is are was were be been being am do does did done have has had having
    will would shall should may might can could must
    and or but nor so yet if then than because while although though
    of in on at by for with from to into onto over under between among
    about against during without within along across behind beyond after
    before above below up down out off near through
    not t s re ve ll d m don isn aren wasn weren doesn didn hasn haven
    hadn won wouldn shouldn couldn mustn
    as also there here very too quite rather
    """.split()
)

_SENTENCE_BREAK = re.compile(r"(?<=[.!?])\s+")


@dataclass(frozen=True)
class ConditionedInput:
    """Everything generation may condition on, in evidence rank order."""

    query_text: str
    evidence: tuple[tuple[str, str], ...]  # (title, text) pairs
    evidence_pids: tuple[str, ...]
    task: "TaskKind"
    closed_book: bool

    def serialized(self) -> str:
        blocks = [f"{title} : {text}" if title else text for title, text in self.evidence]
        return "\n\n".join([self.query_text, *blocks])


@dataclass(frozen=True)
class GeneratedOutput:
    text: str
    model_score: float
    evidence_pids: tuple[str, ...]


class GeneratorModel(Protocol):
    def run(self, conditioned: ConditionedInput, n_best: int) -> list[GeneratedOutput]:
        """Return candidate outputs, best first."""
        ...


def format_context(
    query: str, evidence: Sequence[Passage], task: "TaskKind"
) -> ConditionedInput:
    """Serialize query plus evidence deterministically, in rank order.

    Empty evidence is tolerated: the result is flagged closed_book and
    generation proceeds on the query alone.
    """
    if not query:
        raise ValidationError("query text must be non-empty")
    if not evidence:
        log.warning("no evidence passages; generation degrades to closed-book")
    return ConditionedInput(
        query_text=query,
        evidence=tuple((p.title, p.text) for p in evidence),
        evidence_pids=tuple(p.pid for p in evidence),
        task=task,
        closed_book=not evidence,
    )


def generate(
    model: GeneratorModel, conditioned: ConditionedInput, n_best: int
) -> list[GeneratedOutput]:
    """Run the model and enforce the output contract.

    Outputs come back sorted by model_score descending, truncated to
    n_best. Fact-checking text outside the two-label vocabulary and
    evidence attribution outside the conditioning set are internal errors:
    both are impossible for the built-in models and indicate a misbehaving
    remote.
    """
    if n_best < 1:
        raise ValidationError(f"n_best must be >= 1, got {n_best}")
    outputs = model.run(conditioned, n_best)
    if not outputs:
        raise InternalError("generation model returned no outputs")
    conditioning = set(conditioned.evidence_pids)
    for output in outputs:
        if conditioned.task == "fact_checking" and output.text not in FACT_CHECK_LABELS:
            raise InternalError(
                f"constrained decoding violated: {output.text!r} is not a fact-check label"
            )
        if not set(output.evidence_pids) <= conditioning:
            raise InternalError(
                f"output attributes evidence outside the conditioning set: "
                f"{sorted(set(output.evidence_pids) - conditioning)}"
            )
    return sorted(outputs, key=lambda o: -o.model_score)[:n_best]


class RemoteGenerator:
    """Client for a remote generation service.

    Protocol: POST {task, context, n_best, constrained_vocab?} ->
    {outputs:[{text, score}]}, exactly n_best outputs. The context is
    already serialized, so model servers stay task-agnostic.
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

    def run(self, conditioned: ConditionedInput, n_best: int) -> list[GeneratedOutput]:
        payload = {
            "task": getattr(conditioned.task, "value", str(conditioned.task)),
            "context": conditioned.serialized(),
            "n_best": n_best,
        }
        if conditioned.task == "fact_checking":
            payload["constrained_vocab"] = list(FACT_CHECK_LABELS)
        last_error: Exception | None = None
        for _ in range(self.attempts):
            try:
                response = self._client.post(self.endpoint, content=json.dumps(payload))
                response.raise_for_status()
                raw = response.json()["outputs"]
                if len(raw) != n_best:
                    raise InternalError(
                        f"generator returned {len(raw)} outputs, requested {n_best}"
                    )
                return [
                    GeneratedOutput(
                        text=str(item["text"]),
                        model_score=float(item["score"]),
                        evidence_pids=conditioned.evidence_pids,
                    )
                    for item in raw
                ]
            except InternalError:
                raise
            except (httpx.HTTPError, KeyError, ValueError, TypeError) as exc:
                last_error = exc
        raise TransportError(
            f"generator unreachable after {self.attempts} attempts: {last_error}",
            endpoint=self.endpoint,
            attempts=self.attempts,
            cause=last_error,
        )


class ExtractiveGenerator:
    """Deterministic offline model: delegates to extractive_generate."""

    def run(self, conditioned: ConditionedInput, n_best: int) -> list[GeneratedOutput]:
        evidence = [
            Passage(
                pid=pid,
                doc_id=pid,
                title=title,
                text=text,
                token_count=len(tokenize(text)),
            )
            for pid, (title, text) in zip(conditioned.evidence_pids, conditioned.evidence)
        ]
        return extractive_generate(conditioned.query_text, evidence, conditioned.task, n_best)


def extractive_generate(
    query: str, evidence: Sequence[Passage], task: "TaskKind", n_best: int
) -> list[GeneratedOutput]:
    """Produce outputs by extraction instead of generation.

    Slot filling and QA return short spans near query-term matches; fact
    checking compares claim content tokens against the top passage; dialog
    returns sentences of the top passage with the most distinct query
    tokens. With no evidence the result degrades to an empty answer (or
    REFUTES for fact checking).
    """
    if n_best < 1:
        raise ValidationError(f"n_best must be >= 1, got {n_best}")
    if task == "fact_checking":
        return _extract_label(query, evidence)[:n_best]
    if not evidence:
        return [GeneratedOutput(text="", model_score=0.0, evidence_pids=())]
    if task == "dialog":
        return _extract_sentences(query, evidence[0], n_best)
    return _extract_spans(query, evidence, n_best)


def _extract_spans(
    query: str, evidence: Sequence[Passage], n_best: int
) -> list[GeneratedOutput]:
    """Best short spans across all evidence passages.

    Candidates are sub-spans (up to SPAN_TOKEN_CAP tokens) of maximal
    function-word-free token runs that contain at least one non-query
    token. Score: count of query-token positions within QUERY_NEIGHBORHOOD
    positions outside the span. Ties prefer earlier passages, then longer
    spans, then earlier positions.
    """
    query_tokens = set(tokenize(query))
    scored: list[tuple[float, int, int, int, str, str]] = []
    for passage_rank, passage in enumerate(evidence):
        text = passage.text
        spans = token_spans(text)
        tokens = [text[a:b].lower() for a, b in spans]
        query_positions = [i for i, tok in enumerate(tokens) if tok in query_tokens]
        for run_start, run_end in _content_runs(tokens):
            for s in range(run_start, run_end):
                for e in range(s, min(s + SPAN_TOKEN_CAP, run_end)):
                    if all(tokens[i] in query_tokens for i in range(s, e + 1)):
                        continue
                    score = sum(
                        1
                        for p in query_positions
                        if (s - QUERY_NEIGHBORHOOD <= p < s)
                        or (e < p <= e + QUERY_NEIGHBORHOOD)
                    )
                    char_end = spans[e + 1][0] if e + 1 < len(spans) else len(text)
                    span_text = text[spans[s][0] : char_end].rstrip()
                    scored.append(
                        (float(score), passage_rank, -(e - s + 1), s, span_text, passage.pid)
                    )
    if not scored:
        return [GeneratedOutput(text="", model_score=0.0, evidence_pids=(evidence[0].pid,))]
    scored.sort(key=lambda item: (-item[0], item[1], item[2], item[3]))
    outputs: list[GeneratedOutput] = []
    seen: set[str] = set()
    for score, _, _, _, span_text, pid in scored:
        if span_text in seen:
            continue
        seen.add(span_text)
        outputs.append(GeneratedOutput(text=span_text, model_score=score, evidence_pids=(pid,)))
        if len(outputs) == n_best:
            break
    return outputs


def _content_runs(tokens: Sequence[str]) -> list[tuple[int, int]]:
    """Maximal half-open [start, end) runs free of function words."""
    runs: list[tuple[int, int]] = []
    start: int | None = None
    for i, token in enumerate(tokens):
        if token in _FUNCTION_WORDS:
            if start is not None:
                runs.append((start, i))
                start = None
        elif start is None:
            start = i
    if start is not None:
        runs.append((start, len(tokens)))
    return runs


def _extract_label(claim: str, evidence: Sequence[Passage]) -> list[GeneratedOutput]:
    """SUPPORTS iff the top passage covers enough of the claim's content
    tokens; no evidence refutes by definition."""
    if not evidence:
        return [GeneratedOutput(text="REFUTES", model_score=1.0, evidence_pids=())]
    claim_tokens = set(tokenize(claim))
    content = claim_tokens - _FUNCTION_WORDS or claim_tokens
    passage_tokens = set(tokenize(evidence[0].text)) | set(tokenize(evidence[0].title))
    overlap = len(content & passage_tokens) / len(content) if content else 0.0
    pid = (evidence[0].pid,)
    supports = overlap >= FACT_CHECK_THRESHOLD
    first = "SUPPORTS" if supports else "REFUTES"
    second = "REFUTES" if supports else "SUPPORTS"
    first_score = max(overlap, 1.0 - overlap)
    return [
        GeneratedOutput(text=first, model_score=first_score, evidence_pids=pid),
        GeneratedOutput(text=second, model_score=1.0 - first_score, evidence_pids=pid),
    ]


def _extract_sentences(query: str, passage: Passage, n_best: int) -> list[GeneratedOutput]:
    """Sentences of the top passage ranked by distinct query-token overlap."""
    query_tokens = set(tokenize(query))
    sentences = [s for s in _SENTENCE_BREAK.split(passage.text) if s]
    if not sentences:
        return [GeneratedOutput(text="", model_score=0.0, evidence_pids=(passage.pid,))]
    scored = [
        (float(len(set(tokenize(sentence)) & query_tokens)), order, sentence)
        for order, sentence in enumerate(sentences)
    ]
    scored.sort(key=lambda item: (-item[0], item[1]))
    return [
        GeneratedOutput(text=sentence, model_score=score, evidence_pids=(passage.pid,))
        for score, _, sentence in scored[:n_best]
    ]
