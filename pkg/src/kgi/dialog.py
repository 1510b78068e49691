"""Dialog response routing.

Two session modes. Conventional mode answers every turn with the dialog
model alone. Hybrid mode screens each user utterance through three gates
and, when all pass, answers with the QA pipeline instead:

1. ``is_question``: the utterance looks like a question.
2. ``eligible_noun_phrase``: the question contains at least one noun
   phrase free of pronouns and adverbs, so there is something concrete
   to retrieve against.
3. ``novel_answer``: the QA answer shares no token with the dialog
   history, meaning it adds information the conversation does not
   already contain.

The QA query is the question prefixed with the eligible noun phrases
collected from the user's earlier turns, joined by full stops, which
restores context that the bare question usually lacks.

Question detection and noun-phrase tagging are pluggable. The defaults
are deterministic: a surface-cue question classifier and a noun-phrase
chunker driven by closed-class word lists shipped as package data.
"""

from __future__ import annotations

import importlib.resources
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Protocol, Sequence

from kgi.errors import ConfigurationError, KgiError, ValidationError
from kgi.tasks import Pipeline, TaskKind, format_task_input, run_pipeline
from kgi.tokenization import token_spans, tokenize

log = logging.getLogger(__name__)

USER = "user"
SYSTEM = "system"

CONVENTIONAL = "conventional"
HYBRID = "hybrid"
DIALOG_MODES = (CONVENTIONAL, HYBRID)

SOURCE_DIALOG = "dialog_model"
SOURCE_QA = "qa_model"

GATE_IS_QUESTION = "is_question"
GATE_ELIGIBLE_NOUN_PHRASE = "eligible_noun_phrase"
GATE_NOVEL_ANSWER = "novel_answer"

_QUESTION_CUES = frozenset(
    "who what when where why how do does did is are can could will".split()
)

# Classification order doubles as precedence: a word in several lists
# takes the first matching class ("who" is interrogative, not pronoun).
_WORD_CLASS_FILES = (
    ("interrogative", "interrogatives.txt"),
    ("pronoun", "pronouns.txt"),
    ("determiner", "determiners.txt"),
    ("auxiliary", "auxiliaries.txt"),
    ("verb", "verbs.txt"),
    ("adverb", "adverbs.txt"),
    ("preposition", "prepositions.txt"),
    ("conjunction", "conjunctions.txt"),
    ("particle", "particles.txt"),
)


@dataclass(frozen=True)
class QuestionJudgment:
    """Binary question/non-question call with a confidence in [0, 1]."""

    is_question: bool
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(
                f"confidence must be in [0, 1], got {self.confidence}"
            )


@dataclass(frozen=True)
class NounPhrase:
    """A tagged phrase; eligible for query building iff untainted."""

    text: str
    contains_pronoun: bool = False
    contains_adverb: bool = False

    @property
    def eligible(self) -> bool:
        return not (self.contains_pronoun or self.contains_adverb)


@dataclass(frozen=True)
class DialogResponse:
    """One system turn: its text, which model produced it, and evidence.

    gate_trace records each routing gate that was evaluated, in order,
    with its outcome. Conventional mode evaluates none.
    """

    text: str
    source: str
    evidence_pids: tuple[str, ...] = ()
    gate_trace: tuple[tuple[str, bool], ...] = ()


@dataclass
class DialogSession:
    """Mutable conversation state: alternating (speaker, text) turns."""

    session_id: str
    mode: str = HYBRID
    turns: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        if not self.session_id or not self.session_id.strip():
            raise ValidationError("session_id must be non-empty")
        if self.mode not in DIALOG_MODES:
            raise ValidationError(
                f"mode must be one of {DIALOG_MODES}, got {self.mode!r}"
            )
        for index, (speaker, _) in enumerate(self.turns):
            expected = USER if index % 2 == 0 else SYSTEM
            if speaker != expected:
                raise ValidationError(
                    f"turn {index} has speaker {speaker!r}, expected {expected!r}:"
                    " turns must alternate starting with the user"
                )


class QuestionClassifier(Protocol):
    def judge(self, utterance: str) -> QuestionJudgment: ...


class NounPhraseTagger(Protocol):
    def phrases(self, utterance: str) -> list[NounPhrase]: ...


class DialogModel(Protocol):
    def reply(
        self, turns: Sequence[tuple[str, str]], utterance: str
    ) -> tuple[str, tuple[str, ...]]: ...


class QaModel(Protocol):
    def answer(self, query_text: str) -> tuple[str, tuple[str, ...]]: ...


class HeuristicQuestionClassifier:
    """Surface-cue detector: terminal '?' or a leading interrogative cue.

    A cue word alone is not enough; at least two more tokens must follow
    so that bare acknowledgements ("is it") stay non-questions.
    """

    def judge(self, utterance: str) -> QuestionJudgment:
        if utterance.strip().endswith("?"):
            return QuestionJudgment(is_question=True, confidence=1.0)
        tokens = tokenize(utterance)
        if len(tokens) >= 3 and tokens[0] in _QUESTION_CUES:
            return QuestionJudgment(is_question=True, confidence=0.75)
        return QuestionJudgment(is_question=False, confidence=0.75)


def _load_lexicon(filename: str) -> frozenset[str]:
    resource = (
        importlib.resources.files("kgi").joinpath("lexicons").joinpath(filename)
    )
    words = frozenset(
        line.strip().lower()
        for line in resource.read_text(encoding="utf-8").splitlines()
        if line.strip()
    )
    if not words:
        raise ConfigurationError(f"word-class lexicon {filename} is empty")
    return words


class LexiconNounPhraseTagger:
    """Noun-phrase chunker driven by closed-class word lists.

    Tokens appearing in no list count as noun-like and merge with their
    noun-like neighbours into one phrase, sliced from the original text
    so casing and inner punctuation survive. Pronouns and adverbs
    surface as single-token phrases flagged for exclusion; the other
    closed classes only break phrases and are never emitted.
    """

    def __init__(self) -> None:
        self._classes = {
            name: _load_lexicon(filename) for name, filename in _WORD_CLASS_FILES
        }

    def _classify(self, token: str) -> str | None:
        for name, _ in _WORD_CLASS_FILES:
            if token in self._classes[name]:
                return name
        return None

    def phrases(self, utterance: str) -> list[NounPhrase]:
        tagged: list[NounPhrase] = []
        run_start: int | None = None
        run_end = 0

        def flush() -> None:
            nonlocal run_start
            if run_start is not None:
                tagged.append(NounPhrase(text=utterance[run_start:run_end]))
                run_start = None

        for start, end in token_spans(utterance):
            word_class = self._classify(utterance[start:end].lower())
            if word_class is None:
                if run_start is None:
                    run_start = start
                run_end = end
                continue
            flush()
            if word_class == "pronoun":
                tagged.append(
                    NounPhrase(text=utterance[start:end], contains_pronoun=True)
                )
            elif word_class == "adverb":
                tagged.append(
                    NounPhrase(text=utterance[start:end], contains_adverb=True)
                )
        flush()
        return tagged


@lru_cache(maxsize=1)
def default_classifier() -> HeuristicQuestionClassifier:
    return HeuristicQuestionClassifier()


@lru_cache(maxsize=1)
def default_tagger() -> LexiconNounPhraseTagger:
    return LexiconNounPhraseTagger()


def is_question(classifier: QuestionClassifier, utterance: str) -> QuestionJudgment:
    """Judge whether the utterance asks a question."""
    return classifier.judge(utterance)


def extract_query_noun_phrases(
    tagger: NounPhraseTagger, utterance: str
) -> list[NounPhrase]:
    """Eligible noun phrases of the utterance, in order, deduplicated.

    Phrases containing a pronoun or adverb token are dropped; duplicate
    surface forms (case-insensitive) keep their first appearance.
    """
    seen: set[str] = set()
    eligible: list[NounPhrase] = []
    for phrase in tagger.phrases(utterance):
        if not phrase.eligible:
            continue
        key = phrase.text.lower()
        if key in seen:
            continue
        seen.add(key)
        eligible.append(phrase)
    return eligible


def build_qa_query(
    history: Sequence[tuple[str, str]],
    question: str,
    tagger: NounPhraseTagger | None = None,
) -> str:
    """Question prefixed with noun phrases from earlier user turns.

    Eligible noun phrases are collected from the user turns of
    ``history`` in chronological order, deduplicated case-insensitively,
    joined by ". ", and followed by the question verbatim. With no
    usable phrases the question passes through unchanged.
    """
    tagger = tagger if tagger is not None else default_tagger()
    seen: set[str] = set()
    parts: list[str] = []
    for speaker, text in history:
        if speaker != USER:
            continue
        for phrase in extract_query_noun_phrases(tagger, text):
            key = phrase.text.lower()
            if key in seen:
                continue
            seen.add(key)
            parts.append(phrase.text)
    if not parts:
        return question
    return ". ".join(parts) + ". " + question


def answer_is_novel(answer: str, history: Iterable[str]) -> bool:
    """True iff no answer token occurs anywhere in the history texts.

    Comparison is on lowercased tokens with no stopword filtering; an
    answer with no tokens is vacuously novel (callers reject empty
    answers before this gate).
    """
    answer_tokens = set(tokenize(answer))
    if not answer_tokens:
        return True
    history_tokens: set[str] = set()
    for text in history:
        history_tokens.update(tokenize(text))
    return answer_tokens.isdisjoint(history_tokens)


def respond(
    session: DialogSession,
    utterance: str,
    dialog_model: DialogModel,
    qa_model: QaModel,
    classifier: QuestionClassifier | None = None,
    tagger: NounPhraseTagger | None = None,
) -> DialogResponse:
    """Answer one user utterance and append both turns to the session.

    Conventional sessions always use the dialog model and never touch
    the QA model. Hybrid sessions try the QA route first; any gate
    failing, an empty QA answer, or a QA pipeline error (logged) falls
    back to the dialog model. The returned gate_trace shows how far the
    QA route got either way.
    """
    if not utterance or not utterance.strip():
        raise ValidationError("utterance must be non-empty")
    trace: list[tuple[str, bool]] = []
    response: DialogResponse | None = None
    if session.mode == HYBRID:
        response = _route_question(
            session, utterance, qa_model, classifier, tagger, trace
        )
    if response is None:
        text, evidence_pids = dialog_model.reply(tuple(session.turns), utterance)
        response = DialogResponse(
            text=text,
            source=SOURCE_DIALOG,
            evidence_pids=tuple(evidence_pids),
            gate_trace=tuple(trace),
        )
    session.turns.append((USER, utterance))
    session.turns.append((SYSTEM, response.text))
    return response


def _route_question(
    session: DialogSession,
    utterance: str,
    qa_model: QaModel,
    classifier: QuestionClassifier | None,
    tagger: NounPhraseTagger | None,
    trace: list[tuple[str, bool]],
) -> DialogResponse | None:
    """Run the three-gate QA route; None means use the dialog model."""
    classifier = classifier if classifier is not None else default_classifier()
    tagger = tagger if tagger is not None else default_tagger()

    judgment = is_question(classifier, utterance)
    trace.append((GATE_IS_QUESTION, judgment.is_question))
    if not judgment.is_question:
        return None

    noun_phrases = extract_query_noun_phrases(tagger, utterance)
    trace.append((GATE_ELIGIBLE_NOUN_PHRASE, bool(noun_phrases)))
    if not noun_phrases:
        return None

    query_text = build_qa_query(session.turns, utterance, tagger)
    try:
        answer, evidence_pids = qa_model.answer(query_text)
    except KgiError:
        log.warning(
            "qa route failed for session %s, falling back to dialog model",
            session.session_id,
            exc_info=True,
        )
        return None
    if not answer.strip():
        return None

    history_texts = [text for _, text in session.turns] + [utterance]
    novel = answer_is_novel(answer, history_texts)
    trace.append((GATE_NOVEL_ANSWER, novel))
    if not novel:
        return None

    return DialogResponse(
        text=answer,
        source=SOURCE_QA,
        evidence_pids=tuple(evidence_pids),
        gate_trace=tuple(trace),
    )


@dataclass
class PipelineDialogModel:
    """Dialog model backed by the retrieval pipeline's dialog task.

    The query is the whole conversation (every turn text, then the new
    utterance) joined by the dialog turn separator.
    """

    pipeline: Pipeline

    def reply(
        self, turns: Sequence[tuple[str, str]], utterance: str
    ) -> tuple[str, tuple[str, ...]]:
        texts = [text for _, text in turns] + [utterance]
        query_text = format_task_input(TaskKind.dialog, {"turns": texts})
        result = run_pipeline(TaskKind.dialog, query_text, self.pipeline)
        text = result.outputs[0].text if result.outputs else ""
        return text, tuple(item.pid for item in result.evidence)


@dataclass
class PipelineQaModel:
    """QA model backed by the retrieval pipeline's QA task."""

    pipeline: Pipeline

    def answer(self, query_text: str) -> tuple[str, tuple[str, ...]]:
        result = run_pipeline(TaskKind.question_answering, query_text, self.pipeline)
        text = result.outputs[0].text if result.outputs else ""
        return text, tuple(item.pid for item in result.evidence)
