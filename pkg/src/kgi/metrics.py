"""Evaluation: retrieval quality, downstream answer quality, and combined
scores that award downstream credit only when retrieval was perfect.

Retrieval is scored at document granularity against one or more alternative
gold provenance sets (the best alternative counts). Answers are compared
after normalization: lowercase, punctuation stripped, articles dropped,
whitespace collapsed. Rouge-L keeps articles, since it measures sequence
overlap rather than answer identity.
"""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Collection, Mapping, Sequence

from kgi.errors import CorpusFormatError, ValidationError

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCTUATION = set(string.punctuation)

REPORT_COLUMNS = (
    "R-Prec",
    "Recall@5",
    "Accuracy",
    "F1",
    "Rouge-L",
    "KILT-AC",
    "KILT-F1",
    "KILT-RL",
)


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop English articles, collapse spaces."""
    text = "".join(ch for ch in text.lower() if ch not in _PUNCTUATION)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def _sequence_tokens(text: str) -> list[str]:
    # for sequence overlap: punctuation stripped but articles kept
    return " ".join(
        "".join(ch for ch in text.lower() if ch not in _PUNCTUATION).split()
    ).split()


def exact_match(prediction: str, answers: Sequence[str]) -> float:
    normalized = normalize_answer(prediction)
    return 1.0 if any(normalized == normalize_answer(a) for a in answers) else 0.0


def token_f1(prediction: str, answers: Sequence[str]) -> float:
    """Max over answers of the harmonic mean of token precision and recall."""
    best = 0.0
    pred_tokens = normalize_answer(prediction).split()
    for answer in answers:
        gold_tokens = normalize_answer(answer).split()
        if not pred_tokens or not gold_tokens:
            best = max(best, 1.0 if pred_tokens == gold_tokens else 0.0)
            continue
        common = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
        if common == 0:
            continue
        precision = common / len(pred_tokens)
        recall = common / len(gold_tokens)
        best = max(best, 2 * precision * recall / (precision + recall))
    return best


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[len(b)]


def rouge_l(prediction: str, answers: Sequence[str]) -> float:
    """Max over answers of the LCS F-measure with equal precision/recall weight."""
    best = 0.0
    pred_tokens = _sequence_tokens(prediction)
    if not pred_tokens:
        return 0.0
    for answer in answers:
        gold_tokens = _sequence_tokens(answer)
        if not gold_tokens:
            continue
        lcs = _lcs_length(pred_tokens, gold_tokens)
        if lcs == 0:
            continue
        precision = lcs / len(pred_tokens)
        recall = lcs / len(gold_tokens)
        best = max(best, 2 * precision * recall / (precision + recall))
    return best


def _as_gold_sets(
    gold: Collection[str] | Sequence[Collection[str]],
) -> list[frozenset[str]]:
    items = list(gold)
    if not items:
        raise ValidationError("gold provenance must be non-empty")
    if all(isinstance(item, str) for item in items):
        return [frozenset(items)]
    sets = [frozenset(item) for item in items]
    if any(not s for s in sets):
        raise ValidationError("gold provenance sets must be non-empty")
    return sets


def r_precision(
    gold: Collection[str] | Sequence[Collection[str]], retrieved: Sequence[str]
) -> float:
    """|top-R retrieved ∩ gold| / R for a gold set of size R, best alternative.

    A bare collection of doc_id strings is treated as a single alternative
    set; a sequence of collections as alternatives, the best of which counts.
    """
    best = 0.0
    for gold_set in _as_gold_sets(gold):
        top = set(retrieved[: len(gold_set)])
        best = max(best, len(top & gold_set) / len(gold_set))
    return best


def recall_at_5(
    gold: Collection[str] | Sequence[Collection[str]],
    retrieved: Sequence[str],
    mode: str = "fraction",
) -> float:
    """Fraction of the best gold alternative found in the top 5.

    mode="hit" switches to any-hit scoring: 1.0 as soon as one gold doc
    appears in the top 5.
    """
    if mode not in ("fraction", "hit"):
        raise ValidationError(f"mode must be 'fraction' or 'hit', got {mode!r}")
    top = set(retrieved[:5])
    best = 0.0
    for gold_set in _as_gold_sets(gold):
        hits = len(top & gold_set)
        if mode == "hit":
            best = max(best, 1.0 if hits else 0.0)
        else:
            best = max(best, hits / len(gold_set))
    return best


def kilt_combine(downstream_score: float, instance_r_precision: float) -> float:
    """Downstream credit gated on perfect instance retrieval."""
    for name, value in (
        ("downstream score", downstream_score),
        ("r-precision", instance_r_precision),
    ):
        if not 0.0 <= value <= 1.0:
            raise ValidationError(f"{name} must be in [0, 1], got {value}")
    return downstream_score if instance_r_precision == 1.0 else 0.0


@dataclass(frozen=True)
class GoldInstance:
    instance_id: str
    answers: tuple[str, ...]
    provenance_sets: tuple[frozenset[str], ...]


@dataclass(frozen=True)
class Prediction:
    instance_id: str
    answer: str
    retrieved_doc_ids: tuple[str, ...]


@dataclass(frozen=True)
class MetricsReport:
    r_precision: float
    recall_at_5: float
    accuracy: float
    f1: float
    rouge_l: float
    kilt_ac: float
    kilt_f1: float
    kilt_rl: float
    n_instances: int

    def as_row(self, label: str) -> tuple[str, dict[str, float]]:
        """Percent-scaled cells for the table formatter."""
        return label, {
            "R-Prec": 100 * self.r_precision,
            "Recall@5": 100 * self.recall_at_5,
            "Accuracy": 100 * self.accuracy,
            "F1": 100 * self.f1,
            "Rouge-L": 100 * self.rouge_l,
            "KILT-AC": 100 * self.kilt_ac,
            "KILT-F1": 100 * self.kilt_f1,
            "KILT-RL": 100 * self.kilt_rl,
        }


def _parse_lines(path: str | Path) -> list[tuple[int, dict]]:
    records = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON: {exc}", line_number=number)
            if not isinstance(record, dict):
                raise CorpusFormatError("record must be an object", line_number=number)
            records.append((number, record))
    return records


def load_gold(path: str | Path) -> dict[str, GoldInstance]:
    """Gold records: {id, output:[{answer?, provenance?:[{wikipedia_id}]}]}.

    Every instance needs at least one answer and one non-empty provenance
    set; each output entry's provenance is one alternative set.
    """
    instances: dict[str, GoldInstance] = {}
    for number, record in _parse_lines(path):
        try:
            instance_id = str(record["id"])
            output = record["output"]
            answers = tuple(str(o["answer"]) for o in output if o.get("answer"))
            provenance_sets = tuple(
                frozenset(str(p["wikipedia_id"]) for p in o["provenance"])
                for o in output
                if o.get("provenance")
            )
        except (KeyError, TypeError) as exc:
            raise CorpusFormatError(f"malformed gold record: {exc}", line_number=number)
        if instance_id in instances:
            raise CorpusFormatError(
                f"duplicate gold id {instance_id!r}", line_number=number
            )
        if not answers:
            raise CorpusFormatError(
                f"gold id {instance_id!r} has no answers", line_number=number
            )
        if not provenance_sets or any(not s for s in provenance_sets):
            raise CorpusFormatError(
                f"gold id {instance_id!r} has no usable provenance", line_number=number
            )
        instances[instance_id] = GoldInstance(instance_id, answers, provenance_sets)
    return instances


def load_predictions(path: str | Path) -> dict[str, Prediction]:
    """Prediction records: {id, output:[{answer}], provenance:[{wikipedia_id}]}."""
    predictions: dict[str, Prediction] = {}
    for number, record in _parse_lines(path):
        try:
            instance_id = str(record["id"])
            answer = str(record["output"][0]["answer"])
            retrieved = tuple(
                str(p["wikipedia_id"]) for p in record.get("provenance", [])
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise CorpusFormatError(
                f"malformed prediction record: {exc}", line_number=number
            )
        if instance_id in predictions:
            raise CorpusFormatError(
                f"duplicate prediction id {instance_id!r}", line_number=number
            )
        predictions[instance_id] = Prediction(instance_id, answer, retrieved)
    return predictions


def evaluate_run(
    prediction_file: str | Path,
    gold_file: str | Path,
    task: str,
    recall_mode: str = "fraction",
) -> MetricsReport:
    """Score a prediction file against gold, averaging per-instance metrics.

    The task name is carried for labeling; every metric is computed for
    every task. Prediction and gold ids must align exactly.
    """
    gold = load_gold(gold_file)
    predictions = load_predictions(prediction_file)
    missing = sorted(set(gold) - set(predictions))
    extra = sorted(set(predictions) - set(gold))
    if missing or extra:
        raise ValidationError(
            f"prediction/gold id mismatch: missing {missing[:10]} extra {extra[:10]}"
        )
    if not gold:
        raise ValidationError("gold file contains no instances")

    totals = dict.fromkeys(
        ("r_precision", "recall_at_5", "accuracy", "f1", "rouge_l", "kilt_ac", "kilt_f1", "kilt_rl"),
        0.0,
    )
    for instance_id in sorted(gold):
        g = gold[instance_id]
        p = predictions[instance_id]
        rp = r_precision(g.provenance_sets, p.retrieved_doc_ids)
        totals["r_precision"] += rp
        totals["recall_at_5"] += recall_at_5(g.provenance_sets, p.retrieved_doc_ids, recall_mode)
        acc = exact_match(p.answer, g.answers)
        f1 = token_f1(p.answer, g.answers)
        rl = rouge_l(p.answer, g.answers)
        totals["accuracy"] += acc
        totals["f1"] += f1
        totals["rouge_l"] += rl
        totals["kilt_ac"] += kilt_combine(acc, rp)
        totals["kilt_f1"] += kilt_combine(f1, rp)
        totals["kilt_rl"] += kilt_combine(rl, rp)
    n = len(gold)
    return MetricsReport(
        n_instances=n, **{name: value / n for name, value in totals.items()}
    )


def format_metrics_table(rows: Sequence[tuple[str, Mapping[str, float | None]]]) -> str:
    """Fixed-width table: one labeled row per system/dataset, '-' for absent
    cells, values rendered to two decimals. Inverse of parse_metrics_table."""
    label_width = max([len("dataset")] + [len(label) for label, _ in rows])
    widths = [max(len(name), 6) for name in REPORT_COLUMNS]
    lines = [
        "  ".join(
            ["dataset".ljust(label_width)]
            + [name.rjust(w) for name, w in zip(REPORT_COLUMNS, widths)]
        ).rstrip()
    ]
    for label, cells in rows:
        rendered = [
            ("-" if cells.get(name) is None else f"{cells[name]:.2f}").rjust(w)
            for name, w in zip(REPORT_COLUMNS, widths)
        ]
        lines.append("  ".join([label.ljust(label_width)] + rendered).rstrip())
    return "\n".join(lines) + "\n"


def parse_metrics_table(text: str) -> list[tuple[str, dict[str, float | None]]]:
    """Parse format_metrics_table output back into rows."""
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise ValidationError("empty metrics table")
    header = tuple(lines[0].split()[1:])
    if header != REPORT_COLUMNS:
        raise ValidationError(f"unexpected table header: {header}")
    rows: list[tuple[str, dict[str, float | None]]] = []
    for line in lines[1:]:
        parts = line.rsplit(None, len(REPORT_COLUMNS))
        if len(parts) != len(REPORT_COLUMNS) + 1:
            raise ValidationError(f"unparseable table row: {line!r}")
        label = parts[0].strip()
        cells: dict[str, float | None] = {}
        for name, raw in zip(REPORT_COLUMNS, parts[1:]):
            cells[name] = None if raw == "-" else float(raw)
        rows.append((label, cells))
    return rows
