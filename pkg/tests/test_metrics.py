"""Scoring functions, file evaluation, and the report table.

Answer metrics normalize away case, punctuation, and articles, except
Rouge-L which keeps articles because it scores sequence overlap; the
pinned fraction values below break if either normalization drifts.
"""

from __future__ import annotations

import json
import random

import pytest

from kgi.errors import CorpusFormatError, ValidationError
from kgi.metrics import (
    REPORT_COLUMNS,
    exact_match,
    evaluate_run,
    format_metrics_table,
    kilt_combine,
    load_gold,
    load_predictions,
    normalize_answer,
    parse_metrics_table,
    r_precision,
    recall_at_5,
    rouge_l,
    token_f1,
)


class TestNormalization:
    def test_lowercase_punctuation_articles_whitespace(self):
        assert normalize_answer("The  Euro!") == "euro"
        assert normalize_answer("An Officer, a Gentleman") == "officer gentleman"
        assert normalize_answer("Bram Stoker's Dracula") == "bram stokers dracula"

    def test_article_removal_is_word_bounded(self):
        assert normalize_answer("theater attendance") == "theater attendance"


class TestExactMatch:
    def test_matches_after_normalization(self):
        assert exact_match("The Euro.", ["euro"]) == 1.0

    def test_any_alternative_counts(self):
        assert exact_match("Paris", ["Lyon", "paris!"]) == 1.0

    def test_no_match_scores_zero(self):
        assert exact_match("Paris", ["Lyon"]) == 0.0


class TestTokenF1:
    def test_partial_answer_scores_two_thirds(self):
        assert token_f1("Cromwell", ["Oliver Cromwell"]) == pytest.approx(2 / 3)

    def test_best_alternative_wins(self):
        assert token_f1("Oliver Cromwell", ["Richard Cromwell", "Oliver Cromwell"]) == 1.0

    def test_duplicate_tokens_counted_with_multiplicity(self):
        assert token_f1("euro euro", ["euro"]) == pytest.approx(2 / 3)

    def test_empty_sides(self):
        assert token_f1("", [""]) == 1.0
        assert token_f1("", ["euro"]) == 0.0
        assert token_f1("euro", [""]) == 0.0

    def test_disjoint_tokens_score_zero(self):
        assert token_f1("tolar", ["euro"]) == 0.0


class TestRougeL:
    def test_subsequence_f_measure(self):
        assert rouge_l("a b d", ["a b c d"]) == pytest.approx(6 / 7)

    def test_articles_are_kept(self):
        # dropping "a" here would change 6/7 into 4/5
        assert rouge_l("a b d", ["a b c d"]) != pytest.approx(4 / 5)
        assert rouge_l("the euro", ["the euro"]) == 1.0

    def test_empty_or_disjoint_prediction_scores_zero(self):
        assert rouge_l("", ["a b"]) == 0.0
        assert rouge_l("x y", ["a b"]) == 0.0

    def test_best_alternative_wins(self):
        assert rouge_l("b c", ["z z z", "a b c"]) == pytest.approx(0.8)


class TestRetrievalMetrics:
    def test_r_precision_window_is_gold_set_size(self):
        assert r_precision({"A", "B"}, ["A", "B", "C"]) == 1.0
        assert r_precision({"A", "B"}, ["A", "C", "B"]) == 0.5
        assert r_precision({"A"}, ["B", "A"]) == 0.0

    def test_r_precision_best_alternative(self):
        assert r_precision([{"A", "B"}, {"C"}], ["C", "Z"]) == 1.0

    def test_r_precision_rejects_empty_gold(self):
        with pytest.raises(ValidationError):
            r_precision([], ["A"])
        with pytest.raises(ValidationError):
            r_precision([set()], ["A"])

    def test_recall_fraction_vs_hit(self):
        gold = {"A", "B", "C", "D"}
        retrieved = ["A", "x", "B", "y", "z", "C"]
        assert recall_at_5(gold, retrieved) == pytest.approx(0.5)
        assert recall_at_5(gold, retrieved, mode="hit") == 1.0
        assert recall_at_5({"Q"}, retrieved, mode="hit") == 0.0

    def test_recall_rejects_unknown_mode(self):
        with pytest.raises(ValidationError):
            recall_at_5({"A"}, ["A"], mode="both")


class TestKiltCombine:
    def test_gated_on_perfect_retrieval(self):
        assert kilt_combine(1.0, 0.5) == 0.0
        assert kilt_combine(0.7, 1.0) == 0.7
        assert kilt_combine(0.0, 1.0) == 0.0

    def test_rejects_out_of_range_inputs(self):
        with pytest.raises(ValidationError):
            kilt_combine(1.2, 1.0)
        with pytest.raises(ValidationError):
            kilt_combine(0.5, -0.1)


def write_jsonl(path, records):
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")


def gold_record(instance_id, answers, provenance_sets):
    output = [{"answer": a} for a in answers]
    for docs in provenance_sets:
        output.append({"provenance": [{"wikipedia_id": d} for d in docs]})
    return {"id": instance_id, "output": output}


def pred_record(instance_id, answer, retrieved):
    return {
        "id": instance_id,
        "output": [{"answer": answer}],
        "provenance": [{"wikipedia_id": d} for d in retrieved],
    }


class TestLoaders:
    def test_gold_round_trip(self, tmp_path):
        path = tmp_path / "gold.jsonl"
        write_jsonl(path, [gold_record("g1", ["Paris"], [["D1"], ["D2", "D3"]])])
        gold = load_gold(path)
        assert gold["g1"].answers == ("Paris",)
        assert gold["g1"].provenance_sets == (frozenset({"D1"}), frozenset({"D2", "D3"}))

    @pytest.mark.parametrize(
        "record",
        [
            {"id": "g1", "output": [{"provenance": [{"wikipedia_id": "D"}]}]},  # no answer
            {"id": "g1", "output": [{"answer": "x"}]},  # no provenance
            {"id": "g1"},  # no output at all
        ],
    )
    def test_gold_rejects_unusable_records(self, tmp_path, record):
        path = tmp_path / "gold.jsonl"
        write_jsonl(path, [record])
        with pytest.raises(CorpusFormatError):
            load_gold(path)

    def test_duplicate_ids_rejected_with_line_number(self, tmp_path):
        path = tmp_path / "gold.jsonl"
        write_jsonl(
            path,
            [
                gold_record("g1", ["a"], [["D"]]),
                gold_record("g1", ["b"], [["D"]]),
            ],
        )
        with pytest.raises(CorpusFormatError) as info:
            load_gold(path)
        assert info.value.line_number == 2

    def test_invalid_json_names_the_line(self, tmp_path):
        path = tmp_path / "pred.jsonl"
        path.write_text('{"id": "p1", "output": [{"answer": "x"}]}\nnot json\n')
        with pytest.raises(CorpusFormatError) as info:
            load_predictions(path)
        assert info.value.line_number == 2

    def test_prediction_without_answer_rejected(self, tmp_path):
        path = tmp_path / "pred.jsonl"
        write_jsonl(path, [{"id": "p1", "output": []}])
        with pytest.raises(CorpusFormatError):
            load_predictions(path)

    def test_predictions_tolerate_missing_provenance(self, tmp_path):
        path = tmp_path / "pred.jsonl"
        write_jsonl(path, [{"id": "p1", "output": [{"answer": "x"}]}])
        assert load_predictions(path)["p1"].retrieved_doc_ids == ()


class TestEvaluateRun:
    def test_hand_computed_two_instance_run(self, tmp_path):
        gold_path, pred_path = tmp_path / "gold.jsonl", tmp_path / "pred.jsonl"
        write_jsonl(
            gold_path,
            [
                gold_record("i1", ["Paris"], [["D1"]]),
                gold_record("i2", ["Oliver Cromwell"], [["D9"]]),
            ],
        )
        write_jsonl(
            pred_path,
            [
                pred_record("i1", "Paris", ["D1", "D2"]),
                pred_record("i2", "Cromwell", ["D2"]),
            ],
        )
        report = evaluate_run(pred_path, gold_path, task="slot_filling")
        assert report.n_instances == 2
        assert report.r_precision == pytest.approx(0.5)
        assert report.recall_at_5 == pytest.approx(0.5)
        assert report.accuracy == pytest.approx(0.5)
        assert report.f1 == pytest.approx((1.0 + 2 / 3) / 2)
        assert report.rouge_l == pytest.approx((1.0 + 2 / 3) / 2)
        assert report.kilt_ac == pytest.approx(0.5)
        assert report.kilt_f1 == pytest.approx(0.5)
        assert report.kilt_rl == pytest.approx(0.5)

    def test_recall_mode_forwarded(self, tmp_path):
        gold_path, pred_path = tmp_path / "gold.jsonl", tmp_path / "pred.jsonl"
        write_jsonl(gold_path, [gold_record("i1", ["x"], [["D1", "D2"]])])
        write_jsonl(pred_path, [pred_record("i1", "x", ["D1"])])
        fraction = evaluate_run(pred_path, gold_path, task="qa")
        hit = evaluate_run(pred_path, gold_path, task="qa", recall_mode="hit")
        assert fraction.recall_at_5 == pytest.approx(0.5)
        assert hit.recall_at_5 == 1.0

    def test_id_mismatch_rejected(self, tmp_path):
        gold_path, pred_path = tmp_path / "gold.jsonl", tmp_path / "pred.jsonl"
        write_jsonl(gold_path, [gold_record("i1", ["x"], [["D"]])])
        write_jsonl(pred_path, [pred_record("i2", "x", ["D"])])
        with pytest.raises(ValidationError):
            evaluate_run(pred_path, gold_path, task="qa")

    def test_aggregation_matches_per_instance_functions(self, tmp_path):
        rng = random.Random(99)
        docs = [f"D{i}" for i in range(8)]
        words = ["euro", "tolar", "paris", "lake", "bled"]
        gold_records, pred_records, instances = [], [], []
        for i in range(30):
            answers = [" ".join(rng.sample(words, rng.randint(1, 3)))]
            provenance = [rng.sample(docs, rng.randint(1, 3))]
            answer = " ".join(rng.sample(words, rng.randint(1, 3)))
            retrieved = rng.sample(docs, rng.randint(0, 6))
            gold_records.append(gold_record(f"i{i}", answers, provenance))
            pred_records.append(pred_record(f"i{i}", answer, retrieved))
            instances.append((answers, provenance, answer, retrieved))
        gold_path, pred_path = tmp_path / "gold.jsonl", tmp_path / "pred.jsonl"
        write_jsonl(gold_path, gold_records)
        write_jsonl(pred_path, pred_records)
        report = evaluate_run(pred_path, gold_path, task="qa")

        n = len(instances)
        expected_rp = expected_acc = expected_kilt_f1 = 0.0
        for answers, provenance, answer, retrieved in instances:
            sets = [frozenset(s) for s in provenance]
            rp = r_precision(sets, retrieved)
            expected_rp += rp
            expected_acc += exact_match(answer, answers)
            expected_kilt_f1 += kilt_combine(token_f1(answer, answers), rp)
            assert kilt_combine(token_f1(answer, answers), rp) <= token_f1(answer, answers)
        assert report.r_precision == pytest.approx(expected_rp / n)
        assert report.accuracy == pytest.approx(expected_acc / n)
        assert report.kilt_f1 == pytest.approx(expected_kilt_f1 / n)


class TestReportTable:
    def test_exact_layout_for_one_row(self):
        table = format_metrics_table(
            [("toy", {name: 100.0 for name in REPORT_COLUMNS})]
        )
        lines = table.splitlines()
        assert lines[0] == (
            "dataset  R-Prec  Recall@5  Accuracy      F1  Rouge-L  KILT-AC  KILT-F1  KILT-RL"
        )
        assert lines[1] == (
            "toy      100.00    100.00    100.00  100.00   100.00   100.00   100.00   100.00"
        )

    def test_round_trip_with_absent_cells_and_spaced_labels(self):
        rows = [
            (
                "Wizard of Wikipedia",
                {
                    "R-Prec": 60.10,
                    "Recall@5": 79.98,
                    "Accuracy": None,
                    "F1": 18.90,
                    "Rouge-L": 16.76,
                    "KILT-AC": None,
                    "KILT-F1": 12.98,
                    "KILT-RL": 11.39,
                },
            ),
            (
                "Natural Questions",
                {
                    "R-Prec": 70.78,
                    "Recall@5": 76.63,
                    "Accuracy": 51.73,
                    "F1": 60.97,
                    "Rouge-L": None,
                    "KILT-AC": 43.56,
                    "KILT-F1": 49.80,
                    "KILT-RL": None,
                },
            ),
        ]
        parsed = parse_metrics_table(format_metrics_table(rows))
        assert parsed == [(label, dict(cells)) for label, cells in rows]

    def test_format_parse_format_is_stable(self):
        rows = [("x", {name: 12.34 for name in REPORT_COLUMNS})]
        once = format_metrics_table(rows)
        assert format_metrics_table(parse_metrics_table(once)) == once

    def test_parse_rejects_foreign_tables(self):
        with pytest.raises(ValidationError):
            parse_metrics_table("dataset  Precision  Recall\nx  1.0  2.0\n")
        with pytest.raises(ValidationError):
            parse_metrics_table("")
        header = format_metrics_table([]).splitlines()[0]
        with pytest.raises(ValidationError):
            parse_metrics_table(header + "\nonlylabel  1.0\n")
