"""Task input shaping, the end-to-end pipeline, and cross-examination.

End-to-end runs use the small in-memory corpus from conftest; the point
is that each task's query convention drives retrieval to the right
passage and the extractive model reads the answer out of it.
"""

from __future__ import annotations

import json

import pytest

from kgi.errors import ConfigurationError, InternalError, TransportError, ValidationError
from kgi.generator import GeneratedOutput
from kgi.tasks import (
    GenerationUnavailable,
    Pipeline,
    TaskKind,
    cross_examine,
    format_task_input,
    prediction_record,
    run_pipeline,
    write_predictions,
)

from conftest import make_pipeline, toy_corpus


class TestFormatTaskInput:
    def test_slot_filling_joins_head_and_relation(self):
        text = format_task_input(
            TaskKind.slot_filling, {"head": "Elizabeth Cromwell", "relation": "spouse"}
        )
        assert text == "Elizabeth Cromwell [SEP] spouse"

    def test_fact_checking_passes_claim_verbatim(self):
        assert (
            format_task_input(TaskKind.fact_checking, {"claim": "Slovenia uses the euro."})
            == "Slovenia uses the euro."
        )

    def test_question_answering_passes_question_verbatim(self):
        q = "When did bram stoker’s dracula come out?"
        assert format_task_input(TaskKind.question_answering, {"question": q}) == q

    def test_dialog_joins_turns_in_order(self):
        text = format_task_input(TaskKind.dialog, {"turns": ["first", "second", "third"]})
        assert text == "first * second * third"

    def test_accepts_raw_task_strings(self):
        assert format_task_input("fact_checking", {"claim": "c"}) == "c"

    @pytest.mark.parametrize(
        "task, fields, named",
        [
            (TaskKind.slot_filling, {"head": "x"}, "relation"),
            (TaskKind.slot_filling, {"relation": "r"}, "head"),
            (TaskKind.slot_filling, {"head": "", "relation": "r"}, "head"),
            (TaskKind.fact_checking, {}, "claim"),
            (TaskKind.question_answering, {"question": 3}, "question"),
        ],
    )
    def test_missing_or_empty_fields_name_the_field(self, task, fields, named):
        with pytest.raises(ValidationError) as info:
            format_task_input(task, fields)
        assert named in str(info.value)

    @pytest.mark.parametrize("turns", [None, [], "not a list", ["ok", ""], ["ok", 5]])
    def test_dialog_turns_must_be_a_list_of_non_empty_strings(self, turns):
        with pytest.raises(ValidationError):
            format_task_input(TaskKind.dialog, {"turns": turns})


class TestPipelineValidation:
    def test_missing_component_is_a_configuration_error(self, toy_passages):
        good = make_pipeline(toy_passages)
        with pytest.raises(ConfigurationError):
            Pipeline(
                resolve=good.resolve,
                sparse=good.sparse,
                dense=good.dense,
                embedder=good.embedder,
                reranker=good.reranker,
                model=None,
            )

    def test_non_positive_budgets_rejected(self, toy_passages):
        with pytest.raises(ConfigurationError):
            make_pipeline(toy_passages, k_evidence=0)


class TestRunPipeline:
    def test_slot_filling_end_to_end(self, toy_pipeline):
        result = run_pipeline(
            TaskKind.slot_filling, "Elizabeth Cromwell [SEP] spouse", toy_pipeline
        )
        assert result.outputs[0].text == "Oliver Cromwell"
        assert result.evidence[0].pid == "P1::0"
        assert result.closed_book is False

    def test_fact_checking_end_to_end(self, toy_pipeline):
        result = run_pipeline(TaskKind.fact_checking, "Slovenia uses the euro.", toy_pipeline)
        assert result.outputs[0].text == "SUPPORTS"
        assert result.evidence[0].pid == "P2::0"

    def test_question_answering_end_to_end(self, toy_pipeline):
        result = run_pipeline(
            TaskKind.question_answering, "What is the capital of France?", toy_pipeline
        )
        assert result.outputs[0].text == "Paris"

    def test_dialog_end_to_end(self, toy_pipeline):
        history = (
            "I think Iceland is a beautiful country. * "
            "Those sound wonderful. Can you tell me any more information? * "
            "What other countries are around it?"
        )
        result = run_pipeline(TaskKind.dialog, history, toy_pipeline)
        assert result.outputs[0].text == (
            "Denmark, Iceland, Finland, Norway and Sweden are all Nordic countries."
        )

    def test_accepts_raw_task_string(self, toy_pipeline):
        result = run_pipeline("question_answering", "capital of France", toy_pipeline)
        assert result.task is TaskKind.question_answering

    def test_candidates_carry_fusion_sources(self, toy_pipeline):
        result = run_pipeline(TaskKind.question_answering, "Slovenia euro", toy_pipeline)
        sources = {c.source for c in result.candidates}
        assert sources <= {"sparse", "dense", "both"}
        assert "both" in sources

    def test_empty_query_rejected(self, toy_pipeline):
        with pytest.raises(ValidationError):
            run_pipeline(TaskKind.question_answering, "", toy_pipeline)

    def test_no_matching_evidence_degrades_to_closed_book(self, toy_passages):
        pipeline = make_pipeline(toy_passages)
        pipeline.sparse = make_pipeline(
            [toy_passages[0]]
        ).sparse  # only the Cromwell passage is indexed
        from kgi.hnsw import HnswIndex

        pipeline.dense = HnswIndex(dim=128)
        result = run_pipeline(TaskKind.question_answering, "zzz qqq xxx", pipeline)
        assert result.closed_book is True
        assert result.evidence == ()
        assert result.outputs[0].text == ""

    def test_generation_transport_failure_keeps_evidence(self, toy_passages):
        class DeadModel:
            def run(self, conditioned, n_best):
                raise TransportError("gen down", endpoint="http://g", attempts=2)

        pipeline = make_pipeline(toy_passages, model=DeadModel())
        with pytest.raises(GenerationUnavailable) as info:
            run_pipeline(TaskKind.fact_checking, "Slovenia uses the euro.", pipeline)
        assert info.value.task is TaskKind.fact_checking
        assert info.value.query_text == "Slovenia uses the euro."
        assert info.value.evidence[0].pid == "P2::0"
        assert isinstance(info.value.cause, TransportError)

    def test_internal_errors_propagate_unwrapped(self, toy_passages):
        class RogueModel:
            def run(self, conditioned, n_best):
                return [GeneratedOutput("MAYBE", 1.0, ())]

        pipeline = make_pipeline(toy_passages, model=RogueModel())
        with pytest.raises(InternalError):
            run_pipeline(TaskKind.fact_checking, "Slovenia uses the euro.", pipeline)


class TestCrossExamine:
    def test_consistent_formulations_agree_with_full_overlap(self, toy_pipeline):
        report = cross_examine(
            {
                TaskKind.slot_filling: {"head": "Elizabeth Cromwell", "relation": "spouse"},
                TaskKind.fact_checking: {
                    "claim": "Oliver Cromwell was the spouse of Elizabeth Cromwell"
                },
            },
            toy_pipeline,
        )
        assert report.answer_agreement is True
        assert report.evidence_overlap == 1.0
        assert set(report.results) == {TaskKind.slot_filling, TaskKind.fact_checking}

    def test_divergent_answers_disagree(self, toy_pipeline):
        report = cross_examine(
            {
                TaskKind.slot_filling: {"head": "Elizabeth Cromwell", "relation": "spouse"},
                TaskKind.question_answering: {"question": "What is the capital of France?"},
            },
            toy_pipeline,
        )
        assert report.answer_agreement is False

    def test_refuted_claim_breaks_agreement(self, toy_pipeline):
        report = cross_examine(
            {
                TaskKind.question_answering: {"question": "What is the capital of France?"},
                TaskKind.fact_checking: {"claim": "bananas ripen on snowy mountaintops"},
            },
            toy_pipeline,
        )
        assert report.answer_agreement is False

    def test_dialog_is_excluded_from_agreement(self, toy_pipeline):
        report = cross_examine(
            {
                TaskKind.dialog: {"turns": ["What other countries are around Iceland?"]},
                TaskKind.question_answering: {
                    "question": "What countries are around Iceland?"
                },
            },
            toy_pipeline,
        )
        assert report.answer_agreement is True

    def test_needs_at_least_two_formulations(self, toy_pipeline):
        with pytest.raises(ValidationError):
            cross_examine(
                {TaskKind.question_answering: {"question": "anything at all"}}, toy_pipeline
            )

    def test_accepts_raw_task_name_keys(self, toy_pipeline):
        report = cross_examine(
            {
                "slot_filling": {"head": "Elizabeth Cromwell", "relation": "spouse"},
                "question_answering": {"question": "Who was the spouse of Elizabeth Cromwell?"},
            },
            toy_pipeline,
        )
        assert TaskKind.slot_filling in report.results


class TestPredictionOutput:
    def test_record_dedups_documents_in_rank_order(self, toy_pipeline):
        result = run_pipeline(
            TaskKind.slot_filling, "Elizabeth Cromwell [SEP] spouse", toy_pipeline
        )
        record = prediction_record("inst-1", result)
        assert record["id"] == "inst-1"
        assert record["output"] == [{"answer": "Oliver Cromwell"}]
        doc_ids = [p["wikipedia_id"] for p in record["provenance"]]
        assert doc_ids[0] == "P1"
        assert len(doc_ids) == len(set(doc_ids))

    def test_chunks_of_one_document_occupy_one_rank(self, toy_passages):
        from conftest import passage

        chunks = [
            passage("D::0", "Doc", "the euro is used in Slovenia"),
            passage("D::1", "Doc", "Slovenia adopted the euro in 2007"),
            passage("E::0", "Other", "mountains are tall"),
        ]
        pipeline = make_pipeline(chunks)
        result = run_pipeline(TaskKind.question_answering, "Slovenia euro", pipeline)
        record = prediction_record("x", result)
        doc_ids = [p["wikipedia_id"] for p in record["provenance"]]
        assert doc_ids == ["D", "E"]

    def test_write_predictions_is_one_json_record_per_line(self, tmp_path):
        records = [
            {"id": "a", "output": [{"answer": "Ljubljana"}], "provenance": []},
            {"id": "b", "output": [{"answer": "café"}], "provenance": []},
        ]
        path = tmp_path / "pred.jsonl"
        write_predictions(path, records)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 2
        assert json.loads(lines[0])["id"] == "a"
        assert "café" in lines[1]
