"""HTTP front end for the task pipelines, dialog sessions, and cross-examination.

Stateless except for dialog sessions, which live in memory keyed by
session_id. Each session processes one turn at a time: a turn posted
while another is in flight is refused with 409 rather than queued, so
slow generation never stacks up requests. Every response, success or
error, carries a fresh correlation id for log matching.
"""

from __future__ import annotations

import logging
import threading
import time
import uuid
from typing import Mapping

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from kgi.dialog import (
    DIALOG_MODES,
    DialogModel,
    DialogSession,
    PipelineDialogModel,
    PipelineQaModel,
    QaModel,
    respond,
)
from kgi.errors import (
    ConfigurationError,
    NotFoundError,
    TransportError,
    ValidationError,
)
from kgi.rerank import RankedEvidence
from kgi.tasks import (
    GenerationUnavailable,
    Pipeline,
    TaskKind,
    TaskResult,
    cross_examine,
    format_task_input,
    run_pipeline,
)

log = logging.getLogger(__name__)

SNIPPET_CHAR_CAP = 400
UTTERANCE_CHAR_CAP = 2000

# the dialog task is exposed as "dialog_oneshot" to keep it distinct
# from the stateful /api/dialog/turn endpoint
TASK_ROUTES = {
    "slot_filling": TaskKind.slot_filling,
    "fact_checking": TaskKind.fact_checking,
    "question_answering": TaskKind.question_answering,
    "dialog_oneshot": TaskKind.dialog,
}


class _SessionRegistry:
    """In-memory dialog sessions with one non-blocking lock per session."""

    def __init__(self) -> None:
        self._sessions: dict[str, DialogSession] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def get_or_create(self, session_id: str, mode: str) -> tuple[DialogSession, threading.Lock]:
        with self._registry_lock:
            session = self._sessions.get(session_id)
            if session is None:
                session = DialogSession(session_id=session_id, mode=mode)
                self._sessions[session_id] = session
                self._locks[session_id] = threading.Lock()
            return session, self._locks[session_id]


def _correlation_id() -> str:
    return uuid.uuid4().hex


def _error_payload(message: str, **extra: object) -> dict:
    return {"error": message, "correlation_id": _correlation_id(), **extra}


def create_app(
    pipeline: Pipeline,
    dialog_model: DialogModel | None = None,
    qa_model: QaModel | None = None,
) -> FastAPI:
    """Build the application around one configured pipeline.

    The dialog and QA models default to pipeline-backed ones; tests swap
    in stubs to script routing outcomes.
    """
    if pipeline is None:
        raise ConfigurationError("service requires a configured pipeline")
    dialog_model = dialog_model if dialog_model is not None else PipelineDialogModel(pipeline)
    qa_model = qa_model if qa_model is not None else PipelineQaModel(pipeline)
    sessions = _SessionRegistry()

    app = FastAPI(title="kgi", docs_url=None, redoc_url=None)

    def resolve_passage(pid: str):
        # dict-backed resolvers raise KeyError; normalize to the API error
        try:
            return pipeline.resolve(pid)
        except KeyError:
            raise NotFoundError(f"unknown passage id: {pid!r}") from None

    def evidence_payload(evidence: tuple[RankedEvidence, ...] | list[RankedEvidence]) -> list[dict]:
        items = []
        for entry in evidence:
            try:
                passage = resolve_passage(entry.pid)
                title, snippet = passage.title, passage.text[:SNIPPET_CHAR_CAP]
            except NotFoundError:
                title, snippet = "", ""
            items.append(
                {
                    "pid": entry.pid,
                    "title": title,
                    "snippet": snippet,
                    "score": entry.rerank_score,
                }
            )
        return items

    def pid_payload(pids: tuple[str, ...]) -> list[dict]:
        return evidence_payload(
            [RankedEvidence(pid=pid, rerank_score=0.0, final_rank=rank) for rank, pid in enumerate(pids, start=1)]
        )

    def result_payload(result: TaskResult) -> dict:
        return {
            "task": result.task.value,
            "query_text": result.query_text,
            "outputs": [
                {
                    "text": output.text,
                    "model_score": output.model_score,
                    "evidence_pids": list(output.evidence_pids),
                }
                for output in result.outputs
            ],
            "evidence": evidence_payload(result.evidence),
            "closed_book": result.closed_book,
        }

    @app.exception_handler(RequestValidationError)
    async def on_request_validation(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content=_error_payload(str(exc.errors())))

    @app.exception_handler(ValidationError)
    async def on_validation(request: Request, exc: ValidationError):
        return JSONResponse(status_code=400, content=_error_payload(str(exc)))

    @app.exception_handler(NotFoundError)
    async def on_not_found(request: Request, exc: NotFoundError):
        return JSONResponse(status_code=404, content=_error_payload(str(exc)))

    @app.exception_handler(ConfigurationError)
    async def on_configuration(request: Request, exc: ConfigurationError):
        return JSONResponse(status_code=500, content=_error_payload(str(exc)))

    @app.exception_handler(TransportError)
    async def on_transport(request: Request, exc: TransportError):
        return JSONResponse(
            status_code=503,
            content=_error_payload(str(exc), evidence=[]),
        )

    @app.exception_handler(GenerationUnavailable)
    async def on_generation_unavailable(request: Request, exc: GenerationUnavailable):
        # retrieval succeeded: return the evidence so callers can still
        # show a partial, answerless result
        return JSONResponse(
            status_code=503,
            content=_error_payload(
                str(exc),
                task=exc.task.value,
                query_text=exc.query_text,
                evidence=evidence_payload(exc.evidence),
            ),
        )

    @app.get("/api/health")
    def health() -> dict:
        return {
            "status": "ok",
            "correlation_id": _correlation_id(),
            "indexed_passages": pipeline.sparse.n_docs,
        }

    @app.get("/api/passage/{pid}")
    def get_passage(pid: str) -> dict:
        passage = resolve_passage(pid)
        return {
            "correlation_id": _correlation_id(),
            "pid": passage.pid,
            "doc_id": passage.doc_id,
            "title": passage.title,
            "text": passage.text,
            "snippet": passage.text[:SNIPPET_CHAR_CAP],
            "token_count": passage.token_count,
        }

    @app.post("/api/task/{task_name}")
    def task_query(task_name: str, fields: dict) -> JSONResponse:
        task = TASK_ROUTES.get(task_name)
        if task is None:
            return JSONResponse(
                status_code=400,
                content=_error_payload(
                    f"unknown task {task_name!r}",
                    allowed_tasks=sorted(TASK_ROUTES),
                ),
            )
        started = time.perf_counter()
        query_text = format_task_input(task, fields)
        result = run_pipeline(task, query_text, pipeline)
        payload = result_payload(result)
        payload["correlation_id"] = _correlation_id()
        payload["timing_ms"] = (time.perf_counter() - started) * 1000.0
        return JSONResponse(content=payload)

    @app.post("/api/dialog/turn")
    def dialog_turn(body: dict) -> JSONResponse:
        session_id = body.get("session_id")
        utterance = body.get("utterance")
        mode = body.get("mode", "hybrid")
        if not isinstance(session_id, str) or not session_id.strip():
            raise ValidationError("session_id must be a non-empty string")
        if not isinstance(utterance, str) or not utterance.strip():
            raise ValidationError("utterance must be a non-empty string")
        if len(utterance) > UTTERANCE_CHAR_CAP:
            raise ValidationError(
                f"utterance exceeds {UTTERANCE_CHAR_CAP} characters ({len(utterance)})"
            )
        if mode not in DIALOG_MODES:
            raise ValidationError(f"mode must be one of {DIALOG_MODES}, got {mode!r}")

        session, lock = sessions.get_or_create(session_id, mode)
        if not lock.acquire(blocking=False):
            return JSONResponse(
                status_code=409,
                content=_error_payload(
                    f"session {session_id!r} already has a turn in flight",
                    session_id=session_id,
                ),
            )
        try:
            started = time.perf_counter()
            session.mode = mode
            response = respond(session, utterance, dialog_model, qa_model)
            return JSONResponse(
                content={
                    "correlation_id": _correlation_id(),
                    "session_id": session_id,
                    "mode": mode,
                    "text": response.text,
                    "source": response.source,
                    "evidence": pid_payload(response.evidence_pids),
                    "gate_trace": [[name, passed] for name, passed in response.gate_trace],
                    "timing_ms": (time.perf_counter() - started) * 1000.0,
                }
            )
        finally:
            lock.release()

    @app.post("/api/cross_examine")
    def cross_examine_endpoint(body: dict) -> JSONResponse:
        raw = body.get("formulations")
        if not isinstance(raw, Mapping):
            raise ValidationError("body requires 'formulations': a task-to-fields mapping")
        formulations: dict[TaskKind, Mapping[str, object]] = {}
        for task_name, fields in raw.items():
            task = TASK_ROUTES.get(task_name)
            if task is None:
                try:
                    task = TaskKind(task_name)
                except ValueError:
                    return JSONResponse(
                        status_code=400,
                        content=_error_payload(
                            f"unknown task {task_name!r}",
                            allowed_tasks=sorted(TASK_ROUTES),
                        ),
                    )
            if not isinstance(fields, Mapping):
                raise ValidationError(f"formulation {task_name!r} must map field names to values")
            formulations[task] = fields
        started = time.perf_counter()
        report = cross_examine(formulations, pipeline)
        return JSONResponse(
            content={
                "correlation_id": _correlation_id(),
                "answer_agreement": report.answer_agreement,
                "evidence_overlap": report.evidence_overlap,
                "results": {
                    task.value: result_payload(result)
                    for task, result in report.results.items()
                },
                "timing_ms": (time.perf_counter() - started) * 1000.0,
            }
        )

    return app
