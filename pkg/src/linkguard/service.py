"""HTTP session service driving interactive linking runs.

The service owns simulator-backed sessions: create one with an instance
selector and a policy, poll it for the pending question, answer, and read the
final linking. Session semantics are exactly those of the in-process policy
runners because both drive the same `LinkRun` machine; the service merely
parks it between answers.

Endpoints (JSON bodies):
  POST /sessions {seed, instance, policy, stage?, detector?, config?} -> {session_id}
  GET  /sessions/{id} -> {session_id, status, pending_question?, partial_linking, schema, question}
  POST /sessions/{id}/answer {question_id, answer} -> next state
  GET  /sessions/{id}/result -> final linking or abstention reason (409 before terminal)
  GET  /runs, GET /runs/{id} -> persisted run records
"""

from __future__ import annotations

import threading
import uuid
from typing import Any

from fastapi import Body, FastAPI, HTTPException

from .detector import OracleDetector
from .runlog import RunRecord, append_run, find_run, load_runs
from .runtime import (
    STATUS_ABSTAINED,
    STATUS_AWAITING,
    STATUS_DONE,
    AnswerConflictError,
    InvalidAnswerError,
    LinkRun,
)
from .simulate import SimConfig, SimWorld
from .store import load_detector

WIRE_VERSION = 1


class _Session:
    def __init__(self, session_id: str, run: LinkRun, request: dict, question: str, schema: list):
        self.session_id = session_id
        self.run = run
        self.request = request
        self.question = question
        self.schema = schema
        self.lock = threading.Lock()
        self.recorded = False


def _transcript(run: LinkRun) -> list:
    entries = [dict(e, stage="tables") for e in run.table_session.transcript]
    outcome = run.outcome()
    for table, sess in outcome.column_sessions.items():
        entries.extend(dict(e, stage=f"columns:{table}") for e in sess.transcript)
    return entries


def _session_state(session: _Session) -> dict:
    run = session.run
    pending = run.pending
    payload: dict[str, Any] = {
        "wire_version": WIRE_VERSION,
        "session_id": session.session_id,
        "status": run.status,
        "pending_question": None,
        "partial_linking": run.partial(),
        "question": session.question,
        "schema": session.schema,
        "transcript": _transcript(run),
    }
    if pending is not None and run.status == STATUS_AWAITING:
        payload["pending_question"] = {
            "question_id": pending.question_id,
            "kind": pending.kind,
            "subject": pending.subject,
            "context": pending.context,
        }
    if run.status in (STATUS_DONE, STATUS_ABSTAINED):
        payload["result"] = _result_payload(session)
    return payload


def _result_payload(session: _Session) -> dict:
    outcome = session.run.outcome()
    return {
        "status": outcome.status,
        "tables": outcome.tables,
        "columns": outcome.columns,
        "abstain_reason": outcome.abstain_reason,
        "corrections": outcome.table_session.correction_count
        + sum(s.correction_count for s in outcome.column_sessions.values()),
    }


def create_app(workspace: str | None = None) -> FastAPI:
    app = FastAPI(title="linkguard session service")
    sessions: dict[str, _Session] = {}
    registry_lock = threading.Lock()

    def _get(session_id: str) -> _Session:
        with registry_lock:
            session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return session

    def _record_if_terminal(session: _Session) -> None:
        if session.recorded or session.run.status not in (STATUS_DONE, STATUS_ABSTAINED):
            return
        session.recorded = True
        append_run(
            RunRecord(
                command="session",
                config=session.request,
                outcome=_result_payload(session),
            ),
            workspace,
        )

    @app.post("/sessions")
    def create_session(payload: dict = Body(...)) -> dict:
        seed = int(payload.get("seed", 0))
        index = int(payload.get("instance", 0))
        policy = payload.get("policy", "human")
        stage = payload.get("stage", "tables")
        detector_spec = payload.get("detector", "oracle")
        overrides = payload.get("config", {}) or {}
        if policy not in ("abstain", "surrogate", "human"):
            raise HTTPException(status_code=422, detail=f"unknown policy {policy!r}")
        if stage not in ("tables", "joint"):
            raise HTTPException(status_code=422, detail=f"unknown stage {stage!r}")
        try:
            config = SimConfig.from_dict({**overrides, "seed": seed})
            world = SimWorld(config, index + 1)
        except (ValueError, KeyError) as exc:
            raise HTTPException(status_code=422, detail=f"bad config: {exc}") from exc
        if index >= len(world.instances):
            raise HTTPException(status_code=422, detail="instance index out of range")
        instance = world.instances[index]
        model = world.table_model(index)
        if detector_spec == "oracle":
            detector = OracleDetector(model)
            # oracle detectors are model-bound: give each column stage its own
            column_detector = lambda table, column_model: OracleDetector(column_model)  # noqa: E731
        else:
            try:
                path = detector_spec.get("path") if isinstance(detector_spec, dict) else detector_spec
                detector = load_detector(str(path))
            except Exception as exc:
                raise HTTPException(status_code=422, detail=f"cannot load detector: {exc}") from exc
            column_detector = detector

        link_columns = stage == "joint"
        column_factory = world.column_factory(index) if link_columns else None
        run = LinkRun(
            model,
            detector,
            world.catalog,
            policy,
            column_factory=column_factory,
            column_detector=column_detector,
            surrogate=world.surrogate(index) if policy == "surrogate" else None,
            question=instance.question,
            link_columns=link_columns,
        )
        session_id = uuid.uuid4().hex[:12]
        schema = [
            {"name": name, "columns": columns} for name, columns in world.catalog.tables
        ]
        session = _Session(session_id, run, payload, instance.question, schema)
        with registry_lock:
            sessions[session_id] = session
        with session.lock:
            run.start()
            _record_if_terminal(session)
        return {"session_id": session_id}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        session = _get(session_id)
        with session.lock:
            return _session_state(session)

    @app.post("/sessions/{session_id}/answer")
    def answer(session_id: str, payload: dict = Body(...)) -> dict:
        session = _get(session_id)
        question_id = payload.get("question_id")
        value = payload.get("answer")
        if question_id is None or value is None:
            raise HTTPException(status_code=422, detail="question_id and answer are required")
        with session.lock:
            try:
                session.run.submit(str(question_id), str(value))
            except AnswerConflictError as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from exc
            except InvalidAnswerError as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from exc
            _record_if_terminal(session)
            return _session_state(session)

    @app.get("/sessions/{session_id}/result")
    def result(session_id: str) -> dict:
        session = _get(session_id)
        with session.lock:
            if session.run.status not in (STATUS_DONE, STATUS_ABSTAINED):
                raise HTTPException(status_code=409, detail="session is not terminal yet")
            return _result_payload(session)

    @app.get("/runs")
    def runs() -> list:
        return load_runs(workspace)

    @app.get("/runs/{run_id}")
    def run_by_id(run_id: str) -> dict:
        record = find_run(run_id, workspace)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        return record

    return app
