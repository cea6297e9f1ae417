"""HTTP front door for live studies.

Serves session flow (create, next trial, submit response), study results,
and image assets, over the stores in a data directory laid out as

    <data_dir>/studies/<study_id>/plan.json   (frozen plan)
    <data_dir>/studies/<study_id>/events.jsonl (written by the store)
    asset paths in plans resolve relative to <data_dir>.

The data directory defaults to $CORRXAI_DATA_DIR.
"""

from __future__ import annotations

import os
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, PlainTextResponse
from pydantic import BaseModel, Field

from .planning import load_plan
from .sessions import ConflictError, SessionError, StudyStore
from .teams import write_trial_log

DATA_DIR_ENV = "CORRXAI_DATA_DIR"


class StudyRegistry:
    """Loads study stores lazily from the data directory; one store each."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self._stores: dict[str, StudyStore] = {}

    def studies_root(self) -> Path:
        return self.data_dir / "studies"

    def store(self, study_id: str) -> StudyStore:
        if study_id not in self._stores:
            plan_path = self.studies_root() / study_id / "plan.json"
            if not plan_path.exists():
                raise SessionError(f"unknown study {study_id!r}")
            plan = load_plan(plan_path)
            self._stores[study_id] = StudyStore(plan, plan_path.parent)
        return self._stores[study_id]

    def find_session(self, session_id: str):
        for store in self._stores.values():
            try:
                return store, store.get_session(session_id)
            except SessionError:
                continue
        raise SessionError(f"unknown session {session_id!r}")

    def asset_path(self, image_id: str) -> Path:
        for store in self._stores.values():
            rel = store.plan.assets.get(image_id)
            if rel is not None:
                return self.data_dir / rel
        # fall back to unopened studies
        root = self.studies_root()
        if root.exists():
            for plan_path in sorted(root.glob("*/plan.json")):
                store = self.store(plan_path.parent.name)
                rel = store.plan.assets.get(image_id)
                if rel is not None:
                    return self.data_dir / rel
        raise SessionError(f"unknown asset {image_id!r}")


class CreateSessionRequest(BaseModel):
    user_id: str = Field(min_length=1)
    study_id: str = Field(min_length=1)
    method: str | None = None


class SubmitRequest(BaseModel):
    trial_index: int
    accepted: bool
    elapsed_ms: int | None = None


def create_app(data_dir: str | Path | None = None) -> FastAPI:
    if data_dir is None:
        data_dir = os.environ.get(DATA_DIR_ENV, ".")
    registry = StudyRegistry(data_dir)
    app = FastAPI(title="corrxai study service")
    app.state.registry = registry
    # the UI may be served from a different origin than the API
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    @app.exception_handler(SessionError)
    async def _not_found(request, exc):
        raise HTTPException(status_code=404, detail=str(exc))

    @app.exception_handler(ConflictError)
    async def _conflict(request, exc):
        raise HTTPException(status_code=409, detail=str(exc))

    @app.post("/sessions")
    def create_session(req: CreateSessionRequest):
        store = registry.store(req.study_id)
        session = store.create_session(req.user_id, method=req.method)
        return {
            "session_id": session.session_id,
            "user_id": session.user_id,
            "study_id": session.study_id,
            "method": session.method,
            "phase": session.phase,
            "trial_index": session.cursor,
        }

    @app.get("/sessions/{session_id}/next")
    def next_trial(session_id: str):
        store, _ = registry.find_session(session_id)
        return store.next_trial(session_id)

    @app.post("/sessions/{session_id}/responses")
    def submit(session_id: str, req: SubmitRequest):
        store, _ = registry.find_session(session_id)
        return store.submit_response(session_id, req.trial_index, req.accepted,
                                     req.elapsed_ms)

    @app.get("/studies/{study_id}/results")
    def results(study_id: str):
        store = registry.store(study_id)
        export = store.results()
        log = export["log"]
        rows = [{
            "query_id": r.query_id, "method": r.method,
            "ai_confidence": r.ai_confidence, "ai_correct": r.ai_correct,
            "user_id": r.user_id, "accepted": r.accepted,
        } for r in log.rows]
        summary = export["summary"]
        return {
            "study_id": study_id,
            "rows": rows,
            "per_user": export["per_user"],
            "per_method": ({m: {"mean": v[0], "std": v[1], "users": v[2]}
                            for m, v in summary.per_method.items()} if summary else {}),
            "excluded_users": list(summary.excluded_users) if summary else [],
        }

    @app.get("/studies/{study_id}/results.tsv", response_class=PlainTextResponse)
    def results_tsv(study_id: str):
        store = registry.store(study_id)
        export = store.results()
        tmp = store.directory / "export.tsv"
        write_trial_log(export["log"], tmp)
        return tmp.read_text(encoding="utf-8")

    @app.get("/assets/{image_id}")
    def asset(image_id: str):
        path = registry.asset_path(image_id)
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"missing asset file {path.name}")
        return FileResponse(path)

    return app
