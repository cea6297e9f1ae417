"""Study sessions: phase flow, response persistence, and exports.

Sessions move strictly forward through training -> validation -> test ->
done; the test phase is reachable only with a perfect validation score.
State is an append-only JSONL event log replayed at startup, with periodic
snapshots to bound replay cost; per-session mutations serialize on a lock so
duplicate submissions cannot double-record. One store instance owns a study
directory (single writer).

Exports reproduce the responses bijectively as a TrialLog (test phase only,
matching what the analytics consume).
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from .planning import StudyPlan, TrialSpec
from .teams import TrialLog, TrialResponse, user_accuracy

SNAPSHOT_EVERY = 256

PHASES = ("training", "validation", "test", "done")


class SessionError(KeyError):
    """Unknown session or study."""


class ConflictError(RuntimeError):
    """Out-of-order or duplicate submission; state is unchanged."""


@dataclass
class Session:
    session_id: str
    user_id: str
    study_id: str
    method: str
    phase: str
    cursor: int  # next trial index within the current phase
    test_indices: tuple[int, ...]  # assigned positions in the method's test pool
    scores: dict[str, int] = field(default_factory=dict)
    rejected: bool = False
    created_at: float = 0.0
    updated_at: float = 0.0
    responses: dict[tuple[str, int], bool] = field(default_factory=dict)

    def phase_score(self, phase: str) -> int:
        return self.scores.get(phase, 0)


class StudyStore:
    """Single-writer session store for one study plan."""

    def __init__(self, plan: StudyPlan, directory: str | Path):
        self.plan = plan
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._events_path = self.directory / "events.jsonl"
        self._snapshot_path = self.directory / "snapshot.json"
        self._lock = threading.Lock()
        self._session_locks: dict[str, threading.Lock] = {}
        self._sessions: dict[str, Session] = {}
        self._by_user: dict[str, str] = {}  # user -> active session
        self._pool_seen: dict[str, list[int]] = {
            m: [0] * len(pool) for m, pool in plan.test_pool.items()}
        self._method_sessions: dict[str, int] = {m: 0 for m in plan.methods}
        self._events_since_snapshot = 0
        self._replay()

    # ------------------------------------------------------------ persistence

    def _replay(self) -> None:
        start = 0
        if self._snapshot_path.exists():
            snap = json.loads(self._snapshot_path.read_text(encoding="utf-8"))
            start = snap["event_count"]
            for doc in snap["sessions"]:
                session = self._session_from_doc(doc)
                self._install(session, count_pool=True)
        if self._events_path.exists():
            with open(self._events_path, encoding="utf-8") as fh:
                for n, line in enumerate(fh):
                    if n < start:
                        continue
                    self._apply(json.loads(line))

    def _session_from_doc(self, doc) -> Session:
        session = Session(
            session_id=doc["session_id"], user_id=doc["user_id"],
            study_id=doc["study_id"], method=doc["method"], phase=doc["phase"],
            cursor=doc["cursor"], test_indices=tuple(doc["test_indices"]),
            scores=dict(doc["scores"]), rejected=doc["rejected"],
            created_at=doc["created_at"], updated_at=doc["updated_at"])
        session.responses = {(p, int(i)): a
                             for p, i, a in doc["responses"]}
        return session

    def _session_doc(self, s: Session) -> dict:
        return {"session_id": s.session_id, "user_id": s.user_id,
                "study_id": s.study_id, "method": s.method, "phase": s.phase,
                "cursor": s.cursor, "test_indices": list(s.test_indices),
                "scores": s.scores, "rejected": s.rejected,
                "created_at": s.created_at, "updated_at": s.updated_at,
                "responses": [[p, i, a] for (p, i), a in sorted(s.responses.items())]}

    def _append(self, event: dict) -> None:
        with open(self._events_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=False) + "\n")
        self._events_since_snapshot += 1
        if self._events_since_snapshot >= SNAPSHOT_EVERY:
            self.write_snapshot()

    def write_snapshot(self) -> None:
        count = 0
        if self._events_path.exists():
            with open(self._events_path, encoding="utf-8") as fh:
                count = sum(1 for _ in fh)
        doc = {"event_count": count,
               "sessions": [self._session_doc(s) for s in self._sessions.values()]}
        tmp = self._snapshot_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, ensure_ascii=False), encoding="utf-8")
        tmp.replace(self._snapshot_path)
        self._events_since_snapshot = 0

    def _install(self, session: Session, count_pool: bool) -> None:
        self._sessions[session.session_id] = session
        if session.phase != "done":
            self._by_user[session.user_id] = session.session_id
        if count_pool:
            for i in session.test_indices:
                self._pool_seen[session.method][i] += 1
            self._method_sessions[session.method] += 1

    def _apply(self, event: dict) -> None:
        kind = event["type"]
        if kind == "session_created":
            session = self._session_from_doc(event["session"])
            self._install(session, count_pool=True)
        elif kind == "response":
            session = self._sessions[event["session_id"]]
            self._record(session, event["trial_index"], event["accepted"],
                         event["ts"])
        else:
            raise ValueError(f"unknown event type {kind!r}")

    # -------------------------------------------------------------- plan view

    def _phase_trials(self, session: Session, phase: str) -> tuple[TrialSpec, ...]:
        if phase == "training":
            return self.plan.training[session.method]
        if phase == "validation":
            return self.plan.validation[session.method]
        if phase == "test":
            pool = self.plan.test_pool[session.method]
            return tuple(pool[i] for i in session.test_indices)
        return ()

    def _assign_test_indices(self, method: str) -> tuple[int, ...]:
        # greedy least-seen-first keeps per-query exposure balanced
        seen = self._pool_seen[method]
        order = sorted(range(len(seen)), key=lambda i: (seen[i], i))
        return tuple(order[:self.plan.profile.test_trials])

    def _pick_method(self) -> str:
        return min(self.plan.methods, key=lambda m: (self._method_sessions[m],
                                                     self.plan.methods.index(m)))

    # ------------------------------------------------------------- operations

    def create_session(self, user_id: str, method: str | None = None) -> Session:
        with self._lock:
            existing = self._by_user.get(user_id)
            if existing is not None:
                session = self._sessions[existing]
                if session.phase != "done":
                    return session
            if method is None:
                method = self._pick_method()
            elif method not in self.plan.methods:
                raise SessionError(f"study has no method {method!r}")
            now = time.time()
            session = Session(
                session_id=uuid.uuid4().hex[:12], user_id=user_id,
                study_id=self.plan.study_id, method=method, phase="training",
                cursor=0, test_indices=self._assign_test_indices(method),
                created_at=now, updated_at=now)
            self._install(session, count_pool=True)
            self._session_locks[session.session_id] = threading.Lock()
            self._append({"type": "session_created", "session": self._session_doc(session)})
            return session

    def get_session(self, session_id: str) -> Session:
        session = self._sessions.get(session_id)
        if session is None:
            raise SessionError(f"unknown session {session_id!r}")
        return session

    def _session_lock(self, session_id: str) -> threading.Lock:
        with self._lock:
            return self._session_locks.setdefault(session_id, threading.Lock())

    def next_trial(self, session_id: str) -> dict:
        """Current trial payload, or a terminal marker for finished sessions."""
        session = self.get_session(session_id)
        if session.phase == "done":
            return self._terminal_marker(session)
        trials = self._phase_trials(session, session.phase)
        spec = trials[session.cursor]
        intro = self.plan.class_intros.get(spec.label)
        return {
            "kind": "trial",
            "session_id": session.session_id,
            "phase": session.phase,
            "trial_index": session.cursor,
            "trial_count": len(trials),
            "method": session.method,
            "query_id": spec.query_id,
            "asset_url": f"/assets/{spec.query_id}",
            "class_intro": {
                "label": spec.label,
                "label_name": spec.label_name,
                "description": intro.description if intro else "",
                "reference_images": list(intro.reference_images) if intro else [],
            },
            "explanation": json.loads(spec.explanation),
        }

    def _terminal_marker(self, session: Session) -> dict:
        marker = {
            "kind": "session_done",
            "session_id": session.session_id,
            "rejected": session.rejected,
            "scores": dict(session.scores),
        }
        if not session.rejected:
            total = self.plan.profile.test_trials
            marker["test_accuracy"] = session.phase_score("test") / total if total else None
        return marker

    def _record(self, session: Session, trial_index: int, accepted: bool,
                ts: float) -> dict:
        phase = session.phase
        if phase == "done":
            raise ConflictError(f"session {session.session_id} is finished")
        trials = self._phase_trials(session, phase)
        if trial_index != session.cursor:
            raise ConflictError(
                f"expected trial {session.cursor} of {phase}, got {trial_index}")
        spec = trials[trial_index]
        correct = accepted == spec.ai_correct
        session.responses[(phase, trial_index)] = accepted
        if correct:
            session.scores[phase] = session.phase_score(phase) + 1
        session.cursor += 1
        session.updated_at = ts
        if session.cursor >= len(trials):
            self._advance(session)
        return {"session_id": session.session_id, "phase": session.phase,
                "next_trial_index": session.cursor if session.phase != "done" else None,
                "done": session.phase == "done"}

    def _advance(self, session: Session) -> None:
        if session.phase == "training":
            session.phase = "validation"
        elif session.phase == "validation":
            needed = self.plan.profile.validation_trials
            if session.phase_score("validation") == needed:
                session.phase = "test"
            else:
                session.phase = "done"
                session.rejected = True
                self._by_user.pop(session.user_id, None)
        elif session.phase == "test":
            session.phase = "done"
            self._by_user.pop(session.user_id, None)
        session.cursor = 0

    def submit_response(self, session_id: str, trial_index: int, accepted: bool,
                        elapsed_ms: int | None = None) -> dict:
        session = self.get_session(session_id)
        with self._session_lock(session_id):
            ts = time.time()
            ack = self._record(session, trial_index, accepted, ts)
            with self._lock:
                self._append({"type": "response", "session_id": session_id,
                              "trial_index": trial_index, "accepted": accepted,
                              "elapsed_ms": elapsed_ms, "ts": ts})
            return ack

    # ----------------------------------------------------------------- export

    def results(self) -> dict:
        """Test-phase responses as a TrialLog plus per-user summaries."""
        rows = []
        per_user_scores: dict[str, float] = {}
        for session in sorted(self._sessions.values(), key=lambda s: s.created_at):
            pool = self.plan.test_pool[session.method]
            answered = [(i, a) for (p, i), a in session.responses.items() if p == "test"]
            for i, accepted in sorted(answered):
                spec = pool[session.test_indices[i]]
                rows.append(TrialResponse(
                    query_id=spec.query_id, method=session.method,
                    ai_confidence=spec.confidence, ai_correct=spec.ai_correct,
                    user_id=session.user_id, accepted=accepted))
            if answered:
                correct = sum(1 for i, a in answered
                              if a == pool[session.test_indices[i]].ai_correct)
                per_user_scores[session.user_id] = correct / len(answered)
        log = TrialLog(rows)
        summary = user_accuracy(log) if rows else None
        return {"log": log, "per_user": per_user_scores, "summary": summary}
