"""HTTP service: sessions, sensor ingestion, KB administration, transcripts.

JSON over HTTP/1.1 under a versioned /v1 prefix. Every completed turn is
appended to a per-session JSON-lines log holding the full session state, so
a restart recovers exactly the completed turns: a torn final line (crash
mid-turn) rolls back to the previous turn, while corruption earlier in the
log quarantines that one session and leaves the rest serving.
"""

from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .consultation import (
    ConsultationEngine,
    SessionConcludedError,
    SessionState,
)
from .gateway import GatewayError
from .sensors import SensorRecord, parse_sensor_csv, _parse_ts
from .vector_store import SyncEvent, VectorStoreError


class QuarantinedSessionError(Exception):
    pass


class SessionLog:
    """Append-only JSON-lines persistence, one file per session."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.jsonl"

    def append(self, session: SessionState) -> None:
        record = {"seq": session.turn, "state": session.to_state_dict()}
        with open(self._path(session.session_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")
            fh.flush()

    def recover(self, library) -> tuple[dict[str, SessionState], set[str]]:
        """Load every session; returns (sessions, quarantined ids)."""
        sessions: dict[str, SessionState] = {}
        quarantined: set[str] = set()
        for path in sorted(self.root.glob("*.jsonl")):
            session_id = path.stem
            lines = path.read_text(encoding="utf-8").splitlines()
            last_good: Optional[dict] = None
            corrupt_at: Optional[int] = None
            for i, line in enumerate(lines):
                if not line.strip():
                    continue
                try:
                    last_state = json.loads(line)["state"]
                except (json.JSONDecodeError, KeyError, TypeError):
                    corrupt_at = i
                    break
                last_good = last_state
            if corrupt_at is not None and corrupt_at < len(lines) - 1:
                # corruption in the middle: this session cannot be trusted
                quarantined.add(session_id)
                continue
            if last_good is not None:
                sessions[session_id] = SessionState.from_state_dict(last_good,
                                                                    library)
        return sessions, quarantined


@dataclass
class ServiceRuntime:
    """Engine plus session bookkeeping shared by all request handlers."""

    engine: ConsultationEngine
    log: Optional[SessionLog] = None
    sessions: dict[str, SessionState] = field(default_factory=dict)
    quarantined: set[str] = field(default_factory=set)
    locks: dict[str, threading.Lock] = field(default_factory=dict)
    meta: dict[str, dict] = field(default_factory=dict)  # id -> created/updated
    _guard: threading.Lock = field(default_factory=threading.Lock)

    def recover(self) -> None:
        if self.log is None:
            return
        self.sessions, self.quarantined = self.log.recover(self.engine.library)
        for session in self.sessions.values():
            self.meta.setdefault(session.session_id,
                                 {"created_at": time.time(),
                                  "updated_at": time.time()})
        # keep new ids clear of recovered ones
        max_seen = 0
        for sid in list(self.sessions) + list(self.quarantined):
            m = re.fullmatch(r"s-(\d+)", sid)
            if m:
                max_seen = max(max_seen, int(m.group(1)))
        self.engine._session_counter = max(self.engine._session_counter, max_seen)

    def lock_for(self, session_id: str) -> threading.Lock:
        with self._guard:
            return self.locks.setdefault(session_id, threading.Lock())

    def persist(self, session: SessionState) -> None:
        self.meta.setdefault(session.session_id, {"created_at": time.time()})
        self.meta[session.session_id]["updated_at"] = time.time()
        if self.log is not None:
            self.log.append(session)

    def api_session(self, session: SessionState) -> dict:
        meta = self.meta.get(session.session_id, {})
        return {"session_id": session.session_id,
                "patient_id": session.patient_id,
                "phase": session.phase,
                "turn_count": session.turn,
                "created_at": meta.get("created_at"),
                "updated_at": meta.get("updated_at")}


# -- request bodies -----------------------------------------------------------

class DemographicsBody(BaseModel):
    age_band: Optional[str] = None
    sex: Optional[str] = None
    region: Optional[str] = None


class CreateSessionBody(BaseModel):
    patient_id: str
    first_symptoms: str = Field(min_length=1)
    demographics: Optional[DemographicsBody] = None


class MessageBody(BaseModel):
    text: str = Field(min_length=1)


class ConsentBody(BaseModel):
    allow: bool


class SensorRecordBody(BaseModel):
    metric: str
    timestamp: str
    value: float
    units: Optional[str] = None


class SensorIngestBody(BaseModel):
    csv: Optional[str] = None
    records: Optional[list[SensorRecordBody]] = None
    sync: bool = True


class SyncBody(BaseModel):
    kind: str
    payload: dict


def _error(status: int, kind: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": {"type": kind, "detail": detail}})


def create_app(runtime: ServiceRuntime) -> FastAPI:
    app = FastAPI(title="medconsult", version=__version__,
                  openapi_url="/v1/openapi")
    engine = runtime.engine

    def _get_session(session_id: str):
        if session_id in runtime.quarantined:
            return None, _error(410, "quarantined",
                                f"session {session_id} has a corrupt log")
        session = runtime.sessions.get(session_id)
        if session is None:
            return None, _error(404, "unknown_session",
                                f"no session {session_id}")
        return session, None

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "version": __version__,
                "sessions": len(runtime.sessions)}

    @app.post("/v1/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        from .consultation import ConsultationError, Demographics

        demographics = None
        if body.demographics is not None:
            demographics = Demographics(**body.demographics.model_dump())
        try:
            session = engine.begin_session(body.first_symptoms, demographics,
                                           patient_id=body.patient_id)
            result = engine.step(session, None)
        except (GatewayError,) as exc:
            return _error(502, "provider_failure", str(exc))
        except ConsultationError as exc:
            return _error(422, "invalid_request", str(exc))
        runtime.sessions[session.session_id] = session
        runtime.persist(session)
        return {"session": runtime.api_session(session),
                "turn": result.to_dict()}

    @app.post("/v1/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageBody):
        session, err = _get_session(session_id)
        if err is not None:
            return err
        lock = runtime.lock_for(session_id)
        if not lock.acquire(blocking=False):
            return _error(429, "turn_in_flight",
                          "another turn is in flight for this session")
        try:
            result = engine.step(session, body.text)
        except SessionConcludedError as exc:
            return _error(409, "session_concluded", str(exc))
        except GatewayError as exc:
            return _error(502, "provider_failure", str(exc))
        finally:
            lock.release()
        runtime.persist(session)
        return result.to_dict()

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str):
        session, err = _get_session(session_id)
        if err is not None:
            return err
        return {"session": runtime.api_session(session),
                "transcript": session.export_transcript()}

    @app.post("/v1/sessions/{session_id}/finalize")
    def finalize(session_id: str):
        session, err = _get_session(session_id)
        if err is not None:
            return err
        report = engine.finalize_diagnosis(session)
        runtime.persist(session)
        return report.to_dict()

    @app.post("/v1/patients/{patient_id}/sensors")
    def ingest_sensors(patient_id: str, body: SensorIngestBody):
        records: list[SensorRecord] = []
        if body.csv:
            records.extend(parse_sensor_csv(body.csv))
        for rec in body.records or []:
            records.append(SensorRecord(patient_id=patient_id, metric=rec.metric,
                                        timestamp=_parse_ts(rec.timestamp),
                                        value=rec.value, units=rec.units))
        report = engine.sensor_store.ingest_records(patient_id, records)
        if body.sync and report.accepted:
            stored = [r for r in records]
            start = min(r.timestamp for r in stored)
            end = max(r.timestamp for r in stored)
            for metric in {r.metric for r in stored}:
                engine.sensor_store.profile_uncertainty(
                    patient_id, metric, (start, end),
                    baseline_days=engine.config.baseline_days,
                    min_baseline=engine.config.min_baseline_records,
                    floor=engine.config.uncertainty_floor)
            engine.sensor_index.sync_patient(patient_id, (start, end))
        return {"accepted": report.accepted, "replaced": report.replaced,
                "rejected": [{"index": i, "reason": r}
                             for i, r in report.rejected]}

    @app.post("/v1/patients/{patient_id}/consent")
    def set_consent(patient_id: str, body: ConsentBody):
        engine.set_consent(patient_id, body.allow)
        return {"patient_id": patient_id, "consent": body.allow}

    @app.get("/v1/patients/{patient_id}/sensors/stats")
    def sensor_stats(patient_id: str):
        return {"patient_id": patient_id,
                "records": engine.sensor_store.record_count(patient_id),
                "retrieval_reads": engine.sensor_store.retrieval_reads,
                "consent": engine.has_consent(patient_id)}

    @app.post("/v1/kb/sync")
    def kb_sync(body: SyncBody):
        try:
            event = SyncEvent(kind=body.kind, payload=body.payload)
            report = engine.knowledge.synchronize(
                event, policy=engine.config.chunk_policy,
                sensor_resolver=engine.sensor_index.resolver)
        except (VectorStoreError, ValueError, KeyError) as exc:
            return _error(422, "invalid_sync_event", str(exc))
        return {"added": report.added, "replaced": report.replaced,
                "elapsed": report.elapsed}

    @app.exception_handler(Exception)
    async def unhandled(request: Request, exc: Exception):
        return _error(500, "internal_error", str(exc))

    return app


def mount_ui(app: FastAPI, dist_dir: str | Path) -> bool:
    """Serve the built web client at /ui when its assets exist."""
    dist = Path(dist_dir)
    if not dist.is_dir() or not (dist / "index.html").exists():
        return False
    from fastapi.staticfiles import StaticFiles

    app.mount("/ui", StaticFiles(directory=str(dist), html=True), name="ui")
    return True
