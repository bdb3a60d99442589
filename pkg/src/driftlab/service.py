"""HTTP/JSON API over stream sessions.

One service process hosts many sessions; each session has a single-writer
lock and a monotonically increasing revision that bumps by exactly one per
mutation. Writers may send an If-Match-Revision header for optimistic
concurrency; a stale value is rejected with 409. Projection solves can run
on a background thread per session (poll GET /projection), or synchronously
with ?wait=true. Errors share one body shape: {code, message, detail}.
"""

from __future__ import annotations

import os
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from starlette.exceptions import HTTPException as StarletteHTTPException

from . import ensemble as ens_mod
from .core import (
    ColumnSchema,
    CsvParseError,
    OutOfOrderError,
    SchemaError,
    SessionConfig,
    StreamSession,
    ingest_csv,
    session_from_json,
    session_to_json,
)

API_PREFIX = "/v1"


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail=None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail


class SessionEntry:
    def __init__(self, session: StreamSession, session_id: str):
        self.session = session
        self.id = session_id
        self.revision = 0
        self.lock = threading.RLock()
        self.projection_thread: threading.Thread | None = None
        self.projection_error: str | None = None


class SessionStore:
    def __init__(self, data_dir: str | None = None):
        self.data_dir = Path(data_dir) if data_dir else None
        self._entries: dict[str, SessionEntry] = {}
        self._lock = threading.Lock()

    def add(self, session: StreamSession, session_id: str | None = None) -> SessionEntry:
        sid = session_id or uuid.uuid4().hex[:12]
        entry = SessionEntry(session, sid)
        with self._lock:
            self._entries[sid] = entry
        return entry

    def get(self, session_id: str) -> SessionEntry:
        try:
            return self._entries[session_id]
        except KeyError:
            raise ApiError(404, "unknown_session", f"no session {session_id!r}")

    def remove(self, session_id: str) -> None:
        with self._lock:
            self._entries.pop(session_id, None)

    def ids(self) -> list[str]:
        return sorted(self._entries)


def _check_revision(entry: SessionEntry, request: Request) -> None:
    header = request.headers.get("If-Match-Revision")
    if header is None:
        return
    try:
        expected = int(header)
    except ValueError:
        raise ApiError(400, "bad_revision", "If-Match-Revision must be an integer")
    if expected != entry.revision:
        raise ApiError(
            409,
            "stale_revision",
            f"revision {expected} is stale (current {entry.revision})",
        )


def _resolve_sample_set(entry: SessionEntry, name: str) -> list[int]:
    session = entry.session
    if name in ("window:current", "current"):
        ids = session.window.member_ids(session.dataset)
    elif name in ("window:previous", "previous"):
        ids = session.window.previous_member_ids(session.dataset)
    elif name in session.samples_of_interest:
        ids = session.samples_of_interest[name]
    else:
        raise ApiError(404, "unknown_sample_set", f"no sample set {name!r}")
    if not ids:
        raise ApiError(409, "empty_sample_set", f"sample set {name!r} is empty")
    return ids


def _projection_body(entry: SessionEntry) -> dict:
    session = entry.session
    proj = session.projection
    points = [
        [int(sid), float(x), float(y), int(cid)]
        for sid, (x, y), cid in zip(
            proj.ids, proj.solution.coords, proj.labels
        )
    ]
    return {
        "tick": proj.solution.tick,
        "stale": session.projection_stale,
        "points": points,
        "objective_trace": [float(v) for v in proj.solution.objective_trace],
        "revision": entry.revision,
    }


def _run_refresh(entry: SessionEntry) -> None:
    try:
        entry.session.refresh_projection()
        entry.projection_error = None
    except Exception as exc:  # surfaced on the next GET
        entry.projection_error = str(exc)
    finally:
        with entry.lock:
            entry.revision += 1


def create_app(data_dir: str | None = None) -> FastAPI:
    app = FastAPI(
        title="driftlab",
        version="1.0",
        openapi_url=f"{API_PREFIX}/spec",
        docs_url=None,
        redoc_url=None,
    )
    store = SessionStore(data_dir)
    app.state.store = store

    @app.exception_handler(ApiError)
    async def _api_error(_, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    @app.exception_handler(StarletteHTTPException)
    async def _http_error(_, exc: StarletteHTTPException):
        return JSONResponse(
            status_code=exc.status_code,
            content={"code": "http_error", "message": str(exc.detail), "detail": None},
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={
                "code": "invalid_request",
                "message": "request body failed validation",
                "detail": exc.errors(),
            },
        )

    # -- session lifecycle -------------------------------------------------

    @app.post(f"{API_PREFIX}/sessions", status_code=201)
    def create_session(body: dict = Body(...)):
        csv_text = body.get("csv")
        if not csv_text or not str(csv_text).strip():
            raise ApiError(400, "empty_csv", "a non-empty CSV body is required")
        schema_body = body.get("schema") or {}
        if "timestamp" not in schema_body:
            raise ApiError(400, "schema_error", "schema.timestamp is required")
        schema = ColumnSchema(
            timestamp=schema_body["timestamp"],
            label=schema_body.get("label"),
            features=schema_body.get("features"),
        )
        try:
            dataset = ingest_csv(str(csv_text), schema)
            config = SessionConfig.from_dict(body.get("config") or {})
            session = StreamSession.create(dataset, config)
        except (CsvParseError, SchemaError) as exc:
            raise ApiError(
                400, "parse_error", str(exc),
                detail={"row": getattr(exc, "row", None), "column": getattr(exc, "column", None)},
            )
        except ValueError as exc:
            raise ApiError(400, "invalid_config", str(exc))
        entry = store.add(session)
        return {
            "session_id": entry.id,
            "revision": entry.revision,
            "components": _component_summaries(session),
            "n_rows": session.dataset.n,
        }

    def _component_summaries(session: StreamSession) -> list[dict]:
        return [
            {
                "id": c.id,
                "mean": [float(v) for v in c.mean],
                "covariance": [[float(v) for v in row] for row in c.covariance],
                "member_count": c.member_count,
                "created_tick": c.created_tick,
            }
            for c in session.gmm.components
        ]

    @app.get(f"{API_PREFIX}/sessions")
    def list_sessions():
        return {"sessions": store.ids()}

    @app.get(f"{API_PREFIX}/sessions/{{sid}}")
    def session_summary(sid: str):
        entry = store.get(sid)
        with entry.lock:
            s = entry.session
            return {
                "session_id": entry.id,
                "revision": entry.revision,
                "feature_names": s.dataset.feature_names,
                "n_rows": s.dataset.n,
                "last_tick": s.dataset.last_tick(),
                "window_length": s.window.length,
                "window_end": s.window.end_tick,
                "labeled": s.dataset.labels is not None,
                "components": _component_summaries(s),
                "drift_alert_threshold": s.config.drift_alert_threshold,
                "n_drift_points": len(s.drift_series),
                "projection_stale": s.projection_stale,
                "has_projection": s.projection is not None,
                "learner_ids": sorted(s.learners),
                "ensemble": None
                if s.ensemble is None
                else [[lid, w] for lid, w in s.ensemble.members],
                "events": list(s.events),
                "sample_sets": sorted(s.samples_of_interest),
            }

    @app.delete(f"{API_PREFIX}/sessions/{{sid}}")
    def delete_session(sid: str):
        store.get(sid)
        store.remove(sid)
        return {"deleted": sid}

    # -- streaming -----------------------------------------------------------

    @app.post(f"{API_PREFIX}/sessions/{{sid}}/stream")
    def stream_rows(sid: str, request: Request, body: dict = Body(...)):
        entry = store.get(sid)
        rows = body.get("rows") or []
        if not rows:
            raise ApiError(400, "empty_fragment", "rows must be non-empty")
        try:
            ticks = [int(r["tick"]) for r in rows]
            values = [[float(v) for v in r["values"]] for r in rows]
            labels = [r.get("label") for r in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise ApiError(400, "bad_rows", f"malformed stream rows: {exc}")
        with entry.lock:
            _check_revision(entry, request)
            try:
                points = entry.session.advance(
                    ticks, np.asarray(values, dtype=float), labels
                )
            except OutOfOrderError as exc:
                raise ApiError(409, "out_of_order", str(exc))
            except ValueError as exc:
                raise ApiError(400, "bad_rows", str(exc))
            entry.revision += 1
            return {
                "revision": entry.revision,
                "appended": len(rows),
                "drift_points": [p.to_dict() for p in points],
            }

    @app.get(f"{API_PREFIX}/sessions/{{sid}}/drift")
    def drift_series(sid: str, features: str | None = Query(default=None)):
        entry = store.get(sid)
        with entry.lock:
            session = entry.session
            wanted: list[str] = []
            if features:
                wanted = [f.strip() for f in features.split(",") if f.strip()]
                unknown = [f for f in wanted if f not in session.dataset.feature_names]
                if unknown:
                    raise ApiError(400, "unknown_feature", f"unknown features: {unknown}")
            points = []
            for p in session.drift_series:
                row = {"tick": p.tick, "overall": p.overall}
                if wanted:
                    row["per_feature"] = {f: p.per_feature[f] for f in wanted}
                points.append(row)
            return {
                "points": points,
                "alert_threshold": session.config.drift_alert_threshold,
                "revision": entry.revision,
            }

    # -- projection -----------------------------------------------------------

    @app.get(f"{API_PREFIX}/sessions/{{sid}}/projection")
    def get_projection(sid: str):
        entry = store.get(sid)
        with entry.lock:
            if entry.projection_error:
                raise ApiError(500, "projection_failed", entry.projection_error)
            if entry.session.projection is None:
                running = (
                    entry.projection_thread is not None
                    and entry.projection_thread.is_alive()
                )
                raise ApiError(
                    404,
                    "no_projection",
                    "no projection solved yet"
                    + (" (solve in progress)" if running else ""),
                )
            return _projection_body(entry)

    @app.post(f"{API_PREFIX}/sessions/{{sid}}/projection/refresh")
    def refresh_projection(
        sid: str, request: Request, wait: bool = Query(default=False)
    ):
        entry = store.get(sid)
        with entry.lock:
            _check_revision(entry, request)
            if entry.projection_thread is not None and entry.projection_thread.is_alive():
                raise ApiError(409, "solve_running", "a projection solve is already running")
            thread = threading.Thread(target=_run_refresh, args=(entry,), daemon=True)
            entry.projection_thread = thread
            thread.start()
        if wait:
            thread.join()
            with entry.lock:
                if entry.projection_error:
                    raise ApiError(500, "projection_failed", entry.projection_error)
                return _projection_body(entry)
        return JSONResponse(status_code=202, content={"status": "started"})

    # -- density diff -----------------------------------------------------------

    @app.get(f"{API_PREFIX}/sessions/{{sid}}/density-diff")
    def density_diff(
        sid: str,
        newer: str = Query(default="window:current"),
        older: str = Query(default="window:previous"),
    ):
        entry = store.get(sid)
        with entry.lock:
            session = entry.session
            newer_ids = _resolve_sample_set(entry, newer)
            older_ids = _resolve_sample_set(entry, older)
            try:
                diff = session.density_diff_between(
                    newer_ids, older_ids, newer_name=newer, older_name=older
                )
            except (ValueError, KeyError) as exc:
                raise ApiError(409, "projection_required", str(exc))
            body = diff.to_dict()
            body["revision"] = entry.revision
            return body

    # -- components ----------------------------------------------------------------

    @app.post(f"{API_PREFIX}/sessions/{{sid}}/components/merge")
    def merge(sid: str, request: Request, body: dict = Body(...)):
        entry = store.get(sid)
        ids = body.get("component_ids") or []
        if len(set(ids)) < 2:
            raise ApiError(400, "need_two_components", "merge needs at least 2 component ids")
        with entry.lock:
            _check_revision(entry, request)
            try:
                merged_id = entry.session.merge_components([int(i) for i in ids])
            except KeyError as exc:
                raise ApiError(404, "unknown_component", str(exc))
            entry.revision += 1
            return {
                "revision": entry.revision,
                "merged_id": merged_id,
                "components": _component_summaries(entry.session),
            }

    # -- learners and ensemble ---------------------------------------------------

    @app.post(f"{API_PREFIX}/sessions/{{sid}}/learners", status_code=201)
    def create_learner(sid: str, request: Request, body: dict = Body(...)):
        entry = store.get(sid)
        sample_ids = body.get("sample_ids") or []
        if not sample_ids:
            raise ApiError(400, "empty_subset", "sample_ids must be non-empty")
        with entry.lock:
            _check_revision(entry, request)
            try:
                learner = entry.session.add_learner(
                    sample_ids, hyperparams=body.get("hyperparams")
                )
            except KeyError as exc:
                raise ApiError(400, "unknown_sample", str(exc))
            except ValueError as exc:
                raise ApiError(400, "unlabeled_samples", str(exc))
            entry.revision += 1
            return {
                "revision": entry.revision,
                "learner_id": learner.id,
                "component_histogram": {
                    str(c): v for c, v in learner.component_histogram.items()
                },
            }

    @app.get(f"{API_PREFIX}/sessions/{{sid}}/learners")
    def list_learners(sid: str):
        entry = store.get(sid)
        with entry.lock:
            session = entry.session
            weights = dict(session.ensemble.members) if session.ensemble else {}
            return {
                "learners": [
                    {
                        "id": l.id,
                        "training_size": len(l.training_ids),
                        "training_ids": [int(i) for i in l.training_ids],
                        "component_histogram": {
                            str(c): v for c, v in l.component_histogram.items()
                        },
                        "created_tick": l.created_tick,
                        "ensemble_weight": weights.get(l.id),
                    }
                    for l in sorted(session.learners.values(), key=lambda l: l.id)
                ],
                "revision": entry.revision,
            }

    @app.put(f"{API_PREFIX}/sessions/{{sid}}/ensemble")
    def set_ensemble(sid: str, request: Request, body: dict = Body(...)):
        entry = store.get(sid)
        members = body.get("members") or []
        if not members:
            raise ApiError(400, "empty_ensemble", "members must be non-empty")
        ids = [int(m["learner_id"]) for m in members]
        weights = [m.get("weight") for m in members]
        explicit = [w for w in weights if w is not None]
        if explicit and len(explicit) != len(weights):
            raise ApiError(400, "partial_weights", "give weights for all members or none")
        with entry.lock:
            _check_revision(entry, request)
            try:
                entry.session.set_ensemble(ids, explicit if explicit else None)
            except KeyError as exc:
                raise ApiError(400, "unknown_learner", str(exc))
            entry.revision += 1
            return {
                "revision": entry.revision,
                "members": [[lid, w] for lid, w in entry.session.ensemble.members],
            }

    @app.post(f"{API_PREFIX}/sessions/{{sid}}/ensemble/update")
    def update_ensemble(sid: str, request: Request, body: dict = Body(default={})):
        entry = store.get(sid)
        with entry.lock:
            _check_revision(entry, request)
            session = entry.session
            if session.ensemble is None:
                raise ApiError(409, "no_ensemble", "configure an ensemble first")
            ref = body.get("window", "window:current")
            ids = body.get("sample_ids") or _resolve_sample_set(entry, ref)
            try:
                session.update_ensemble(ids)
            except ValueError as exc:
                raise ApiError(400, "unlabeled_window", str(exc))
            entry.revision += 1
            return {
                "revision": entry.revision,
                "members": [[lid, w] for lid, w in session.ensemble.members],
            }

    @app.get(f"{API_PREFIX}/sessions/{{sid}}/performance")
    def performance(
        sid: str,
        compare: str | None = Query(default=None),
        sample_set: str = Query(default="window:current"),
    ):
        entry = store.get(sid)
        with entry.lock:
            session = entry.session
            if session.ensemble is None:
                raise ApiError(409, "no_ensemble", "configure an ensemble first")
            ids = _resolve_sample_set(entry, sample_set)
            try:
                x, y = session.labeled_subset(ids)
            except ValueError as exc:
                raise ApiError(400, "unlabeled_window", str(exc))
            current = ens_mod.performance_summary(
                session.ensemble, session.learners, x, y
            )
            previous = None
            if compare == "prev" and session.previous_ensemble is not None:
                previous = ens_mod.performance_summary(
                    session.previous_ensemble, session.learners, x, y
                ).to_dict()
            return {
                "current": current.to_dict(),
                "previous": previous,
                "revision": entry.revision,
            }

    # -- samples of interest ---------------------------------------------------

    @app.post(f"{API_PREFIX}/sessions/{{sid}}/samples-of-interest")
    def add_sample_set(sid: str, request: Request, body: dict = Body(...)):
        entry = store.get(sid)
        name = body.get("name")
        ids = body.get("sample_ids") or []
        if not name:
            raise ApiError(400, "missing_name", "a set name is required")
        if not ids:
            raise ApiError(400, "empty_set", "sample_ids must be non-empty")
        with entry.lock:
            _check_revision(entry, request)
            session = entry.session
            for i in ids:
                if not session.dataset.has_id(int(i)):
                    raise ApiError(400, "unknown_sample", f"unknown sample id {i}")
            session.samples_of_interest[str(name)] = [int(i) for i in ids]
            entry.revision += 1
            return {"revision": entry.revision, "name": name, "size": len(ids)}

    @app.get(f"{API_PREFIX}/sessions/{{sid}}/samples-of-interest")
    def list_sample_sets(sid: str):
        entry = store.get(sid)
        with entry.lock:
            session = entry.session
            sets = {}
            for name, ids in sorted(session.samples_of_interest.items()):
                info: dict = {"sample_ids": [int(i) for i in ids]}
                info["component_histogram"] = {
                    str(c): v
                    for c, v in ens_mod.component_histogram(
                        [session.assignment_of(i) for i in ids]
                    ).items()
                }
                if session.ensemble is not None:
                    dist = ens_mod.model_distribution(
                        session.ensemble, session.learners, session.dataset.rows_for(ids)
                    )
                    info["model_distribution"] = {str(l): v for l, v in dist.items()}
                sets[name] = info
            return {"sets": sets, "revision": entry.revision}

    # -- persistence ---------------------------------------------------------------

    def _session_path(sid: str) -> Path:
        if store.data_dir is None:
            raise ApiError(409, "no_data_dir", "service started without --data-dir")
        store.data_dir.mkdir(parents=True, exist_ok=True)
        return store.data_dir / f"{sid}.json"

    @app.post(f"{API_PREFIX}/sessions/{{sid}}/save")
    def save_session(sid: str):
        entry = store.get(sid)
        with entry.lock:
            path = _session_path(sid)
            path.write_text(session_to_json(entry.session), encoding="utf-8")
            return {"path": str(path), "revision": entry.revision}

    @app.post(f"{API_PREFIX}/sessions/restore")
    def restore_session(body: dict = Body(...)):
        sid = body.get("session_id")
        if not sid:
            raise ApiError(400, "missing_session_id", "session_id is required")
        path = _session_path(str(sid))
        if not path.exists():
            raise ApiError(404, "no_saved_session", f"nothing saved at {path}")
        session = session_from_json(path.read_text(encoding="utf-8"))
        store.remove(str(sid))
        entry = store.add(session, session_id=str(sid))
        return {"session_id": entry.id, "revision": entry.revision}

    # -- static UI bundle -------------------------------------------------------

    ui_dir = os.environ.get(
        "DRIFTLAB_UI_DIR",
        str(Path(__file__).resolve().parents[2] / "frontend" / "dist"),
    )
    if Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

        @app.get("/")
        def index():
            return FileResponse(str(Path(ui_dir) / "index.html"))

    return app
