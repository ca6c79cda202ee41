"""HTTP session API for human-in-the-loop cleaning.

A session wraps one cleaning engine plus its example stream.  The annotation
console drives it with three calls: ``advance`` (consume the next stream
example; either it is absorbed as compatible or a query comes back),
``decision`` (submit relabels for the pending query), and ``metrics`` (the
trace so far).  Sessions are independent; each serializes its mutations
behind a lock.  State lives in process memory only - export the trace for
durability.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .cleaning import AnnotatorDecision, CleaningEngine, CounterExampleQuery, Strategy
from .data import DatasetManifest, Example, ExampleSet
from .errors import (
    ConfigurationError,
    ParseError,
    PendingDecisionError,
    StaleQueryError,
)
from .evalx import (
    ExperimentConfig,
    config_from_dict,
    f1_macro,
    prepare_run,
    strategy_from_dict,
    useless_query_count,
)


@dataclass
class DatasetEntry:
    manifest: DatasetManifest
    dataset: ExampleSet


class DatasetRegistry:
    """Named datasets loaded at server start; sessions reference them by name."""

    def __init__(self):
        self._entries: dict[str, DatasetEntry] = {}

    def add(self, manifest: DatasetManifest, dataset: ExampleSet) -> None:
        self._entries[manifest.name] = DatasetEntry(manifest=manifest, dataset=dataset)

    def get(self, name: str) -> DatasetEntry:
        if name not in self._entries:
            raise ConfigurationError(f"unknown dataset {name!r}")
        return self._entries[name]

    def names(self) -> list[str]:
        return sorted(self._entries)


@dataclass
class Session:
    session_id: str
    engine: CleaningEngine
    stream: list[Example]
    test: ExampleSet
    truth: dict[int, int]
    render: dict | None
    class_names: tuple[str, ...]
    feature_names: tuple[str, ...]
    cursor: int = 0
    finished: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def phase(self) -> str:
        if self.finished:
            return "finished"
        return "awaiting-decision" if self.engine.pending is not None else "awaiting-example"


def _render_item(session: Session, example: Example) -> dict:
    if session.render and session.render.get("kind") == "image":
        height = int(session.render["height"])
        width = int(session.render["width"])
        pixels = np.asarray(example.x, dtype=np.float64).reshape(height, width)
        return {"kind": "image", "height": height, "width": width,
                "pixels": [[float(v) for v in row] for row in pixels]}
    names = session.feature_names or tuple(f"f{i}" for i in range(len(example.x)))
    return {"kind": "tabular",
            "features": [{"name": n, "value": float(v)}
                         for n, v in zip(names, example.x)]}


def _query_payload(session: Session, query: CounterExampleQuery) -> dict:
    suspicious = {
        "id": query.suspicious.id,
        "rendered": _render_item(session, query.suspicious),
        "current_label": query.suspicious.observed_label,
        "predicted_label": query.report.predicted,
        "margin": query.report.margin,
    }
    counterexample = None
    if query.counterexample is not None:
        counterexample = {
            "id": query.counterexample.id,
            "rendered": _render_item(session, query.counterexample),
            "current_label": query.counterexample.observed_label,
            "score": query.ce_score,
        }
    return {
        "query_id": query.query_id,
        "iteration": query.iteration,
        "suspicious": suspicious,
        "counterexample": counterexample,
        "class_names": list(session.class_names),
    }


def _metrics_rows(session: Session) -> list[dict]:
    useless = useless_query_count(session.engine.trace, session.truth)
    rows = []
    for i, rec in enumerate(session.engine.trace):
        row = rec.__dict__.copy()
        row["useless_queries"] = useless[i]
        rows.append(row)
    return rows


def _session_view(session: Session) -> dict:
    view = {
        "session_id": session.session_id,
        "phase": session.phase,
        "iteration": session.engine.iteration,
        "dataset_size": len(session.engine.dataset),
        "stream_remaining": len(session.stream) - session.cursor,
        "queries": session.engine.queries,
        "cleaned": session.engine.cleaned_suspicious + session.engine.cleaned_counterexamples,
        "cleaned_ce": session.engine.cleaned_counterexamples,
        "pending": None,
    }
    if session.engine.pending is not None:
        view["pending"] = _query_payload(session, session.engine.pending)
    return view


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def build_session(registry: DatasetRegistry, raw_config: dict) -> Session:
    name = raw_config.get("dataset")
    if not isinstance(name, str):
        raise ConfigurationError("session config needs a dataset name")
    entry = registry.get(name)
    seed = int(raw_config.get("seed", 0))
    cfg_dict = dict(raw_config)
    cfg_dict.pop("dataset", None)
    cfg_dict.pop("strategy", None)
    cfg_dict.setdefault("model", {"kind": "mlp", "hidden_dims": [16, 16]})
    cfg_dict.setdefault("seeds", [seed])
    cfg: ExperimentConfig = config_from_dict(
        cfg_dict, preloaded=(entry.manifest, entry.dataset)
    )

    strategy_raw = raw_config.get("strategy")
    if strategy_raw:
        _, strategy = strategy_from_dict(strategy_raw, cfg.tau)
    else:
        strategy = Strategy(kind="cincer", margin_threshold=cfg.tau)

    bootstrap, stream, test = prepare_run(cfg, seed)
    engine = CleaningEngine(bootstrap, cfg.architecture(seed), cfg.train_config(seed), strategy)
    truth = {**bootstrap.true_labels(), **stream.true_labels()}
    return Session(
        session_id=uuid.uuid4().hex,
        engine=engine,
        stream=list(stream),
        test=test,
        truth=truth,
        render=entry.manifest.render,
        class_names=entry.dataset.class_names,
        feature_names=entry.dataset.feature_names,
    )


def create_app(registry: DatasetRegistry) -> FastAPI:
    app = FastAPI(title="labelclean annotation service")
    sessions: dict[str, Session] = {}

    def get_session(session_id: str) -> Session | None:
        return sessions.get(session_id)

    @app.get("/datasets")
    def list_datasets() -> dict:
        return {"datasets": registry.names()}

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        try:
            raw = await request.json()
        except Exception:
            return _error(400, "bad-json", "request body must be JSON")
        try:
            session = build_session(registry, raw)
        except (ConfigurationError, ParseError, KeyError) as exc:
            return _error(400, "bad-config", str(exc))
        sessions[session.session_id] = session
        return {"session_id": session.session_id, "phase": session.phase}

    @app.get("/sessions/{session_id}")
    def get_state(session_id: str):
        session = get_session(session_id)
        if session is None:
            return _error(404, "no-session", f"unknown session {session_id}")
        return _session_view(session)

    @app.post("/sessions/{session_id}/advance")
    def advance(session_id: str):
        session = get_session(session_id)
        if session is None:
            return _error(404, "no-session", f"unknown session {session_id}")
        with session.lock:
            if session.finished:
                return _error(410, "stream-exhausted", "the stream is exhausted")
            if session.engine.pending is not None:
                return _error(409, "decision-pending",
                              "resolve the pending query before advancing")
            if session.cursor >= len(session.stream):
                session.finished = True
                return _error(410, "stream-exhausted", "the stream is exhausted")
            incoming = session.stream[session.cursor]
            session.cursor += 1
            try:
                outcome = session.engine.advance(incoming)
            except PendingDecisionError as exc:  # pragma: no cover - guarded above
                return _error(409, "decision-pending", str(exc))
            if outcome.status == "compatible":
                return {"status": "compatible", "iteration": session.engine.iteration,
                        "dataset_size": len(session.engine.dataset)}
            return {"status": "query",
                    "payload": _query_payload(session, outcome.query)}

    @app.post("/sessions/{session_id}/decision")
    async def decision(session_id: str, request: Request):
        session = get_session(session_id)
        if session is None:
            return _error(404, "no-session", f"unknown session {session_id}")
        try:
            body = await request.json()
        except Exception:
            return _error(400, "bad-json", "request body must be JSON")
        with session.lock:
            pending = session.engine.pending
            if pending is None or body.get("query_id") != pending.query_id:
                return _error(409, "stale-query",
                              "query_id does not match the pending query")
            y_t = body.get("y_t")
            y_k = body.get("y_k")
            num_classes = session.engine.dataset.num_classes
            labels_to_check = [y_t] + ([y_k] if pending.counterexample is not None else [])
            for label in labels_to_check:
                if not isinstance(label, int) or isinstance(label, bool) or not (
                    1 <= label <= num_classes
                ):
                    return _error(400, "bad-label",
                                  f"labels must be integers in [1, {num_classes}]")
            try:
                record = session.engine.resolve(AnnotatorDecision(
                    suspicious_label=y_t,
                    counterexample_label=y_k if pending.counterexample is not None else None,
                ))
            except StaleQueryError as exc:  # pragma: no cover - guarded above
                return _error(409, "stale-query", str(exc))
            except ConfigurationError as exc:
                return _error(400, "bad-label", str(exc))
            delta = {
                "iteration": record.iteration,
                "cleaned": record.cleaned_suspicious + record.cleaned_counterexamples,
                "cleaned_ce": record.cleaned_counterexamples,
                "queries": record.queries,
                "dataset_size": record.dataset_size,
            }
            if len(session.test) > 0:
                delta["f1"] = f1_macro(session.engine.params, session.test)
            return delta

    @app.get("/sessions/{session_id}/metrics")
    def metrics(session_id: str):
        session = get_session(session_id)
        if session is None:
            return _error(404, "no-session", f"unknown session {session_id}")
        return {"rows": _metrics_rows(session)}

    return app


def serve(registry: DatasetRegistry, host: str, port: int) -> None:  # pragma: no cover
    import uvicorn

    uvicorn.run(create_app(registry), host=host, port=port, log_level="warning")
