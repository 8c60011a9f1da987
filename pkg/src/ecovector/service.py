"""HTTP facade for the chat client, schema versioned under /v1.

POST /v1/query answers a question (optionally as a newline-delimited JSON
stream of token frames closed by one timing frame). Document text, index
status, and build/update jobs are exposed alongside. References for recent
queries stay resolvable from the session cache.
"""

from __future__ import annotations

import json
import shutil
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse

from ecovector.errors import (
    EcoVectorError,
    GenerationUnavailable,
    UnknownId,
    UpdateInProgress,
)
from ecovector.ragpipe import Pipeline, QueryResult

SCHEMA_PREFIX = "/v1"
_SESSION_CACHE_LIMIT = 256


@dataclass
class SessionState:
    """References stay resolvable for the most recent queries."""

    session_id: str = "local"
    references: OrderedDict = field(default_factory=OrderedDict)

    def remember(self, query_id: str, references: list[dict]) -> None:
        self.references[query_id] = references
        while len(self.references) > _SESSION_CACHE_LIMIT:
            self.references.popitem(last=False)

    def resolve(self, query_id: str) -> list[dict] | None:
        return self.references.get(query_id)

    @property
    def recent_query_ids(self) -> list[str]:
        return list(self.references)


def _reference_rows(result: QueryResult) -> list[dict]:
    return [
        {"doc_id": r.doc_id, "title": r.title, "score": float(r.score)}
        for r in result.references
    ]


def _bad_request(detail: str) -> JSONResponse:
    return JSONResponse({"detail": detail}, status_code=400)


async def _json_body(request: Request) -> dict | JSONResponse:
    try:
        body = await request.json()
    except Exception:
        return _bad_request("body must be a JSON object")
    if not isinstance(body, dict):
        return _bad_request("body must be a JSON object")
    return body


def create_app(pipeline: Pipeline, allow_origins: tuple[str, ...] = ("*",)) -> FastAPI:
    app = FastAPI(title="ecovector", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(allow_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.pipeline = pipeline
    app.state.session = SessionState()
    app.state.mutation_lock = threading.Lock()
    app.state.job_counter = 0

    def current() -> Pipeline:
        return app.state.pipeline

    def next_job_id() -> str:
        app.state.job_counter += 1
        return f"job-{app.state.job_counter:04d}"

    @app.exception_handler(EcoVectorError)
    async def _domain_errors(_request, exc: EcoVectorError):
        if isinstance(exc, UnknownId):
            return JSONResponse({"detail": str(exc)}, status_code=404)
        if isinstance(exc, UpdateInProgress):
            return JSONResponse({"detail": str(exc)}, status_code=409)
        if isinstance(exc, GenerationUnavailable):
            return JSONResponse({"detail": str(exc)}, status_code=503)
        return JSONResponse({"detail": str(exc)}, status_code=400)

    @app.post(f"{SCHEMA_PREFIX}/query")
    async def query(request: Request):
        body = await _json_body(request)
        if isinstance(body, JSONResponse):
            return body
        text = body.get("text")
        if not isinstance(text, str) or not text.strip():
            return _bad_request("text must be a non-empty string")
        k = body.get("k")
        if k is not None and (not isinstance(k, int) or isinstance(k, bool) or k < 1):
            return _bad_request("k must be a positive integer")
        stream = body.get("stream", False)
        if not isinstance(stream, bool):
            return _bad_request("stream must be a boolean")
        unknown = set(body) - {"text", "k", "stream"}
        if unknown:
            return _bad_request(f"unknown fields: {sorted(unknown)}")

        if not stream:
            result = current().answer_query(text, k=k)
            references = _reference_rows(result)
            app.state.session.remember(result.query_id, references)
            return {
                "query_id": result.query_id,
                "answer": result.answer,
                "references": references,
                "timings": result.timings.to_dict(),
            }

        result, tokens = current().stream_query(text, k=k)
        references = _reference_rows(result)
        app.state.session.remember(result.query_id, references)

        def frames():
            try:
                for token in tokens:
                    yield json.dumps({"type": "token", "token": token}) + "\n"
            except GenerationUnavailable as exc:
                yield json.dumps({"type": "error", "detail": str(exc)}) + "\n"
                return
            yield json.dumps(
                {
                    "type": "end",
                    "query_id": result.query_id,
                    "references": references,
                    "timings": result.timings.to_dict(),
                }
            ) + "\n"

        return StreamingResponse(frames(), media_type="application/x-ndjson")

    @app.get(SCHEMA_PREFIX + "/documents/{doc_id}")
    async def document(doc_id: str):
        try:
            parsed = int(doc_id)
        except ValueError:
            return _bad_request("doc_id must be an integer")
        return current().document(parsed)

    @app.get(SCHEMA_PREFIX + "/queries/{query_id}/references")
    async def references(query_id: str):
        cached = app.state.session.resolve(query_id)
        if cached is None:
            return JSONResponse({"detail": f"unknown query id {query_id}"}, status_code=404)
        return {"query_id": query_id, "references": cached}

    @app.get(f"{SCHEMA_PREFIX}/status")
    async def status():
        return current().status()

    @app.post(f"{SCHEMA_PREFIX}/index/update")
    async def index_update(request: Request):
        body = await _json_body(request)
        if isinstance(body, JSONResponse):
            return body
        add_paths = body.get("add_paths", [])
        remove_doc_ids = body.get("remove_doc_ids", [])
        unknown = set(body) - {"add_paths", "remove_doc_ids"}
        if unknown:
            return _bad_request(f"unknown fields: {sorted(unknown)}")
        if not isinstance(add_paths, list) or not all(isinstance(p, str) for p in add_paths):
            return _bad_request("add_paths must be a list of strings")
        if not isinstance(remove_doc_ids, list) or not all(
            isinstance(d, int) and not isinstance(d, bool) for d in remove_doc_ids
        ):
            return _bad_request("remove_doc_ids must be a list of integers")
        if not app.state.mutation_lock.acquire(blocking=False):
            raise UpdateInProgress("an index mutation is already running")
        try:
            report = current().update(add_paths=add_paths, remove_doc_ids=remove_doc_ids)
        finally:
            app.state.mutation_lock.release()
        return {"job_id": next_job_id(), "state": "completed", **report}

    @app.post(f"{SCHEMA_PREFIX}/index/build")
    async def index_build(request: Request):
        body = await _json_body(request)
        if isinstance(body, JSONResponse):
            return body
        paths = body.get("paths")
        titles = body.get("titles")
        n_c = body.get("n_c")
        unknown = set(body) - {"paths", "titles", "n_c"}
        if unknown:
            return _bad_request(f"unknown fields: {sorted(unknown)}")
        if not isinstance(paths, list) or not paths or not all(
            isinstance(p, str) for p in paths
        ):
            return _bad_request("paths must be a non-empty list of strings")
        if titles is not None and (
            not isinstance(titles, list)
            or len(titles) != len(paths)
            or not all(isinstance(t, str) for t in titles)
        ):
            return _bad_request("titles must parallel paths")
        if n_c is not None and (not isinstance(n_c, int) or isinstance(n_c, bool) or n_c < 1):
            return _bad_request("n_c must be a positive integer")
        for path in paths:
            if not Path(path).is_file():
                return _bad_request(f"not a readable file: {path}")
        if not app.state.mutation_lock.acquire(blocking=False):
            raise UpdateInProgress("an index mutation is already running")
        try:
            old = current()
            index_dir = Path(old.index.files.root).parent
            old.store.close()
            shutil.rmtree(old.index.files.root, ignore_errors=True)
            (index_dir / "tables.db").unlink(missing_ok=True)
            app.state.pipeline = Pipeline.build(
                [Path(p) for p in paths],
                index_dir,
                embedder=old.embedder,
                generator=old.generator,
                n_c=n_c or old.index.n_c,
                hnsw_params=old.index.hnsw_params,
                scr_params=old.scr_params,
                search_params=old.search_params,
                metric=old.index.metric,
                seed=old.index.seed,
                titles=titles,
            )
        finally:
            app.state.mutation_lock.release()
        return {"job_id": next_job_id(), "state": "completed", **current().status()}

    return app
