"""HTTP API over the record store, knowledge index and query pipeline.

The store and index are loaded once at startup and shared read-only by
all requests; refreshing them means restarting the service. Requests are
answered by the same pure pipeline the CLI uses, so concurrent queries
cannot interfere with each other.
"""

from __future__ import annotations

import json
import logging
import threading
from datetime import date
from pathlib import Path

from fastapi import FastAPI, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .config import AppConfig
from .knowledge import (
    KnowledgeError,
    KnowledgeIndex,
    build_embedding_provider,
    retrieve_topk,
)
from .llm import build_llm_client
from .orchestrator import Dependencies, answer
from .records import RecordStore

log = logging.getLogger(__name__)


class QueryRequest(BaseModel):
    question: str


def _error(status: int, message: str, stage: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": message, "stage": stage})


def create_app(config: AppConfig,
               store: RecordStore | None = None,
               index: KnowledgeIndex | None = None,
               llm=None,
               embedder=None) -> FastAPI:
    """Build the application; explicit arguments override on-disk loading.

    Fails fast when the configured store directory cannot be loaded.
    """
    if store is None:
        store = RecordStore.load(config.service.store_dir)
    if index is None:
        index_path = Path(config.service.index_dir)
        if (index_path / "index.json").exists():
            index = KnowledgeIndex.load(index_path)
        else:
            log.warning("no knowledge index at %s; knowledge routes degrade",
                        index_path)
    if llm is None:
        llm = build_llm_client(config.llm)
    if embedder is None:
        embedder = build_embedding_provider(config.knowledge.mock_embeddings,
                                            dim=config.knowledge.embed_dim)

    deps = Dependencies(
        llm=llm, store=store, index=index, embedder=embedder,
        top_k=config.knowledge.top_k,
        include_original=config.knowledge.include_original,
        window_days=config.service.window_days,
    )

    app = FastAPI(title="bess-om")
    if config.service.cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=config.service.cors_origins,
            allow_methods=["*"],
            allow_headers=["*"],
        )

    audit_lock = threading.Lock()
    audit_path = (Path(config.service.audit_log_path)
                  if config.service.audit_log_path else None)

    @app.get("/api/healthz")
    def healthz():
        return {
            "status": "ok",
            "record_entries": len(store.entries),
            "knowledge_slices": len(index) if index is not None else 0,
            "llm_mock": config.llm.mock,
        }

    @app.get("/api/records")
    def records(date_from: str = Query(alias="from"),
                date_to: str = Query(alias="to")):
        try:
            lo, hi = date.fromisoformat(date_from), date.fromisoformat(date_to)
        except ValueError as exc:
            return _error(400, f"bad date: {exc}", "records")
        try:
            entries = store.query_range(lo, hi)
        except ValueError as exc:
            return _error(400, str(exc), "records")
        return {
            "entries": [
                {
                    "date": e.date_key.isoformat(),
                    "operations": [
                        {
                            "start": op.start, "end": op.end,
                            "op_type": op.op_type,
                            "V": op.V, "T": op.T, "H": op.H,
                        }
                        for op in e.operations
                    ],
                }
                for e in entries
            ],
        }

    @app.get("/api/knowledge/search")
    def knowledge_search(q: str, k: int = 5):
        if index is None:
            return _error(503, "no knowledge index loaded", "knowledge")
        try:
            hits = retrieve_topk([q], index, embedder, k=k)
        except (KnowledgeError, ValueError) as exc:
            return _error(400, str(exc), "knowledge")
        return {
            "hits": [
                {
                    "slice_id": h.slice_id,
                    "fused_score": h.fused_score,
                    "key": index.by_id[h.slice_id].key,
                    "body": index.by_id[h.slice_id].body,
                    "source": index.by_id[h.slice_id].source,
                }
                for h in hits
            ],
        }

    @app.post("/api/query")
    def query(request: QueryRequest):
        if not request.question.strip():
            return _error(400, "question must be nonempty", "router")
        try:
            final = answer(request.question, deps)
        except ValueError as exc:
            return _error(400, str(exc), "router")
        doc = final.to_dict(include_timings=True)
        response = {
            "route": doc["route"],
            "bullets": doc["bullets"],
            "degraded": doc["degraded"],
            "data_summary": (final.data_output.data_summary
                             if final.data_output else None),
            "knowledge_summary": (final.knowledge_output.summary
                                  if final.knowledge_output else None),
            "audit": doc["audit"],
            "timings_ms": doc["timings_ms"],
        }
        if audit_path is not None:
            line = json.dumps({"question": request.question, **response},
                              ensure_ascii=False)
            with audit_lock:
                with audit_path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
        return response

    return app
