"""Command-line surface over the pipeline modules.

Every subcommand is a thin wrapper that exits nonzero with a message on
any module error; no analysis logic lives here.
"""

from __future__ import annotations

import json
import sys
from datetime import date

import click

from .config import AppConfig
from .ingest import IngestError, clean, load_csv_dir, segment_operations
from .knowledge import (
    KnowledgeError,
    KnowledgeIndex,
    build_embedding_provider,
    parse_slice_dir,
)
from .llm import build_llm_client
from .orchestrator import Dependencies, answer
from .pipeline import PipelineError, build_record_store, selection_report
from .records import RecordStore, RecordStoreError, render_markdown


def _load_config(path: str | None) -> AppConfig:
    return AppConfig.from_file(path) if path else AppConfig()


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


@click.group()
def main() -> None:
    """Battery-storage O&M toolkit: records pipeline and query service."""


@main.command()
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True),
              help="Directory of per-pack CSV files.")
@click.option("--config", "config_path", type=click.Path(exists=True))
def ingest(in_dir: str, config_path: str | None) -> None:
    """Load, clean and segment raw CSVs; print a JSON summary."""
    cfg = _load_config(config_path)
    try:
        table = clean(load_csv_dir(in_dir), v_bounds=cfg.ingest.voltage_bounds,
                      t_bounds=cfg.ingest.temp_bounds,
                      sync_tol_s=cfg.ingest.sync_tol_s)
        segments = segment_operations(table, cfg.ingest.idle_current_a,
                                      cfg.ingest.idle_gap_s)
    except IngestError as exc:
        _fail(str(exc))
    report = {
        "packs": {
            str(pid): {"rows": pack.n_rows, "cells": pack.n_cells,
                       "sensors": pack.n_sensors}
            for pid, pack in sorted(table.packs.items())
        },
        "cleaning": table.stats.__dict__,
        "issues": table.issues,
        "segments": [
            {"pack_id": s.pack_id, "op_type": s.op_type,
             "duration_s": s.duration_s, "samples": int(s.timestamps.size)}
            for s in segments
        ],
    }
    click.echo(json.dumps(report, indent=2))


@main.command("select-ops")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True))
@click.option("--tmin", type=float, default=5400.0, show_default=True)
@click.option("--cth", type=float, default=110.0, show_default=True)
@click.option("--rmse", type=float, default=15.0, show_default=True)
@click.option("--trim", type=float, default=1.0 / 6.0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
def select_ops(in_dir: str, tmin: float, cth: float, rmse: float, trim: float,
               config_path: str | None) -> None:
    """Screen operations for standard ones; emit the accept/reject report."""
    cfg = _load_config(config_path)
    cfg.select.t_min_s = tmin
    cfg.select.c_th_a = cth
    cfg.select.eps_rmse_a = rmse
    cfg.select.trim_fraction = trim
    try:
        table = clean(load_csv_dir(in_dir), v_bounds=cfg.ingest.voltage_bounds,
                      t_bounds=cfg.ingest.temp_bounds,
                      sync_tol_s=cfg.ingest.sync_tol_s)
        report = selection_report(table, cfg)
    except (IngestError, ValueError) as exc:
        _fail(str(exc))
    click.echo(json.dumps(report, indent=2))


@main.command("build-records")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
def build_records(in_dir: str, out_dir: str, config_path: str | None) -> None:
    """Run ingest -> select -> evaluate -> build and persist the store."""
    cfg = _load_config(config_path)
    try:
        store = build_record_store(in_dir, cfg)
        store.save(out_dir)
    except (IngestError, PipelineError, RecordStoreError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {len(store.entries)} record entries to {out_dir}")


@main.command()
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--from", "date_from", required=False)
@click.option("--to", "date_to", required=False)
def evaluate(store_dir: str, date_from: str | None, date_to: str | None) -> None:
    """Render stored record entries as Markdown."""
    try:
        store = RecordStore.load(store_dir)
        span = store.date_span()
        if span is None:
            _fail("store has no entries")
        lo = date.fromisoformat(date_from) if date_from else span[0]
        hi = date.fromisoformat(date_to) if date_to else span[1]
        entries = store.query_range(lo, hi)
    except (RecordStoreError, ValueError) as exc:
        _fail(str(exc))
    click.echo(render_markdown(entries))


@main.command("kb-build")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
def kb_build(in_dir: str, out_dir: str, config_path: str | None) -> None:
    """Parse knowledge slices and build the semantic-key index."""
    cfg = _load_config(config_path)
    try:
        slices, diagnostics = parse_slice_dir(in_dir)
        provider = build_embedding_provider(cfg.knowledge.mock_embeddings,
                                            dim=cfg.knowledge.embed_dim)
        index = KnowledgeIndex.build(slices, provider)
        index.save(out_dir)
    except KnowledgeError as exc:
        _fail(str(exc))
    for line in diagnostics:
        click.echo(f"warning: {line}", err=True)
    click.echo(f"indexed {len(index)} slices into {out_dir}")


@main.command()
@click.option("--question", required=True)
@click.option("--store", "store_dir", type=click.Path(exists=True))
@click.option("--index", "index_dir", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--audit", is_flag=True, help="Also dump the audit JSON.")
def query(question: str, store_dir: str | None, index_dir: str | None,
          config_path: str | None, audit: bool) -> None:
    """Answer one question and print the final bullets."""
    cfg = _load_config(config_path)
    try:
        store = RecordStore.load(store_dir) if store_dir else None
        index = KnowledgeIndex.load(index_dir) if index_dir else None
        deps = Dependencies(
            llm=build_llm_client(cfg.llm),
            store=store,
            index=index,
            embedder=build_embedding_provider(cfg.knowledge.mock_embeddings,
                                              dim=cfg.knowledge.embed_dim),
            top_k=cfg.knowledge.top_k,
            include_original=cfg.knowledge.include_original,
            window_days=cfg.service.window_days,
        )
        final = answer(question, deps)
    except (RecordStoreError, KnowledgeError, ValueError) as exc:
        _fail(str(exc))
    click.echo(f"route: {final.route}" + ("  [degraded]" if final.degraded else ""))
    for bullet in final.bullets:
        click.echo(f"- {bullet}")
    if audit:
        click.echo(json.dumps(final.to_dict(include_timings=True), indent=2,
                              ensure_ascii=False))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
def serve(config_path: str | None, host: str | None, port: int | None) -> None:
    """Start the HTTP API (loads store and index at startup)."""
    import uvicorn

    from .service import create_app

    cfg = _load_config(config_path)
    if host:
        cfg.service.host = host
    if port:
        cfg.service.port = port
    try:
        app = create_app(cfg)
    except (RecordStoreError, KnowledgeError) as exc:
        _fail(str(exc))
    uvicorn.run(app, host=cfg.service.host, port=cfg.service.port)


if __name__ == "__main__":
    main()
