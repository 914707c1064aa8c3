"""End-to-end record construction: CSV files in, record store out.

Glues ingestion, standard-operation selection and the three evaluations
together. Operations are grouped by start date; every pack present in the
data must yield a standard operation at matching times for a date to
produce a record entry, since entries hold one column per pack.
"""

from __future__ import annotations

import logging
from datetime import date, datetime, timezone

import numpy as np

from .config import AppConfig
from .health import (
    HealthResult,
    SteadySegment,
    ah_integrate,
    detect_steady_segments,
    estimate_capacity,
)
from .ingest import (
    OperationSegment,
    RawChannelTable,
    clean,
    load_csv_dir,
    segment_operations,
)
from .opselect import FitResult, SelectionParams, classify_ops
from .records import (
    OperationMeta,
    RecordEntry,
    RecordStore,
    build_operation,
)
from .thermal import evaluate_pack_thermal
from .voltage import RpcaParams, evaluate_pack_voltage

log = logging.getLogger(__name__)


class PipelineError(Exception):
    pass


def _finite_rows(matrix: np.ndarray) -> np.ndarray:
    return matrix[np.isfinite(matrix).all(axis=1)]


def evaluate_health(op: OperationSegment, cfg: AppConfig) -> HealthResult:
    """Capacity/SOH estimate for one operation of one pack."""
    h = cfg.health
    finite = np.isfinite(op.current) & np.isfinite(op.soc)
    current = op.current[finite]
    soc = op.soc[finite]
    timestamps = op.timestamps[finite]
    if current.size <= h.lof_k:
        raise PipelineError(
            f"pack {op.pack_id}: operation too short for steady-segment detection"
        )
    dt = float(np.median(np.diff(timestamps)))
    segments = detect_steady_segments(
        current, timestamps, k=h.lof_k,
        lof_threshold=h.lof_threshold, min_len_s=h.min_len_s,
    )
    pairs = []
    for seg in segments:
        try:
            pairs.append(ah_integrate(
                seg, current, soc, dt_s=dt, eta=h.eta,
                sigma_x=h.sigma_x, sigma_y_rel=h.sigma_y_rel,
                sigma_y_floor=h.sigma_y_floor,
            ))
        except ValueError:
            continue
    if not pairs:
        # The operation itself passed the stability screen; fall back to
        # integrating it end to end.
        whole = SteadySegment(k1=0, k2=current.size - 1,
                              mean_current=float(current.mean()))
        try:
            pairs = [ah_integrate(
                whole, current, soc, dt_s=dt, eta=h.eta,
                sigma_x=h.sigma_x, sigma_y_rel=h.sigma_y_rel,
                sigma_y_floor=h.sigma_y_floor,
            )]
        except ValueError as exc:
            raise PipelineError(
                f"pack {op.pack_id}: cannot form any capacity pair: {exc}"
            ) from exc
    return estimate_capacity(pairs, q_nom=h.q_nom_ah, bracket=h.bracket,
                             tol_ah=h.golden_tol_ah)


def evaluate_operation(op: OperationSegment, cfg: AppConfig):
    """(VoltageEvaluation, ThermalEvaluation, HealthResult) for one pack-op."""
    v = cfg.voltage
    params = RpcaParams(lam=v.lam, mu_init=v.mu_init, rho=v.rho, tol=v.tol,
                        max_iter=v.max_iter)
    A = _finite_rows(op.A)
    B = _finite_rows(op.B)
    if A.shape[0] < 2 or B.shape[0] < 2:
        raise PipelineError(
            f"pack {op.pack_id}: too few complete rows after cleaning"
        )
    voltage_eval = evaluate_pack_voltage(A, params, threshold=v.score_threshold,
                                         two_sided=v.two_sided)
    thermal_eval = evaluate_pack_thermal(B)
    health_eval = evaluate_health(op, cfg)
    return voltage_eval, thermal_eval, health_eval


def _op_date(op: OperationSegment) -> date:
    return datetime.fromtimestamp(float(op.timestamps[0]), tz=timezone.utc).date()


def _op_meta(op: OperationSegment) -> OperationMeta:
    return OperationMeta(
        start=datetime.fromtimestamp(float(op.timestamps[0]), tz=timezone.utc),
        end=datetime.fromtimestamp(float(op.timestamps[-1]), tz=timezone.utc),
        op_type=op.op_type,
    )


def select_standard(table: RawChannelTable, cfg: AppConfig):
    """Segment the cleaned table and classify each operation."""
    segments = segment_operations(table, cfg.ingest.idle_current_a,
                                  cfg.ingest.idle_gap_s)
    params = SelectionParams(
        t_min_s=cfg.select.t_min_s, c_th_a=cfg.select.c_th_a,
        eps_rmse_a=cfg.select.eps_rmse_a,
        trim_fraction=cfg.select.trim_fraction,
        signed_threshold=cfg.select.signed_threshold,
    )
    return classify_ops(segments, params)


def build_record_store(csv_dir: str, cfg: AppConfig | None = None) -> RecordStore:
    """Ingest a CSV directory and build the record store.

    Standard operations are grouped by (date, start time); a group is
    recorded only when every pack contributed, because entries carry one
    column per pack.
    """
    cfg = cfg or AppConfig()
    table = clean(
        load_csv_dir(csv_dir),
        v_bounds=cfg.ingest.voltage_bounds,
        t_bounds=cfg.ingest.temp_bounds,
        sync_tol_s=cfg.ingest.sync_tol_s,
    )
    verdicts = select_standard(table, cfg)
    standard = [(op, fit) for op, fit, reason in verdicts if reason == "selected"]
    if not standard:
        raise PipelineError("no standard operations found in the input data")

    pack_count = cfg.records.pack_count
    pack_ids = sorted({op.pack_id for op, _ in standard})
    if len(pack_ids) != pack_count:
        raise PipelineError(
            f"expected standard operations from {pack_count} packs, "
            f"found packs {pack_ids}"
        )

    # Group per-pack operations that describe the same cluster operation:
    # same date and start times within the sync tolerance.
    groups: dict[tuple[date, int], dict[int, OperationSegment]] = {}
    for op, _fit in standard:
        key = (_op_date(op), int(round(float(op.timestamps[0]) / 60.0)))
        groups.setdefault(key, {})[op.pack_id] = op

    store = RecordStore(pack_count=pack_count)
    for (op_date, _minute), by_pack in sorted(groups.items()):
        if len(by_pack) != pack_count:
            log.warning(
                "skipping operation on %s: only %d of %d packs qualified",
                op_date.isoformat(), len(by_pack), pack_count,
            )
            continue
        results = []
        meta = None
        for pid in sorted(by_pack):
            op = by_pack[pid]
            results.append(evaluate_operation(op, cfg))
            meta = meta or _op_meta(op)
        record = build_operation(meta, results, pack_count)
        if op_date in store.entries:
            store.entries[op_date] = store.entries[op_date].with_operation(record)
        else:
            store.insert(RecordEntry(op_date, [record]))
    if not store.entries:
        raise PipelineError("no complete cluster operations produced entries")
    return store


def selection_report(table: RawChannelTable, cfg: AppConfig) -> dict:
    """JSON-ready accept/reject report mirroring the screening categories."""
    verdicts = select_standard(table, cfg)
    ops = []
    for op, fit, reason in verdicts:
        ops.append({
            "pack_id": op.pack_id,
            "op_type": op.op_type,
            "start": datetime.fromtimestamp(
                float(op.timestamps[0]), tz=timezone.utc).isoformat(),
            "duration_s": op.duration_s,
            "c_star_a": fit.c_star if isinstance(fit, FitResult) else None,
            "rmse_a": fit.rmse if isinstance(fit, FitResult) else None,
            "selected": reason == "selected",
            "reason": reason,
        })
    summary = {
        "total": len(ops),
        "selected": sum(1 for o in ops if o["selected"]),
        "rejected_short_duration": sum(1 for o in ops if o["reason"] == "short_duration"),
        "rejected_low_magnitude": sum(1 for o in ops if o["reason"] == "low_magnitude"),
        "rejected_high_rmse": sum(1 for o in ops if o["reason"] == "high_rmse"),
    }
    return {"summary": summary, "operations": ops}
