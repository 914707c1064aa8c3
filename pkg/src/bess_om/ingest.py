"""Raw measurement ingestion: CSV loading, cleaning, operation segmentation.

Input files carry one battery pack each with the fixed header
``timestamp,current_A,soc,V_cell_001..V_cell_m,T_sens_001..T_sens_p``.
Missing values are empty strings and become NaN internally. Sign
convention throughout: discharge current positive, charge negative.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

VOLTAGE_BOUNDS = (1.5, 4.5)     # volts, plausibility screen
TEMP_BOUNDS = (-40.0, 100.0)    # Celsius, plausibility screen
SYNC_TOLERANCE_S = 2.0
IDLE_CURRENT_A = 5.0
IDLE_GAP_S = 300.0

_PACK_ID_RE = re.compile(r"pack[_-]?(\d+)", re.IGNORECASE)


class IngestError(Exception):
    """Unrecoverable problem with an input file or table."""


class CleaningError(IngestError):
    """A channel cannot be repaired (fewer than 2 valid samples)."""


@dataclass
class PackChannels:
    """All measurement channels of one pack on a shared timestamp grid."""

    timestamps: np.ndarray   # (n,) seconds since epoch
    voltages: np.ndarray     # (n, m) volts
    temps: np.ndarray        # (n, p) Celsius
    current: np.ndarray      # (n,) amperes
    soc: np.ndarray          # (n,) fraction

    @property
    def n_rows(self) -> int:
        return int(self.timestamps.size)

    @property
    def n_cells(self) -> int:
        return int(self.voltages.shape[1])

    @property
    def n_sensors(self) -> int:
        return int(self.temps.shape[1])


@dataclass
class CleaningStats:
    duplicates_removed: int = 0
    rows_dropped_screen: int = 0
    rows_merged_sync: int = 0
    values_filled: int = 0


@dataclass
class RawChannelTable:
    """Per-pack channel data plus parse/clean diagnostics."""

    packs: dict[int, PackChannels] = field(default_factory=dict)
    issues: list[str] = field(default_factory=list)
    stats: CleaningStats = field(default_factory=CleaningStats)


@dataclass(frozen=True)
class OperationSegment:
    """One contiguous charge or discharge operation of one pack."""

    pack_id: int
    op_type: str                 # "charge" | "discharge"
    timestamps: np.ndarray       # (n,)
    A: np.ndarray                # (n, m) cell voltages
    B: np.ndarray                # (q, p) sensor temperatures
    current: np.ndarray          # (n,)
    soc: np.ndarray              # (n,)

    def __post_init__(self) -> None:
        n = self.timestamps.size
        if n < 2:
            raise ValueError("operation segment needs at least 2 samples")
        if not self.timestamps[-1] > self.timestamps[0]:
            raise ValueError("operation segment needs positive duration")
        mean_i = float(np.nanmean(self.current))
        if math.isnan(mean_i):
            raise ValueError("segment current is entirely missing")
        expected = "charge" if mean_i < 0 else "discharge"
        if self.op_type != expected:
            raise ValueError(
                f"op_type {self.op_type!r} contradicts mean current {mean_i:.1f} A"
            )

    @property
    def duration_s(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])


def _parse_timestamp(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    cleaned = text.strip()
    if cleaned.endswith("Z"):
        cleaned = cleaned[:-1] + "+00:00"
    dt = datetime.fromisoformat(cleaned)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _parse_header(header: list[str]) -> tuple[int, int]:
    if header[:3] != ["timestamp", "current_A", "soc"]:
        raise IngestError(
            f"header mismatch: expected timestamp,current_A,soc,... got {header[:3]}"
        )
    rest = header[3:]
    m = sum(1 for c in rest if c.startswith("V_cell_"))
    p = sum(1 for c in rest if c.startswith("T_sens_"))
    if m < 1 or p < 1 or m + p != len(rest):
        raise IngestError("header mismatch: expected V_cell_* then T_sens_* columns")
    if any(c.startswith("T_sens_") for c in rest[:m]) or any(
        c.startswith("V_cell_") for c in rest[m:]
    ):
        raise IngestError("header mismatch: voltage columns must precede temperature columns")
    return m, p


def pack_id_from_filename(path: Path) -> int | None:
    match = _PACK_ID_RE.search(path.name)
    return int(match.group(1)) if match else None


def load_csv(path: str | Path, pack_id: int | None = None) -> RawChannelTable:
    """Parse one per-pack CSV file.

    Unparseable value fields become NaN and are reported in the table's
    issue list rather than silently dropped; rows with a broken timestamp
    cannot be placed on the grid and are reported as skipped. A row whose
    field count disagrees with the header is a hard error.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"input file not found: {path}")
    if pack_id is None:
        pack_id = pack_id_from_filename(path)
        if pack_id is None:
            raise IngestError(
                f"cannot determine pack id from filename {path.name!r}; pass pack_id"
            )

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        m, p = _parse_header([h.strip() for h in header])

        issues: list[str] = []
        t_rows: list[float] = []
        value_rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(header):
                raise IngestError(
                    f"{path}:{lineno}: inconsistent vector length "
                    f"({len(row)} fields, header has {len(header)})"
                )
            try:
                t = _parse_timestamp(row[0])
            except ValueError:
                issues.append(f"{path.name}:{lineno}: unparseable timestamp, row skipped")
                continue
            values = []
            for col, cell in zip(header[1:], row[1:]):
                cell = cell.strip()
                if cell == "":
                    values.append(math.nan)
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    issues.append(
                        f"{path.name}:{lineno}: unparseable {col} value {cell!r}, "
                        "flagged missing"
                    )
                    values.append(math.nan)
            t_rows.append(t)
            value_rows.append(values)

    data = np.asarray(value_rows, dtype=float).reshape(len(value_rows), len(header) - 1)
    pack = PackChannels(
        timestamps=np.asarray(t_rows, dtype=float),
        current=data[:, 0] if data.size else np.empty(0),
        soc=data[:, 1] if data.size else np.empty(0),
        voltages=data[:, 2:2 + m] if data.size else np.empty((0, m)),
        temps=data[:, 2 + m:] if data.size else np.empty((0, p)),
    )
    return RawChannelTable(packs={pack_id: pack}, issues=issues)


def merge_tables(tables: list[RawChannelTable]) -> RawChannelTable:
    """Combine tables (e.g. one file per pack per day) into one."""
    merged = RawChannelTable()
    for table in tables:
        merged.issues.extend(table.issues)
        for pid, pack in table.packs.items():
            if pid not in merged.packs:
                merged.packs[pid] = pack
                continue
            existing = merged.packs[pid]
            if existing.n_cells != pack.n_cells or existing.n_sensors != pack.n_sensors:
                raise IngestError(
                    f"pack {pid}: inconsistent vector length across files "
                    f"({existing.n_cells}x{existing.n_sensors} vs "
                    f"{pack.n_cells}x{pack.n_sensors})"
                )
            merged.packs[pid] = PackChannels(
                timestamps=np.concatenate([existing.timestamps, pack.timestamps]),
                voltages=np.vstack([existing.voltages, pack.voltages]),
                temps=np.vstack([existing.temps, pack.temps]),
                current=np.concatenate([existing.current, pack.current]),
                soc=np.concatenate([existing.soc, pack.soc]),
            )
    return merged


def load_csv_dir(directory: str | Path) -> RawChannelTable:
    """Load and merge every ``*.csv`` under a directory (non-recursive)."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.csv"))
    if not paths:
        raise IngestError(f"no CSV files in {directory}")
    return merge_tables([load_csv(p) for p in paths])


def _row_matrix(pack: PackChannels) -> np.ndarray:
    return np.column_stack([
        pack.current, pack.soc, pack.voltages, pack.temps,
    ])


def _pack_from_rows(pack: PackChannels, t: np.ndarray, rows: np.ndarray) -> PackChannels:
    m = pack.n_cells
    return PackChannels(
        timestamps=t,
        current=rows[:, 0],
        soc=rows[:, 1],
        voltages=rows[:, 2:2 + m],
        temps=rows[:, 2 + m:],
    )


def _screen_mask(pack: PackChannels, rows: np.ndarray,
                 v_bounds: tuple[float, float],
                 t_bounds: tuple[float, float]) -> np.ndarray:
    """True for rows passing the physical plausibility screens."""
    m = pack.n_cells
    volts = rows[:, 2:2 + m]
    temps = rows[:, 2 + m:]
    bad_v = np.nan_to_num(volts, nan=v_bounds[0])
    bad_t = np.nan_to_num(temps, nan=t_bounds[0])
    ok_v = ((bad_v >= v_bounds[0]) & (bad_v <= v_bounds[1])).all(axis=1)
    ok_t = ((bad_t >= t_bounds[0]) & (bad_t <= t_bounds[1])).all(axis=1)
    return ok_v & ok_t


def _sync_rows(t: np.ndarray, rows: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray, int]:
    """Snap complementary near-coincident rows onto one grid instant.

    Two rows within ``tol`` seconds merge only when no channel is valid in
    both (reports from staggered sensor ticks); rows that conflict stay
    separate grid points. The earlier timestamp wins.
    """
    if t.size == 0:
        return t, rows, 0
    grid_t: list[float] = [float(t[0])]
    grid_rows: list[np.ndarray] = [rows[0].copy()]
    merged = 0
    for i in range(1, t.size):
        last = grid_rows[-1]
        incoming = rows[i]
        close = float(t[i]) - grid_t[-1] <= tol
        conflict = bool((~np.isnan(last) & ~np.isnan(incoming)).any())
        if close and not conflict:
            fill = np.isnan(last)
            last[fill] = incoming[fill]
            merged += 1
        else:
            grid_t.append(float(t[i]))
            grid_rows.append(incoming.copy())
    return np.asarray(grid_t), np.asarray(grid_rows), merged


def _fill_isolated(t: np.ndarray, rows: np.ndarray) -> tuple[np.ndarray, int]:
    """Linear-in-time fill of single-sample gaps with valid neighbors."""
    filled = 0
    for col in range(rows.shape[1]):
        series = rows[:, col]
        missing = np.isnan(series)
        if not missing.any():
            continue
        if (~missing).sum() < 2:
            raise CleaningError(
                f"channel column {col} has fewer than 2 valid samples; cannot interpolate"
            )
        idx = np.nonzero(missing)[0]
        for i in idx:
            if 0 < i < series.size - 1 and not np.isnan(series[i - 1]) and not np.isnan(series[i + 1]):
                frac = (t[i] - t[i - 1]) / (t[i + 1] - t[i - 1])
                series[i] = series[i - 1] + frac * (series[i + 1] - series[i - 1])
                filled += 1
    return rows, filled


def clean(
    table: RawChannelTable,
    v_bounds: tuple[float, float] = VOLTAGE_BOUNDS,
    t_bounds: tuple[float, float] = TEMP_BOUNDS,
    sync_tol_s: float = SYNC_TOLERANCE_S,
) -> RawChannelTable:
    """Deduplicate, screen, synchronize and gap-fill every pack.

    Steps per pack: sort by time and keep the first row of each duplicate
    timestamp; drop rows outside the physical screens; snap complementary
    rows within the sync tolerance onto one grid instant; fill isolated
    single-sample gaps by linear interpolation. This order makes the
    operation idempotent. Timestamps are strictly increasing afterwards.
    """
    out = RawChannelTable(issues=list(table.issues))
    stats = out.stats
    for pid in sorted(table.packs):
        pack = table.packs[pid]
        order = np.argsort(pack.timestamps, kind="stable")
        t = pack.timestamps[order]
        rows = _row_matrix(pack)[order]

        keep = np.ones(t.size, dtype=bool)
        keep[1:] = t[1:] != t[:-1]
        stats.duplicates_removed += int((~keep).sum())
        t, rows = t[keep], rows[keep]

        ok = _screen_mask(pack, rows, v_bounds, t_bounds)
        stats.rows_dropped_screen += int((~ok).sum())
        t, rows = t[ok], rows[ok]

        t, rows, merged = _sync_rows(t, rows, sync_tol_s)
        stats.rows_merged_sync += merged

        rows, filled = _fill_isolated(t, rows)
        stats.values_filled += filled

        out.packs[pid] = _pack_from_rows(pack, t, rows)
    return out


def segment_operations(
    table: RawChannelTable,
    idle_current_a: float = IDLE_CURRENT_A,
    idle_gap_s: float = IDLE_GAP_S,
) -> list[OperationSegment]:
    """Cut each pack's series into charge/discharge operations.

    A sample is active when |current| >= ``idle_current_a``; active runs
    separated by less than ``idle_gap_s`` of idle time belong to the same
    operation. Single-sample blips cannot form a segment and are skipped.
    Segments are ordered by (pack, start time) and disjoint within a pack.
    """
    segments: list[OperationSegment] = []
    for pid in sorted(table.packs):
        pack = table.packs[pid]
        with np.errstate(invalid="ignore"):
            active = np.abs(pack.current) >= idle_current_a  # NaN compares False

        runs: list[tuple[int, int]] = []
        start = None
        for i in range(pack.n_rows + 1):
            if i < pack.n_rows and active[i]:
                if start is None:
                    start = i
                continue
            if start is not None:
                runs.append((start, i - 1))
                start = None

        merged: list[tuple[int, int]] = []
        for run in runs:
            if merged and pack.timestamps[run[0]] - pack.timestamps[merged[-1][1]] < idle_gap_s:
                merged[-1] = (merged[-1][0], run[1])
            else:
                merged.append(run)

        for lo, hi in merged:
            if hi <= lo:
                continue
            sl = slice(lo, hi + 1)
            mean_i = float(np.nanmean(pack.current[sl]))
            segments.append(OperationSegment(
                pack_id=pid,
                op_type="charge" if mean_i < 0 else "discharge",
                timestamps=pack.timestamps[sl].copy(),
                A=pack.voltages[sl].copy(),
                B=pack.temps[sl].copy(),
                current=pack.current[sl].copy(),
                soc=pack.soc[sl].copy(),
            ))
    return segments
