"""Date-keyed record dataset of per-pack inconsistency summaries.

Each entry covers one operation date and holds, per standard operation,
three matrices: V (voltage spread max/mean and bad-cell count per pack),
T (temperature spread max/mean and thermal consistency coefficient per
pack) and H (state of health per pack). Entries persist as one JSON
document per date inside a directory store with a manifest.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from datetime import date, datetime
from pathlib import Path

from .health import HealthResult
from .thermal import ThermalEvaluation
from .voltage import VoltageEvaluation

SCHEMA_VERSION = 1
DEFAULT_PACK_COUNT = 9
RENDER_SIGFIGS = 4

_DATE_FILE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}\.json$")

log = logging.getLogger(__name__)


class RecordStoreError(Exception):
    """Malformed store content or invariant violation."""


@dataclass(frozen=True)
class OperationMeta:
    start: datetime
    end: datetime
    op_type: str

    def __post_init__(self) -> None:
        if self.op_type not in ("charge", "discharge"):
            raise RecordStoreError(f"unknown op_type {self.op_type!r}")
        if self.end < self.start:
            raise RecordStoreError("operation end precedes start")


@dataclass
class OperationRecord:
    """V/T/H matrices of one standard operation, one column per pack."""

    start: str                  # ISO-8601
    end: str                    # ISO-8601
    op_type: str
    V: list[list[float]]        # 3 x P: max spread, mean spread, bad cells
    T: list[list[float]]        # 3 x P: max spread, mean spread, TCC
    H: list[float]              # P: SOH fractions

    def __post_init__(self) -> None:
        packs = len(self.H)
        if len(self.V) != 3 or len(self.T) != 3:
            raise RecordStoreError("V and T must have exactly 3 rows")
        for row in (*self.V, *self.T):
            if len(row) != packs:
                raise RecordStoreError("matrix rows must have one column per pack")
        if any(hi < lo for hi, lo in zip(self.V[0], self.V[1])):
            raise RecordStoreError("V row 1 (max spread) must dominate row 2 (mean)")
        if any(hi < lo for hi, lo in zip(self.T[0], self.T[1])):
            raise RecordStoreError("T row 1 (max spread) must dominate row 2 (mean)")
        for count in self.V[2]:
            if count < 0 or float(count) != int(count):
                raise RecordStoreError(
                    f"V row 3 must hold nonnegative integer cell counts, got {count!r}"
                )
        self.V[2] = [int(c) for c in self.V[2]]
        for soh in self.H:
            if not (0.0 < soh <= 1.5):
                raise RecordStoreError(f"SOH {soh!r} outside (0, 1.5]")
        if self.op_type not in ("charge", "discharge"):
            raise RecordStoreError(f"unknown op_type {self.op_type!r}")

    @property
    def pack_count(self) -> int:
        return len(self.H)


@dataclass
class RecordEntry:
    date_key: date
    operations: list[OperationRecord]

    def __post_init__(self) -> None:
        if not self.operations:
            raise RecordStoreError("entry must contain at least one operation")
        counts = {op.pack_count for op in self.operations}
        if len(counts) != 1:
            raise RecordStoreError("operations in one entry disagree on pack count")

    @property
    def pack_count(self) -> int:
        return self.operations[0].pack_count

    def with_operation(self, other: OperationRecord) -> RecordEntry:
        return RecordEntry(self.date_key, [*self.operations, other])


PackResults = tuple[VoltageEvaluation, ThermalEvaluation, HealthResult]


def build_operation(meta: OperationMeta, per_pack_results: list[PackResults],
                    pack_count: int = DEFAULT_PACK_COUNT) -> OperationRecord:
    if len(per_pack_results) != pack_count:
        raise RecordStoreError(
            f"expected {pack_count} pack results, got {len(per_pack_results)}"
        )
    volts = [r[0] for r in per_pack_results]
    therm = [r[1] for r in per_pack_results]
    health = [r[2] for r in per_pack_results]
    return OperationRecord(
        start=meta.start.isoformat(),
        end=meta.end.isoformat(),
        op_type=meta.op_type,
        V=[
            [v.dv_max for v in volts],
            [v.dv_mean for v in volts],
            [v.inconsistent_count for v in volts],
        ],
        T=[
            [t.dt_max for t in therm],
            [t.dt_mean for t in therm],
            [t.tcc for t in therm],
        ],
        H=[h.soh for h in health],
    )


def build_entry(entry_date: date, per_pack_results: list[PackResults],
                meta: OperationMeta,
                pack_count: int = DEFAULT_PACK_COUNT) -> RecordEntry:
    """One record entry from one operation's per-pack evaluations.

    ``per_pack_results`` must be ordered by pack index and contain exactly
    ``pack_count`` items. Further operations on the same date are appended
    with :meth:`RecordEntry.with_operation`.
    """
    return RecordEntry(entry_date, [build_operation(meta, per_pack_results, pack_count)])


class RecordStore:
    """In-memory record dataset with a directory-of-JSON persistence format."""

    def __init__(self, pack_count: int = DEFAULT_PACK_COUNT):
        self.pack_count = pack_count
        self.entries: dict[date, RecordEntry] = {}

    def insert(self, entry: RecordEntry) -> None:
        if entry.pack_count != self.pack_count:
            raise RecordStoreError(
                f"entry has {entry.pack_count} packs, store expects {self.pack_count}"
            )
        if entry.date_key in self.entries:
            log.warning("replacing record entry for %s", entry.date_key.isoformat())
        self.entries[entry.date_key] = entry

    def query_range(self, date_from: date, date_to: date) -> list[RecordEntry]:
        """Entries with date_from <= key <= date_to, ascending.

        Partial coverage of the range is normal and never an error; only an
        inverted range is rejected.
        """
        if date_from > date_to:
            raise ValueError(
                f"inverted range: {date_from.isoformat()} > {date_to.isoformat()}"
            )
        keys = sorted(k for k in self.entries if date_from <= k <= date_to)
        return [self.entries[k] for k in keys]

    def date_span(self) -> tuple[date, date] | None:
        if not self.entries:
            return None
        keys = sorted(self.entries)
        return keys[0], keys[-1]

    # -- persistence --------------------------------------------------

    def save(self, store_path: str | Path) -> None:
        """Write manifest plus one canonical JSON document per entry.

        Canonical form: fixed key order, UTF-8, newline-terminated.
        Stale per-date files from a previous save are removed.
        """
        store_path = Path(store_path)
        store_path.mkdir(parents=True, exist_ok=True)
        manifest = {"schema_version": SCHEMA_VERSION, "pack_count": self.pack_count}
        _write_json(store_path / "manifest.json", manifest)

        wanted = {f"{k.isoformat()}.json" for k in self.entries}
        for stale in store_path.glob("*.json"):
            if _DATE_FILE_RE.match(stale.name) and stale.name not in wanted:
                stale.unlink()
        for key in sorted(self.entries):
            entry = self.entries[key]
            doc = {
                "schema_version": SCHEMA_VERSION,
                "date": key.isoformat(),
                "operations": [
                    {
                        "start": op.start,
                        "end": op.end,
                        "op_type": op.op_type,
                        "V": op.V,
                        "T": op.T,
                        "H": op.H,
                    }
                    for op in entry.operations
                ],
            }
            _write_json(store_path / f"{key.isoformat()}.json", doc)

    @classmethod
    def load(cls, store_path: str | Path) -> RecordStore:
        store_path = Path(store_path)
        manifest_path = store_path / "manifest.json"
        if not manifest_path.exists():
            raise RecordStoreError(f"missing manifest: {manifest_path}")
        manifest = _read_json(manifest_path)
        version = manifest.get("schema_version")
        if version != SCHEMA_VERSION:
            raise RecordStoreError(
                f"unsupported schema_version {version!r}, expected {SCHEMA_VERSION}"
            )
        store = cls(pack_count=int(manifest["pack_count"]))
        for path in sorted(store_path.glob("*.json")):
            if not _DATE_FILE_RE.match(path.name):
                continue
            doc = _read_json(path)
            if doc.get("schema_version") != SCHEMA_VERSION:
                raise RecordStoreError(
                    f"{path.name}: unsupported schema_version {doc.get('schema_version')!r}"
                )
            try:
                entry = RecordEntry(
                    date_key=date.fromisoformat(doc["date"]),
                    operations=[
                        OperationRecord(
                            start=op["start"], end=op["end"], op_type=op["op_type"],
                            V=op["V"], T=op["T"], H=op["H"],
                        )
                        for op in doc["operations"]
                    ],
                )
            except (KeyError, TypeError) as exc:
                raise RecordStoreError(f"{path.name}: malformed entry: {exc}") from exc
            store.insert(entry)
        return store


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, ensure_ascii=False, indent=1) + "\n",
                    encoding="utf-8")


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RecordStoreError(f"{path.name}: malformed JSON: {exc}") from exc


def _fmt(value: float, sigfigs: int = RENDER_SIGFIGS) -> str:
    return f"{value:.{sigfigs}g}"


ROW_CAPTIONS_V = (
    "V_row1 (worst-case spread)",
    "V_row2 (average spread)",
    "V_row3 (bad cells)",
)
ROW_CAPTIONS_T = (
    "T_row1 (worst-case spread)",
    "T_row2 (average spread)",
    "T_row3 (thermal consistency coefficient)",
)
ROW_CAPTION_H = "H_row1 (SOH)"
TCC_ANNOTATION = "(out-of-range)"


def render_markdown(entries: list[RecordEntry]) -> str:
    """Deterministic Markdown rendering of record entries.

    One section per date, one table per operation, row captions matching
    the meanings the analysis prompts rely on. Values use 4 significant
    digits; a thermal consistency coefficient outside [0, 1] is annotated.
    """
    lines: list[str] = []
    for entry in entries:
        lines.append(f"## {entry.date_key.isoformat()}")
        lines.append("")
        for idx, op in enumerate(entry.operations, start=1):
            lines.append(
                f"### Operation {idx}: {op.op_type}, {op.start} to {op.end}"
            )
            lines.append("")
            packs = op.pack_count
            header = "| metric | " + " | ".join(f"pack {i + 1}" for i in range(packs)) + " |"
            rule = "|---" * (packs + 1) + "|"
            lines.append(header)
            lines.append(rule)
            for caption, row in zip(ROW_CAPTIONS_V, op.V):
                if caption is ROW_CAPTIONS_V[2]:
                    cells = [str(int(c)) for c in row]
                else:
                    cells = [_fmt(c) for c in row]
                lines.append(f"| {caption} | " + " | ".join(cells) + " |")
            for caption, row in zip(ROW_CAPTIONS_T, op.T):
                cells = []
                for c in row:
                    text = _fmt(c)
                    if caption is ROW_CAPTIONS_T[2] and not (0.0 <= c <= 1.0):
                        text = f"{text} {TCC_ANNOTATION}"
                    cells.append(text)
                lines.append(f"| {caption} | " + " | ".join(cells) + " |")
            lines.append(f"| {ROW_CAPTION_H} | " + " | ".join(_fmt(h) for h in op.H) + " |")
            lines.append("")
    return "\n".join(lines)
