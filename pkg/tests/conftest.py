"""Shared fixtures: synthetic measurement days, record stores, scripted LLMs."""

from __future__ import annotations

from datetime import date, datetime, timezone
from pathlib import Path

import numpy as np
import pytest

from bess_om.knowledge import KnowledgeIndex, MockEmbeddingProvider, parse_slices
from bess_om.llm import LLMError, MockLLM
from bess_om.records import (
    OperationMeta,
    OperationRecord,
    RecordEntry,
    RecordStore,
)

EPOCH_START = datetime(2024, 10, 1, 8, 0, tzinfo=timezone.utc).timestamp()


# ---------------------------------------------------------------------------
# Synthetic measurement data
# ---------------------------------------------------------------------------

def synth_pack_rows(
    pack_id: int,
    n_rows: int = 720,
    dt_s: float = 10.0,
    n_cells: int = 8,
    n_sensors: int = 4,
    current_a: float = -120.0,
    start_epoch: float = EPOCH_START,
    seed: int = 7,
):
    """One charge operation: ramping voltages, drifting temps, linear SOC."""
    rng = np.random.default_rng(seed + pack_id)
    t = start_epoch + dt_s * np.arange(n_rows)
    current = np.full(n_rows, current_a)
    soc = np.linspace(0.1, 0.9, n_rows)
    ramp = np.linspace(3.2, 3.4, n_rows)
    offsets = rng.normal(0.0, 0.003, size=n_cells)
    volts = ramp[:, None] + offsets[None, :]
    base_t = 25.0 + np.linspace(0.0, 3.0, n_rows)
    sensor_offsets = np.linspace(0.0, 1.5, n_sensors)
    temps = base_t[:, None] + sensor_offsets[None, :] + rng.normal(0, 0.01, (n_rows, n_sensors))
    return t, current, soc, volts, temps


def write_pack_csv(path: Path, pack_id: int, **kwargs) -> None:
    t, current, soc, volts, temps = synth_pack_rows(pack_id, **kwargs)
    n_cells = volts.shape[1]
    n_sensors = temps.shape[1]
    header = (
        ["timestamp", "current_A", "soc"]
        + [f"V_cell_{i + 1:03d}" for i in range(n_cells)]
        + [f"T_sens_{i + 1:03d}" for i in range(n_sensors)]
    )
    lines = [",".join(header)]
    for i in range(t.size):
        fields = [f"{t[i]:.1f}", f"{current[i]:.3f}", f"{soc[i]:.6f}"]
        fields += [f"{v:.5f}" for v in volts[i]]
        fields += [f"{x:.3f}" for x in temps[i]]
        lines.append(",".join(fields))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@pytest.fixture(scope="session")
def csv_day_dir(tmp_path_factory) -> Path:
    """Three-pack synthetic day of one standard charge operation."""
    directory = tmp_path_factory.mktemp("csvday")
    for pid in (1, 2, 3):
        write_pack_csv(directory / f"pack_{pid}.csv", pid)
    return directory


# ---------------------------------------------------------------------------
# Hand-built record stores
# ---------------------------------------------------------------------------

def make_operation(packs: int = 9, dv_max: float = 0.12, tcc: float = 0.8) -> OperationRecord:
    return OperationRecord(
        start="2024-10-01T08:00:00+00:00",
        end="2024-10-01T10:00:00+00:00",
        op_type="charge",
        V=[[dv_max + 0.01 * i for i in range(packs)],
           [0.04 + 0.005 * i for i in range(packs)],
           [i % 3 for i in range(packs)]],
        T=[[2.0 + 0.1 * i for i in range(packs)],
           [1.0 + 0.05 * i for i in range(packs)],
           [tcc for _ in range(packs)]],
        H=[0.97 - 0.002 * i for i in range(packs)],
    )


def make_store(dates: list[date], packs: int = 9, **op_kwargs) -> RecordStore:
    store = RecordStore(pack_count=packs)
    for d in dates:
        store.insert(RecordEntry(d, [make_operation(packs, **op_kwargs)]))
    return store


@pytest.fixture()
def fixture_store() -> RecordStore:
    return make_store([date(2024, 10, 1), date(2024, 10, 2), date(2024, 10, 5)])


# ---------------------------------------------------------------------------
# Knowledge corpus
# ---------------------------------------------------------------------------

SAMPLE_CORPUS = """\
# Manufacturing variance seeds initial cell inconsistency
Small differences in electrode coating thickness, electrolyte wetting and
tab welding leave every fresh pack with a distribution of cell capacities
and internal resistances. Under identical load these differences translate
into diverging state of charge and voltage, so even a new storage pack
shows a nonzero voltage spread. Typical capacity spread at delivery is
below two percent, but it widens with cycling because weaker cells run at
higher depth of discharge, which accelerates their fade relative to the
rest of the pack and compounds the initial imbalance over the service life.

# Temperature gradients accelerate local aging and widen voltage spread
Cells running a few degrees hotter age measurably faster because side
reactions roughly double their rate for every ten degree rise. A cooling
layout that leaves corner cells warmer therefore produces uneven capacity
fade across the pack. The aged cells then swing to wider voltage extremes
during charge and discharge, so a persistent temperature gradient first
appears as thermal spread and later as growing voltage inconsistency and
a falling usable capacity of the whole series string.

# Balancing circuits bound voltage divergence but not capacity fade
Passive balancing bleeds charge from high cells through resistors and can
hold the end-of-charge voltage spread within a few tens of millivolts per
module. It cannot restore lost capacity: once a cell has faded, balancing
only hides the symptom at the top of charge while the usable range of the
string still shrinks to the weakest cell. Monitoring the spread during the
whole operation, not only at full charge, therefore reveals weak cells
earlier than end-of-charge checks alone.

# Loose or corroded connections mimic cell inconsistency
A high-resistance busbar joint adds a voltage offset proportional to the
current, so the affected cell group shows exaggerated spread under load
that disappears at rest. Distinguishing contact faults from true cell
divergence requires comparing spreads at different current levels: real
cell inconsistency persists at low current, while connection problems
scale with load. Infrared inspection of joints during a high-power
operation localizes such faults quickly and avoids replacing healthy cells.

# Coulomb counting drift makes single-point SOC references unreliable
Integrating current to track state of charge accumulates sensor bias over
time, typically a few percent per week without correction. Capacity
estimates that compare state-of-charge readings far apart in time are
therefore biased unless the counter is regularly re-anchored at rest
voltage or full charge. Using many shorter steady segments and a weighted
fit that accounts for errors in both charge and state of charge reduces
the influence of any single drifted reading on the capacity estimate.

# Cooling system faults show up first as thermal consistency loss
A clogged coolant channel or failed fan changes the spatial temperature
pattern of a pack before any electrical symptom appears. Tracking a
time-integrated consistency measure of the sensor spread separates such
persistent structural changes from brief load-driven spikes. A sustained
drop in thermal consistency with unchanged electrical spread points to the
cooling path, whereas simultaneous electrical divergence suggests the
heat source is an aging or faulty cell group itself.
"""


@pytest.fixture(scope="session")
def sample_slices():
    slices, _ = parse_slices(SAMPLE_CORPUS, source="sample")
    return slices


@pytest.fixture(scope="session")
def mock_embedder():
    return MockEmbeddingProvider()


@pytest.fixture(scope="session")
def sample_index(sample_slices, mock_embedder) -> KnowledgeIndex:
    return KnowledgeIndex.build(sample_slices, mock_embedder)


# ---------------------------------------------------------------------------
# LLM test doubles
# ---------------------------------------------------------------------------

class ScriptedLLM:
    """Replays queued responses per stage; optional fallback client."""

    def __init__(self, script: dict[str, list[str]], fallback=None):
        self.script = {k: list(v) for k, v in script.items()}
        self.fallback = fallback
        self.calls: list[str] = []

    def complete(self, stage: str, system: str, user: str) -> str:
        self.calls.append(stage)
        queue = self.script.get(stage)
        if queue:
            return queue.pop(0)
        if self.fallback is not None:
            return self.fallback.complete(stage, system, user)
        raise AssertionError(f"no scripted response for stage {stage!r}")


class CallRecorder:
    """Transparent wrapper recording every stage invocation."""

    def __init__(self, inner):
        self.inner = inner
        self.calls: list[str] = []

    def complete(self, stage: str, system: str, user: str) -> str:
        self.calls.append(stage)
        return self.inner.complete(stage, system, user)


class FailingLLM:
    def complete(self, stage: str, system: str, user: str) -> str:
        raise LLMError(f"injected transport failure at stage {stage!r}")


class CountingEmbedder(MockEmbeddingProvider):
    """Mock embedder that counts embed() calls (index-touch detector)."""

    def __init__(self, dim: int = 64):
        super().__init__(dim)
        self.calls = 0

    def embed(self, texts):
        self.calls += 1
        return super().embed(texts)


@pytest.fixture()
def mock_llm() -> MockLLM:
    return MockLLM()
