"""Configuration for the whole toolkit.

A single JSON file can override any knob; everything has a working
default so the pipeline runs out of the box in mock mode. Sampling
cadence and idle thresholds are deployment assumptions, not measured
constants, which is why they live here.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .llm import LLMConfig


@dataclass
class IngestConfig:
    idle_current_a: float = 5.0
    idle_gap_s: float = 300.0
    voltage_bounds: tuple[float, float] = (1.5, 4.5)
    temp_bounds: tuple[float, float] = (-40.0, 100.0)
    sync_tol_s: float = 2.0


@dataclass
class SelectConfig:
    t_min_s: float = 5400.0
    c_th_a: float = 110.0
    eps_rmse_a: float = 15.0
    trim_fraction: float = 1.0 / 6.0
    signed_threshold: bool = False


@dataclass
class VoltageConfig:
    lam: float | None = None          # None -> 1/sqrt(max(n, m))
    mu_init: float | None = None      # None -> 1.25/sigma_max(A)
    rho: float = 1.5
    tol: float = 1e-7
    max_iter: int = 500
    score_threshold: float = 4.5
    two_sided: bool = False


@dataclass
class HealthConfig:
    lof_k: int = 20
    lof_threshold: float = 1.5
    min_len_s: float = 600.0
    sigma_x: float = 0.01
    sigma_y_rel: float = 0.005
    sigma_y_floor: float = 0.1
    eta: float = 1.0
    q_nom_ah: float = 300.0
    bracket: tuple[float, float] = (0.3, 1.2)
    golden_tol_ah: float = 1e-4


@dataclass
class RecordsConfig:
    pack_count: int = 9


@dataclass
class KnowledgeConfig:
    embed_dim: int = 64
    top_k: int = 5
    include_original: bool = True
    mock_embeddings: bool = True


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    cors_origins: list[str] = field(default_factory=list)
    store_dir: str = "store"
    index_dir: str = "index"
    audit_log_path: str | None = None
    window_days: int = 30


@dataclass
class AppConfig:
    ingest: IngestConfig = field(default_factory=IngestConfig)
    select: SelectConfig = field(default_factory=SelectConfig)
    voltage: VoltageConfig = field(default_factory=VoltageConfig)
    health: HealthConfig = field(default_factory=HealthConfig)
    records: RecordsConfig = field(default_factory=RecordsConfig)
    knowledge: KnowledgeConfig = field(default_factory=KnowledgeConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)
    llm: LLMConfig = field(default_factory=LLMConfig)

    @classmethod
    def from_file(cls, path: str | Path) -> "AppConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "AppConfig":
        config = cls()
        for section_name, values in raw.items():
            section = getattr(config, section_name, None)
            if section is None:
                raise ValueError(f"unknown config section {section_name!r}")
            for key, value in values.items():
                if not hasattr(section, key):
                    raise ValueError(f"unknown config key {section_name}.{key}")
                if isinstance(getattr(section, key), tuple) and isinstance(value, list):
                    value = tuple(value)
                setattr(section, key, value)
        return config

    def to_dict(self) -> dict:
        return asdict(self)
