"""Battery energy storage O&M toolkit.

Turns raw cell-level time series into a date-keyed inconsistency record
dataset (voltage, thermal, health) and answers operator questions through
a routed multi-agent pipeline grounded in that dataset plus a curated
knowledge base.
"""

from .config import AppConfig
from .health import (
    CapacityPair,
    HealthResult,
    SteadySegment,
    ah_integrate,
    detect_steady_segments,
    estimate_capacity,
    lof_scores,
    rawtls_cost,
)
from .ingest import (
    OperationSegment,
    RawChannelTable,
    clean,
    load_csv,
    load_csv_dir,
    segment_operations,
)
from .knowledge import (
    KnowledgeIndex,
    KnowledgeSlice,
    MockEmbeddingProvider,
    RetrievalHit,
    build_embedding_provider,
    expand_query,
    parse_slices,
    retrieve_topk,
)
from .llm import LLMConfig, MockLLM, build_llm_client
from .opselect import FitResult, SelectionParams, fit_constant, select_standard_ops
from .orchestrator import (
    Dependencies,
    FinalAnswer,
    RoutedQuery,
    answer,
    route,
    run_data_agent,
    run_knowledge_agent,
    run_synthesizer,
)
from .records import (
    OperationMeta,
    RecordEntry,
    RecordStore,
    build_entry,
    render_markdown,
)
from .thermal import ThermalEvaluation, evaluate_pack_thermal, tcc, temp_ranges
from .validation import BulletReport, validate_bullets
from .voltage import (
    RpcaParams,
    RpcaResult,
    VoltageEvaluation,
    evaluate_pack_voltage,
    inconsistency_scores,
    rpca_decompose,
    voltage_ranges,
)

__version__ = "0.1.0"
