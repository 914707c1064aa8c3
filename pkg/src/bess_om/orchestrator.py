"""Routed multi-agent query pipeline.

A question is classified into a data, knowledge, or combined route. The
data branch renders record entries into the analysis prompt; the
knowledge branch expands the query, retrieves slices, asks for an
independent expert view and integrates both; the synthesizer fuses branch
summaries into the final bullet answer. Every model call is recorded
verbatim (prompts, raw replies, timings) in an audit trail, and any
single-stage failure degrades the answer instead of crashing it.
"""

from __future__ import annotations

import json
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, timedelta

from .knowledge import (
    DEFAULT_TOP_K,
    KnowledgeError,
    KnowledgeIndex,
    RetrievalHit,
    expand_query,
    render_snippets,
    retrieve_topk,
)
from .llm import PROMPT_VERSION, LLMError, load_prompt, render_prompt
from .records import RecordStore, render_markdown
from .validation import (
    KNOWLEDGE_PREFIXES,
    TAGS_NOT_REQUIRED,
    TAGS_REQUIRED,
    BulletReport,
    split_bullets,
    validate_bullets,
)

ROUTES = ("data_only", "knowledge_only", "data_and_knowledge")
REPAIR_INSTRUCTION = "Return only the single JSON object, no code fences."
DEFAULT_WINDOW_DAYS = 30

# Canonical stage ordering for reproducible audit serialization; the two
# branches of a comprehensive query run concurrently.
STAGE_ORDER = ("router", "expansion", "retrieval", "expert", "integrator",
               "data", "synthesizer")

_ISO_DATE_RE = re.compile(r"\b(\d{4}-\d{2}-\d{2})\b")


class AgentError(Exception):
    """Unrecoverable pipeline-stage failure."""


class ProtocolError(AgentError):
    """The model's reply violated the required output contract."""


# ---------------------------------------------------------------------------
# Audit trail
# ---------------------------------------------------------------------------

@dataclass
class StageRecord:
    stage: str
    system_prompt: str
    user_prompt: str
    raw_response: str
    elapsed_ms: float
    retried: bool = False

    def to_dict(self, include_timings: bool = True) -> dict:
        doc = {
            "stage": self.stage,
            "system_prompt": self.system_prompt,
            "user_prompt": self.user_prompt,
            "raw_response": self.raw_response,
            "retried": self.retried,
        }
        if include_timings:
            doc["elapsed_ms"] = self.elapsed_ms
        return doc


class AuditTrail:
    """Thread-safe collector of per-stage records and timings."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.stages: list[StageRecord] = []

    def record(self, record: StageRecord) -> None:
        with self._lock:
            self.stages.append(record)

    def timings_ms(self) -> dict[str, float]:
        totals: dict[str, float] = {}
        with self._lock:
            for rec in self.stages:
                totals[rec.stage] = totals.get(rec.stage, 0.0) + rec.elapsed_ms
        return totals

    def ordered_stages(self) -> list[StageRecord]:
        """Records sorted by canonical stage order, then call sequence."""
        with self._lock:
            snapshot = list(self.stages)
        rank = {name: i for i, name in enumerate(STAGE_ORDER)}
        indexed = list(enumerate(snapshot))
        indexed.sort(key=lambda pair: (rank.get(pair[1].stage, len(rank)), pair[0]))
        return [rec for _, rec in indexed]


class RecordingLLM:
    """Client wrapper that logs every call into an audit trail."""

    def __init__(self, client, trail: AuditTrail):
        self._client = client
        self._trail = trail

    def complete(self, stage: str, system: str, user: str) -> str:
        start = time.perf_counter()
        try:
            reply = self._client.complete(stage, system, user)
        except Exception:
            self._trail.record(StageRecord(
                stage=stage, system_prompt=system, user_prompt=user,
                raw_response="<transport failure>",
                elapsed_ms=(time.perf_counter() - start) * 1000.0,
            ))
            raise
        self._trail.record(StageRecord(
            stage=stage, system_prompt=system, user_prompt=user,
            raw_response=reply,
            elapsed_ms=(time.perf_counter() - start) * 1000.0,
        ))
        return reply


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoutedQuery:
    route: str
    data_query: str = ""
    knowledge_query: str = ""
    date_from: date | None = None
    date_to: date | None = None
    degraded: bool = False

    def __post_init__(self) -> None:
        if self.route not in ROUTES:
            raise ValueError(f"unknown route {self.route!r}")
        if self.route == "data_only" and self.knowledge_query:
            raise ValueError("data_only must carry an empty knowledge_query")
        if self.route == "knowledge_only" and self.data_query:
            raise ValueError("knowledge_only must carry an empty data_query")

    def to_dict(self) -> dict:
        return {
            "route": self.route,
            "data_query": self.data_query,
            "knowledge_query": self.knowledge_query,
            "date_from": self.date_from.isoformat() if self.date_from else None,
            "date_to": self.date_to.isoformat() if self.date_to else None,
            "degraded": self.degraded,
        }


@dataclass
class DataAgentOutput:
    data_analysis: str
    data_summary: str
    data_brief: str
    no_records: bool = False
    degraded: bool = False
    violations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "data_analysis": self.data_analysis,
            "data_summary": self.data_summary,
            "data_brief": self.data_brief,
            "no_records": self.no_records,
            "degraded": self.degraded,
            "violations": [v.__dict__ for v in self.violations],
        }


@dataclass
class KnowledgeAgentOutput:
    relevance: str
    rag_view: str
    llm_view: str
    summary: str
    degraded: bool = False
    violations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "relevance": self.relevance,
            "rag_view": self.rag_view,
            "llm_view": self.llm_view,
            "summary": self.summary,
            "degraded": self.degraded,
            "violations": [v.__dict__ for v in self.violations],
        }


@dataclass
class FinalAnswer:
    route: str
    bullets: list[str]
    degraded: bool
    router_output: RoutedQuery | None = None
    data_output: DataAgentOutput | None = None
    knowledge_output: KnowledgeAgentOutput | None = None
    retrieval_hits: list[RetrievalHit] = field(default_factory=list)
    trail: AuditTrail = field(default_factory=AuditTrail)
    violations: list = field(default_factory=list)

    def to_dict(self, include_timings: bool = True) -> dict:
        doc = {
            "route": self.route,
            "bullets": self.bullets,
            "degraded": self.degraded,
            "audit": {
                "prompt_version": PROMPT_VERSION,
                "router_output": self.router_output.to_dict() if self.router_output else None,
                "data_output": self.data_output.to_dict() if self.data_output else None,
                "knowledge_output": (
                    self.knowledge_output.to_dict() if self.knowledge_output else None
                ),
                "retrieval_hits": [h.__dict__ for h in self.retrieval_hits],
                "stages": [rec.to_dict(include_timings)
                           for rec in self.trail.ordered_stages()],
                "violations": [v.__dict__ for v in self.violations],
            },
        }
        if include_timings:
            doc["timings_ms"] = self.trail.timings_ms()
        return doc

    def canonical_json(self) -> str:
        """Timing-free serialization; identical runs are byte-identical."""
        return json.dumps(self.to_dict(include_timings=False), ensure_ascii=False)


@dataclass
class Dependencies:
    """Everything answer() needs besides the question itself."""

    llm: object
    store: RecordStore | None = None
    index: KnowledgeIndex | None = None
    embedder: object | None = None
    top_k: int = DEFAULT_TOP_K
    include_original: bool = True
    window_days: int = DEFAULT_WINDOW_DAYS


# ---------------------------------------------------------------------------
# JSON protocol helpers
# ---------------------------------------------------------------------------

def parse_date_range(text: str) -> tuple[date | None, date | None]:
    """Strict ISO dates found in free text, as an inclusive (min, max)."""
    found: list[date] = []
    for token in _ISO_DATE_RE.findall(text):
        try:
            found.append(date.fromisoformat(token))
        except ValueError:
            continue
    if not found:
        return None, None
    return min(found), max(found)


def _parse_json_object(text: str, validate) -> dict:
    stripped = text.strip()
    if "```" in stripped:
        raise ProtocolError("reply wrapped in code fences")
    try:
        obj = json.loads(stripped)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"reply is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError("reply is not a JSON object")
    validate(obj)
    return obj


def _require_str_fields(obj: dict, *names: str) -> None:
    for name in names:
        if not isinstance(obj.get(name), str):
            raise ProtocolError(f"missing or non-string field {name!r}")


def _json_call(llm, stage: str, system: str, user: str, validate) -> dict:
    """One model call with exactly one repair retry on protocol violation."""
    try:
        return _parse_json_object(llm.complete(stage, system, user), validate)
    except ProtocolError:
        repaired = llm.complete(stage, system, user + "\n\n" + REPAIR_INSTRUCTION)
        return _parse_json_object(repaired, validate)


# ---------------------------------------------------------------------------
# Stage operations
# ---------------------------------------------------------------------------

def route(question: str, llm) -> RoutedQuery:
    """Classify the question and split it into sub-queries.

    Unrecoverable protocol or transport failure falls back to the
    combined route with both sub-queries set to the question, flagged
    degraded. Sub-query emptiness is normalized to match the route.
    """
    if not question.strip():
        raise ValueError("question must be nonempty")
    system = load_prompt("router.system")

    def check(obj: dict) -> None:
        _require_str_fields(obj, "route", "data_query", "knowledge_query")
        if obj["route"] not in ROUTES:
            raise ProtocolError(f"invalid route {obj['route']!r}")

    try:
        obj = _json_call(llm, "router", system, question, check)
    except (ProtocolError, LLMError):
        date_from, date_to = parse_date_range(question)
        return RoutedQuery(
            route="data_and_knowledge", data_query=question,
            knowledge_query=question, date_from=date_from, date_to=date_to,
            degraded=True,
        )

    route_name = obj["route"]
    data_query = obj["data_query"] if route_name != "knowledge_only" else ""
    knowledge_query = obj["knowledge_query"] if route_name != "data_only" else ""
    date_from, date_to = parse_date_range(data_query)
    return RoutedQuery(
        route=route_name, data_query=data_query,
        knowledge_query=knowledge_query, date_from=date_from, date_to=date_to,
    )


def _bullet_feedback(report: BulletReport) -> str:
    problems = "; ".join(f"{v.rule}: {v.detail}" for v in report.violations)
    return (
        f"\n\nYour previous reply violated the required bullet format "
        f"({problems}). Return the single JSON object again with a "
        "compliant bullet list."
    )


def run_data_agent(
    rq: RoutedQuery,
    store: RecordStore,
    llm,
    window_days: int = DEFAULT_WINDOW_DAYS,
) -> DataAgentOutput:
    """Analyze record entries for the routed data query.

    A missing date range defaults to the store's most recent
    ``window_days``. Partial range coverage is analyzed normally; only a
    truly empty retrieval produces the explicit no-records result.
    """
    if not rq.data_query:
        raise ValueError("routed query carries no data_query")

    date_from, date_to = rq.date_from, rq.date_to
    if date_from is None or date_to is None:
        span = store.date_span()
        if span is None:
            return _no_records_output("the record store is empty")
        date_to = span[1]
        date_from = date_to - timedelta(days=window_days - 1)

    entries = store.query_range(date_from, date_to)
    if not entries:
        return _no_records_output(
            f"no record entries between {date_from.isoformat()} and {date_to.isoformat()}"
        )

    context = render_markdown(entries)
    system = load_prompt("data_agent.system")
    user = render_prompt("data_agent.user", context=context, question=rq.data_query)

    def check(obj: dict) -> None:
        _require_str_fields(obj, "data_analysis", "data_summary", "data_brief")

    def report_of(obj: dict) -> BulletReport:
        return validate_bullets(obj["data_brief"], 3, 5, 25, TAGS_NOT_REQUIRED)

    obj = _json_call(llm, "data", system, user, check)
    report = report_of(obj)
    degraded = False
    if not report.valid:
        obj = _json_call(llm, "data", system, user + _bullet_feedback(report), check)
        report = report_of(obj)
        degraded = not report.valid

    return DataAgentOutput(
        data_analysis=obj["data_analysis"],
        data_summary=obj["data_summary"],
        data_brief=obj["data_brief"],
        degraded=degraded,
        violations=list(report.violations),
    )


def _no_records_output(reason: str) -> DataAgentOutput:
    brief = (
        f"- No records are available: {reason}.\n"
        "- Verify the requested date range against the record dataset.\n"
        "- Re-run the query once records for the period exist."
    )
    return DataAgentOutput(
        data_analysis=f"No V/T/H matrices could be retrieved: {reason}.",
        data_summary=f"No records: {reason}.",
        data_brief=brief,
        no_records=True,
        degraded=True,
    )


def run_knowledge_agent(
    rq: RoutedQuery,
    index: KnowledgeIndex | None,
    embedder,
    llm,
    k: int = DEFAULT_TOP_K,
    include_original: bool = True,
) -> tuple[KnowledgeAgentOutput, list[RetrievalHit]]:
    """Expand, retrieve, reason and integrate for the knowledge query.

    An empty or unusable index degrades to the expert-only path with
    relevance forced low. Returns the output plus the retrieval hits for
    the audit trail.
    """
    if not rq.knowledge_query:
        raise ValueError("routed query carries no knowledge_query")

    expansion = expand_query(rq.knowledge_query, llm, include_original=include_original)
    degraded = expansion.degraded

    hits: list[RetrievalHit] = []
    retrieval_failed = False
    if index is not None and len(index) > 0 and embedder is not None:
        start = time.perf_counter()
        try:
            hits = retrieve_topk(expansion.queries, index, embedder, k=k)
        except KnowledgeError:
            retrieval_failed = True
        elapsed = (time.perf_counter() - start) * 1000.0
        if isinstance(llm, RecordingLLM):
            llm._trail.record(StageRecord(
                stage="retrieval", system_prompt="",
                user_prompt="\n".join(expansion.queries),
                raw_response="\n".join(
                    f"{h.slice_id} score={h.fused_score:.6f} q={h.best_query_index}"
                    for h in hits
                ),
                elapsed_ms=elapsed,
            ))
    else:
        retrieval_failed = True

    snippets = "(no snippets retrieved)"
    if hits and index is not None:
        snippets = render_snippets(hits, index)

    expert_reply = llm.complete("expert", load_prompt("expert.system"),
                                rq.knowledge_query)

    system = load_prompt("integrator.system")
    user = render_prompt("integrator.user", question=rq.knowledge_query,
                         snippets=snippets, expert_answer=expert_reply)

    def check(obj: dict) -> None:
        _require_str_fields(obj, "relevance", "rag_view", "llm_view", "summary")
        if obj["relevance"] not in ("high", "medium", "low"):
            raise ProtocolError(f"invalid relevance {obj['relevance']!r}")

    def report_of(obj: dict) -> BulletReport:
        return validate_bullets(obj["summary"], 3, 6, 25, TAGS_REQUIRED,
                                allowed_prefixes=KNOWLEDGE_PREFIXES)

    obj = _json_call(llm, "integrator", system, user, check)
    report = report_of(obj)
    if not report.valid:
        obj = _json_call(llm, "integrator", system, user + _bullet_feedback(report),
                         check)
        report = report_of(obj)
        degraded = degraded or not report.valid

    relevance = obj["relevance"]
    if retrieval_failed:
        relevance = "low"
        degraded = True

    output = KnowledgeAgentOutput(
        relevance=relevance,
        rag_view=obj["rag_view"],
        llm_view=obj["llm_view"],
        summary=obj["summary"],
        degraded=degraded,
        violations=list(report.violations),
    )
    return output, hits


def run_synthesizer(
    question: str,
    data_out: DataAgentOutput | None,
    knowledge_out: KnowledgeAgentOutput | None,
    llm,
) -> FinalAnswer:
    """Fuse branch outputs into the final bullet answer.

    With a single branch present the synthesis model call is bypassed and
    that branch's bullets pass through unchanged.
    """
    if data_out is None and knowledge_out is None:
        raise ValueError("need at least one branch output")

    if knowledge_out is None:
        return FinalAnswer(
            route="data_only",
            bullets=split_bullets(data_out.data_brief),
            degraded=data_out.degraded,
            data_output=data_out,
            violations=list(data_out.violations),
        )
    if data_out is None:
        return FinalAnswer(
            route="knowledge_only",
            bullets=split_bullets(knowledge_out.summary),
            degraded=knowledge_out.degraded,
            knowledge_output=knowledge_out,
            violations=list(knowledge_out.violations),
        )

    system = load_prompt("synthesizer.system")
    user = render_prompt(
        "synthesizer.user", question=question,
        data_summary=data_out.data_summary,
        knowledge_summary=knowledge_out.summary,
    )

    def check(obj: dict) -> None:
        _require_str_fields(obj, "final_brief")

    def report_of(obj: dict) -> BulletReport:
        return validate_bullets(obj["final_brief"], 3, 5, 25, TAGS_NOT_REQUIRED)

    obj = _json_call(llm, "synthesizer", system, user, check)
    report = report_of(obj)
    degraded = data_out.degraded or knowledge_out.degraded
    if not report.valid:
        obj = _json_call(llm, "synthesizer", system, user + _bullet_feedback(report),
                         check)
        report = report_of(obj)
        degraded = degraded or not report.valid

    return FinalAnswer(
        route="data_and_knowledge",
        bullets=split_bullets(obj["final_brief"]),
        degraded=degraded,
        data_output=data_out,
        knowledge_output=knowledge_out,
        violations=list(report.violations),
    )


def _degraded_answer(route_name: str, stage: str, trail: AuditTrail,
                     rq: RoutedQuery | None) -> FinalAnswer:
    bullets = [
        f"Analysis unavailable: the {stage} stage failed after bounded retries.",
        "Partial results, if any, are preserved in the audit trail.",
        "Retry the query or check service connectivity and configuration.",
    ]
    return FinalAnswer(route=route_name, bullets=bullets, degraded=True,
                       router_output=rq, trail=trail)


def answer(question: str, deps: Dependencies) -> FinalAnswer:
    """Full pipeline: route, run the routed branches, synthesize.

    The comprehensive route runs its two branches concurrently and joins
    before synthesis. A failing branch downgrades the answer to the
    surviving branch with the degraded flag set; only input validation
    errors propagate as exceptions.
    """
    trail = AuditTrail()
    llm = RecordingLLM(deps.llm, trail)

    rq = route(question, llm)

    data_out: DataAgentOutput | None = None
    knowledge_out: KnowledgeAgentOutput | None = None
    hits: list[RetrievalHit] = []
    failures: list[str] = []

    def data_branch() -> DataAgentOutput:
        if deps.store is None:
            return _no_records_output("no record store is configured")
        return run_data_agent(rq, deps.store, llm, window_days=deps.window_days)

    def knowledge_branch() -> tuple[KnowledgeAgentOutput, list[RetrievalHit]]:
        return run_knowledge_agent(
            rq, deps.index, deps.embedder, llm,
            k=deps.top_k, include_original=deps.include_original,
        )

    if rq.route == "data_only":
        try:
            data_out = data_branch()
        except (AgentError, LLMError):
            return _degraded_answer(rq.route, "data", trail, rq)
    elif rq.route == "knowledge_only":
        try:
            knowledge_out, hits = knowledge_branch()
        except (AgentError, LLMError):
            return _degraded_answer(rq.route, "knowledge", trail, rq)
    else:
        with ThreadPoolExecutor(max_workers=2) as pool:
            data_future = pool.submit(data_branch)
            knowledge_future = pool.submit(knowledge_branch)
            try:
                data_out = data_future.result()
            except (AgentError, LLMError):
                failures.append("data")
            try:
                knowledge_out, hits = knowledge_future.result()
            except (AgentError, LLMError):
                failures.append("knowledge")
        if data_out is None and knowledge_out is None:
            return _degraded_answer(rq.route, "data and knowledge", trail, rq)

    try:
        final = run_synthesizer(question, data_out, knowledge_out, llm)
    except (AgentError, LLMError):
        return _degraded_answer(rq.route, "synthesizer", trail, rq)

    final.route = rq.route
    final.router_output = rq
    final.retrieval_hits = hits
    final.trail = trail
    final.degraded = final.degraded or rq.degraded or bool(failures)
    return final
