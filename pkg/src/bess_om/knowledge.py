"""Knowledge slices, semantic-key embedding index, and fused retrieval.

A slice is a one-sentence semantic key (its Markdown heading) plus an
80-120 word body. Only the keys are embedded; retrieval scores each slice
by the maximum cosine similarity over all expanded sub-queries and keeps
the top-k.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx
import numpy as np

from .llm import LLMError, load_prompt

INDEX_SCHEMA_VERSION = 1
MOCK_EMBED_DIM = 64
DEFAULT_TOP_K = 5
BODY_WORDS_HARD = (40, 200)   # outside this -> warning diagnostic

log = logging.getLogger(__name__)


class KnowledgeError(Exception):
    """Corpus, embedding or index problem."""


@dataclass(frozen=True)
class KnowledgeSlice:
    id: str
    key: str
    body: str
    source: str

    def __post_init__(self) -> None:
        if not self.key.strip() or not self.body.strip():
            raise KnowledgeError("slice key and body must be nonempty")


@dataclass(frozen=True)
class RetrievalHit:
    slice_id: str
    fused_score: float
    best_query_index: int


def parse_slices(markdown: str, source: str = "inline") -> tuple[list[KnowledgeSlice], list[str]]:
    """Split a Markdown document into knowledge slices.

    Every level-1 ``#`` heading starts a slice: the heading is the semantic
    key, the following paragraphs are the body. Returns the slices plus
    diagnostics for skipped or suspicious slices; the 80-120 word body
    guideline is advisory, so out-of-band lengths only warn.
    """
    lines = markdown.splitlines()
    headings = [i for i, line in enumerate(lines)
                if line.startswith("# ") or line.rstrip() == "#"]
    if not headings:
        raise KnowledgeError(f"{source}: no '# ' headings found")

    slices: list[KnowledgeSlice] = []
    diagnostics: list[str] = []
    bounds = headings + [len(lines)]
    counter = 0
    for start, end in zip(bounds[:-1], bounds[1:]):
        key = lines[start][1:].strip()
        body = "\n".join(lines[start + 1:end]).strip()
        counter += 1
        slice_id = f"{source}-{counter:03d}"
        if not key:
            diagnostics.append(f"{slice_id}: empty heading, slice skipped")
            continue
        if not body:
            diagnostics.append(f"{slice_id}: heading {key!r} has no body, slice skipped")
            continue
        words = len(body.split())
        if not (BODY_WORDS_HARD[0] <= words <= BODY_WORDS_HARD[1]):
            diagnostics.append(
                f"{slice_id}: body has {words} words, outside the advisory "
                f"{BODY_WORDS_HARD[0]}-{BODY_WORDS_HARD[1]} range"
            )
        slices.append(KnowledgeSlice(id=slice_id, key=key, body=body, source=source))
    return slices, diagnostics


def parse_slice_dir(directory: str | Path) -> tuple[list[KnowledgeSlice], list[str]]:
    directory = Path(directory)
    paths = sorted(directory.glob("*.md"))
    if not paths:
        raise KnowledgeError(f"no Markdown files in {directory}")
    slices: list[KnowledgeSlice] = []
    diagnostics: list[str] = []
    for path in paths:
        got, diag = parse_slices(path.read_text(encoding="utf-8"), source=path.stem)
        slices.extend(got)
        diagnostics.extend(diag)
    return slices, diagnostics


# ---------------------------------------------------------------------------
# Embedding providers
# ---------------------------------------------------------------------------

class MockEmbeddingProvider:
    """Seeded hash-to-vector embeddings: deterministic and in-process."""

    def __init__(self, dim: int = MOCK_EMBED_DIM):
        self.dim = dim
        self.fingerprint = f"mock-hash-v1-d{dim}"

    def embed(self, texts: list[str]) -> list[list[float]]:
        out = []
        for text in texts:
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            seed = int.from_bytes(digest[:8], "big")
            rng = np.random.default_rng(seed)
            out.append(rng.standard_normal(self.dim).tolist())
        return out


class HttpEmbeddingProvider:
    """POSTs a JSON text list, expects a float-array list back."""

    def __init__(self, base_url: str, timeout_s: float = 30.0, max_retries: int = 2):
        if not base_url:
            raise KnowledgeError("embedding base URL not configured (set EMBED_BASE_URL)")
        self.fingerprint = f"http:{base_url}"
        self.max_retries = max_retries
        self._client = httpx.Client(base_url=base_url.rstrip("/"), timeout=timeout_s,
                                    limits=httpx.Limits(max_connections=8))

    def embed(self, texts: list[str]) -> list[list[float]]:
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                response = self._client.post("/embeddings", json={"texts": texts})
                response.raise_for_status()
                return response.json()["embeddings"]
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(min(2.0 ** attempt, 4.0))
        raise KnowledgeError(
            f"embedding request failed after {self.max_retries + 1} attempts: {last_error}"
        )


def build_embedding_provider(mock: bool = True, dim: int = MOCK_EMBED_DIM):
    """Mock provider, or the HTTP provider at EMBED_BASE_URL."""
    if mock:
        return MockEmbeddingProvider(dim=dim)
    return HttpEmbeddingProvider(os.environ.get("EMBED_BASE_URL", ""))


def embed(texts: list[str], provider) -> np.ndarray:
    """Unit-normalized embedding matrix (len(texts) x D)."""
    if not texts:
        return np.empty((0, 0))
    raw = provider.embed(texts)
    if len(raw) != len(texts):
        raise KnowledgeError(
            f"provider returned {len(raw)} vectors for {len(texts)} texts"
        )
    dims = {len(v) for v in raw}
    if len(dims) != 1:
        raise KnowledgeError(f"dimension mismatch: provider returned dims {sorted(dims)}")
    matrix = np.asarray(raw, dtype=float)
    norms = np.linalg.norm(matrix, axis=1)
    if (norms == 0).any():
        raise KnowledgeError("provider returned a zero vector; cannot normalize")
    return matrix / norms[:, None]


# ---------------------------------------------------------------------------
# Index and retrieval
# ---------------------------------------------------------------------------

@dataclass
class KnowledgeIndex:
    """Exact-search index over slice keys.

    The corpus is small (tens to hundreds of slices), so scoring is a full
    scan of dot products; the stored vectors are unit norm.
    """

    slices: list[KnowledgeSlice]
    vectors: np.ndarray          # (n_slices, D), unit rows
    provider_fingerprint: str
    by_id: dict[str, KnowledgeSlice] = field(init=False)

    def __post_init__(self) -> None:
        if len(self.slices) != self.vectors.shape[0]:
            raise KnowledgeError("one vector per slice required")
        self.by_id = {s.id: s for s in self.slices}
        if len(self.by_id) != len(self.slices):
            raise KnowledgeError("slice ids must be unique")

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.slices)

    @classmethod
    def build(cls, slices: list[KnowledgeSlice], provider) -> "KnowledgeIndex":
        if not slices:
            raise KnowledgeError("cannot build an index from zero slices")
        vectors = embed([s.key for s in slices], provider)
        return cls(slices=list(slices), vectors=vectors,
                   provider_fingerprint=provider.fingerprint)

    def save(self, index_dir: str | Path) -> None:
        index_dir = Path(index_dir)
        index_dir.mkdir(parents=True, exist_ok=True)
        doc = {
            "schema_version": INDEX_SCHEMA_VERSION,
            "provider_fingerprint": self.provider_fingerprint,
            "dim": self.dim,
            "entries": [
                {
                    "id": s.id,
                    "key": s.key,
                    "body": s.body,
                    "source": s.source,
                    "vector": self.vectors[i].tolist(),
                }
                for i, s in enumerate(self.slices)
            ],
        }
        path = index_dir / "index.json"
        path.write_text(json.dumps(doc, ensure_ascii=False, indent=1) + "\n",
                        encoding="utf-8")

    @classmethod
    def load(cls, index_dir: str | Path) -> "KnowledgeIndex":
        path = Path(index_dir) / "index.json"
        if not path.exists():
            raise KnowledgeError(f"missing index file: {path}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("schema_version") != INDEX_SCHEMA_VERSION:
            raise KnowledgeError(
                f"unsupported index schema_version {doc.get('schema_version')!r}"
            )
        entries = doc["entries"]
        slices = [KnowledgeSlice(id=e["id"], key=e["key"], body=e["body"],
                                 source=e["source"]) for e in entries]
        vectors = np.asarray([e["vector"] for e in entries], dtype=float)
        return cls(slices=slices, vectors=vectors,
                   provider_fingerprint=doc["provider_fingerprint"])


def retrieve_topk(queries: list[str], index: KnowledgeIndex, provider,
                  k: int = DEFAULT_TOP_K) -> list[RetrievalHit]:
    """Top-k slices by max-over-queries cosine similarity.

    Ties break by slice id ascending so results are reproducible. Asking
    for more hits than the corpus holds returns the whole corpus ranked.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not queries:
        raise ValueError("need at least one query")
    if len(index) == 0:
        raise KnowledgeError("index is empty")
    if provider.fingerprint != index.provider_fingerprint:
        raise KnowledgeError(
            f"index was built with provider {index.provider_fingerprint!r}, "
            f"queries embedded with {provider.fingerprint!r}"
        )
    q = embed(queries, provider)                       # (nq, D)
    sims = q @ index.vectors.T                         # (nq, n_slices)
    fused = sims.max(axis=0)
    best_query = sims.argmax(axis=0)
    order = sorted(range(len(index)),
                   key=lambda j: (-fused[j], index.slices[j].id))
    return [
        RetrievalHit(
            slice_id=index.slices[j].id,
            fused_score=float(fused[j]),
            best_query_index=int(best_query[j]),
        )
        for j in order[:k]
    ]


def render_snippets(hits: list[RetrievalHit], index: KnowledgeIndex) -> str:
    """Numbered snippet block handed to the integration stage."""
    parts = []
    for i, hit in enumerate(hits, start=1):
        s = index.by_id[hit.slice_id]
        parts.append(f"[S{i}] {s.key}\n{s.body}\n(source: {s.source}, "
                     f"score: {hit.fused_score:.3f})")
    return "\n\n".join(parts) if parts else "(no snippets retrieved)"


# ---------------------------------------------------------------------------
# Query expansion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpansionResult:
    queries: list[str]
    degraded: bool = False


def expand_query(question: str, llm, include_original: bool = True) -> ExpansionResult:
    """Expand a question into cause/impact/mitigation sub-queries.

    The original question is appended so expansion can only add recall.
    Any model failure degrades to the original question alone, flagged.
    """
    if not question.strip():
        raise ValueError("question must be nonempty")
    system = load_prompt("expansion.system")
    try:
        reply = llm.complete("expansion", system, question)
        parsed = json.loads(reply.strip())
        if (not isinstance(parsed, list) or len(parsed) != 3
                or not all(isinstance(s, str) and s.strip() for s in parsed)):
            raise ValueError(f"expected a JSON array of 3 strings, got: {reply[:120]}")
        queries = [s.strip() for s in parsed]
    except (LLMError, ValueError, json.JSONDecodeError) as exc:
        log.warning("query expansion degraded to original question: %s", exc)
        return ExpansionResult(queries=[question], degraded=True)
    if include_original:
        queries.append(question)
    return ExpansionResult(queries=queries, degraded=False)
