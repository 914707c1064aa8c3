// Wire formats of the bess-om HTTP API. The console renders only what
// the backend returns; it never fabricates or recomputes values.

export interface StageRecord {
  stage: string;
  system_prompt: string;
  user_prompt: string;
  raw_response: string;
  retried: boolean;
  elapsed_ms?: number;
}

export interface RetrievalHit {
  slice_id: string;
  fused_score: number;
  best_query_index: number;
}

export interface QueryAudit {
  prompt_version: string;
  router_output: unknown;
  data_output: unknown;
  knowledge_output: unknown;
  retrieval_hits: RetrievalHit[];
  stages: StageRecord[];
  violations: unknown[];
}

export interface QueryResponse {
  route: string;
  bullets: string[];
  degraded: boolean;
  data_summary: string | null;
  knowledge_summary: string | null;
  audit: QueryAudit;
  timings_ms: Record<string, number>;
}

export interface OperationRecord {
  start: string;
  end: string;
  op_type: string;
  V: number[][];
  T: number[][];
  H: number[];
}

export interface RecordEntry {
  date: string;
  operations: OperationRecord[];
}

export interface RecordsResponse {
  entries: RecordEntry[];
}

export interface ApiError {
  error: string;
  stage: string;
}
