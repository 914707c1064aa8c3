import type { QueryResponse, RecordsResponse } from "./types.js";

// Backend origin; set window.BESS_BASE_URL before loading the app when
// the console is served from a different origin than the API.
declare global {
  interface Window {
    BESS_BASE_URL?: string;
  }
}

export function baseUrl(): string {
  return (typeof window !== "undefined" && window.BESS_BASE_URL) || "";
}

async function parseOrThrow<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = `HTTP ${response.status}`;
    try {
      const body = await response.json();
      if (body && body.error) detail = `${body.error} (stage: ${body.stage})`;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new Error(detail);
  }
  return (await response.json()) as T;
}

export async function postQuery(question: string): Promise<QueryResponse> {
  const response = await fetch(`${baseUrl()}/api/query`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ question }),
  });
  return parseOrThrow<QueryResponse>(response);
}

export async function getRecords(from: string, to: string): Promise<RecordsResponse> {
  const params = new URLSearchParams({ from, to });
  const response = await fetch(`${baseUrl()}/api/records?${params}`);
  return parseOrThrow<RecordsResponse>(response);
}
