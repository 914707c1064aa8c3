// Pure DOM builders for the console views. Values coming from the API
// are only formatted, never recomputed.

import type { QueryAudit, QueryResponse, RecordEntry } from "./types.js";

export const V_ROW_CAPTIONS = [
  "V_row1 (worst-case spread)",
  "V_row2 (average spread)",
  "V_row3 (bad cells)",
];
export const T_ROW_CAPTIONS = [
  "T_row1 (worst-case spread)",
  "T_row2 (average spread)",
  "T_row3 (thermal consistency coefficient)",
];
export const H_ROW_CAPTION = "H_row1 (SOH)";
export const TCC_ANNOTATION = "(out-of-range)";

const TAG_PATTERN = /\[(RAG|LLM)\]/g;
const PREFIX_PATTERN = /^\[(Data|Knowledge|Integrated|Mechanism|Cause|Mitigation)\]\s*/;

export interface BulletParts {
  prefix: string | null;
  text: string;
  tags: string[];
}

export function splitBullet(bullet: string): BulletParts {
  let text = bullet.trim();
  let prefix: string | null = null;
  const prefixMatch = text.match(PREFIX_PATTERN);
  if (prefixMatch) {
    prefix = prefixMatch[0].trim();
    text = text.slice(prefixMatch[0].length);
  }
  const tags: string[] = [];
  const trailing = text.match(/(\s*(\[(RAG|LLM)\])+)\s*$/);
  if (trailing) {
    const found = trailing[0].match(TAG_PATTERN);
    if (found) tags.push(...found);
    text = text.slice(0, text.length - trailing[0].length).trim();
  }
  return { prefix, text, tags };
}

function chip(label: string, kind: string): HTMLSpanElement {
  const span = document.createElement("span");
  span.className = `chip chip-${kind}`;
  span.textContent = label;
  return span;
}

export function renderAnswer(container: HTMLElement, response: QueryResponse): void {
  container.replaceChildren();

  const badge = document.createElement("span");
  badge.className = "route-badge";
  badge.dataset.route = response.route;
  badge.textContent = response.route;
  container.appendChild(badge);

  if (response.degraded) {
    const banner = document.createElement("div");
    banner.className = "banner banner-degraded";
    banner.textContent =
      "Degraded answer: one or more pipeline stages fell back. Details in the audit drawer.";
    container.appendChild(banner);
  }

  const list = document.createElement("ul");
  list.className = "bullets";
  for (const bullet of response.bullets) {
    const item = document.createElement("li");
    const parts = splitBullet(bullet);
    if (parts.prefix) {
      item.appendChild(chip(parts.prefix, parts.prefix.slice(1, -1).toLowerCase()));
    }
    const text = document.createElement("span");
    text.className = "bullet-text";
    text.textContent = parts.text;
    item.appendChild(text);
    for (const tag of parts.tags) {
      item.appendChild(chip(tag, tag === "[RAG]" ? "rag" : "llm"));
    }
    list.appendChild(item);
  }
  container.appendChild(list);
}

export function renderErrorBanner(container: HTMLElement, message: string): void {
  container.replaceChildren();
  const banner = document.createElement("div");
  banner.className = "banner banner-error";
  banner.textContent = `Request failed: ${message}. Edit the question and retry.`;
  container.appendChild(banner);
}

function fmt(value: number): string {
  return Number(value.toPrecision(4)).toString();
}

function metricRow(caption: string, values: number[], annotate?: (v: number) => boolean): HTMLTableRowElement {
  const row = document.createElement("tr");
  const head = document.createElement("th");
  head.textContent = caption;
  row.appendChild(head);
  for (const value of values) {
    const cell = document.createElement("td");
    const marked = annotate ? annotate(value) : false;
    cell.textContent = marked ? `${fmt(value)} ${TCC_ANNOTATION}` : fmt(value);
    if (marked) cell.classList.add("out-of-range");
    row.appendChild(cell);
  }
  return row;
}

export function renderRecords(container: HTMLElement, entries: RecordEntry[]): void {
  container.replaceChildren();
  if (entries.length === 0) {
    const empty = document.createElement("p");
    empty.className = "empty-state";
    empty.textContent = "No records in the selected range.";
    container.appendChild(empty);
    return;
  }
  for (const entry of entries) {
    const section = document.createElement("section");
    section.className = "record-entry";
    const heading = document.createElement("h3");
    heading.textContent = entry.date;
    section.appendChild(heading);

    entry.operations.forEach((op, index) => {
      const label = document.createElement("p");
      label.className = "op-meta";
      label.textContent = `Operation ${index + 1}: ${op.op_type}, ${op.start} to ${op.end}`;
      section.appendChild(label);

      const table = document.createElement("table");
      table.className = "record-table";
      const header = document.createElement("tr");
      header.appendChild(document.createElement("th")).textContent = "metric";
      for (let p = 0; p < op.H.length; p += 1) {
        const cell = document.createElement("th");
        cell.textContent = `pack ${p + 1}`;
        header.appendChild(cell);
      }
      table.appendChild(header);

      table.appendChild(metricRow(V_ROW_CAPTIONS[0], op.V[0]));
      table.appendChild(metricRow(V_ROW_CAPTIONS[1], op.V[1]));
      table.appendChild(metricRow(V_ROW_CAPTIONS[2], op.V[2]));
      table.appendChild(metricRow(T_ROW_CAPTIONS[0], op.T[0]));
      table.appendChild(metricRow(T_ROW_CAPTIONS[1], op.T[1]));
      table.appendChild(
        metricRow(T_ROW_CAPTIONS[2], op.T[2], (v) => v < 0 || v > 1),
      );
      table.appendChild(metricRow(H_ROW_CAPTION, op.H));
      section.appendChild(table);
    });
    container.appendChild(section);
  }
}

export function renderAuditDrawer(
  container: HTMLElement,
  audit: QueryAudit,
  timings: Record<string, number>,
): void {
  container.replaceChildren();

  const heading = document.createElement("h3");
  heading.textContent = "Stage timings (ms)";
  container.appendChild(heading);
  const list = document.createElement("ul");
  list.className = "timings";
  for (const [stage, ms] of Object.entries(timings)) {
    const item = document.createElement("li");
    item.textContent = `${stage}: ${fmt(ms)}`;
    list.appendChild(item);
  }
  container.appendChild(list);

  if (audit.retrieval_hits.length > 0) {
    const hitsHeading = document.createElement("h3");
    hitsHeading.textContent = "Retrieved slices";
    container.appendChild(hitsHeading);
    const hits = document.createElement("ul");
    hits.className = "retrieval-hits";
    for (const hit of audit.retrieval_hits) {
      const item = document.createElement("li");
      item.textContent = `${hit.slice_id} (score ${fmt(hit.fused_score)})`;
      hits.appendChild(item);
    }
    container.appendChild(hits);
  }
}
