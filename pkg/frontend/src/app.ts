// View wiring: one in-flight query at a time, submissions disabled while
// pending, question preserved on failure so the operator can retry.

import { getRecords, postQuery } from "./api.js";
import {
  renderAnswer,
  renderAuditDrawer,
  renderErrorBanner,
  renderRecords,
} from "./render.js";

export interface ConsoleElements {
  questionInput: HTMLTextAreaElement | HTMLInputElement;
  askButton: HTMLButtonElement;
  answerView: HTMLElement;
  auditDrawer: HTMLElement;
  fromInput: HTMLInputElement;
  toInput: HTMLInputElement;
  loadButton: HTMLButtonElement;
  recordsView: HTMLElement;
}

export function setupConsole(el: ConsoleElements): void {
  let inFlight = false;

  const setPending = (pending: boolean) => {
    inFlight = pending;
    el.askButton.disabled = pending;
    el.askButton.textContent = pending ? "Asking..." : "Ask";
  };

  el.askButton.addEventListener("click", async () => {
    const question = el.questionInput.value.trim();
    if (!question || inFlight) return;
    setPending(true);
    el.answerView.replaceChildren();
    el.auditDrawer.replaceChildren();
    const spinner = document.createElement("p");
    spinner.className = "spinner";
    spinner.textContent = "Waiting for the analysis pipeline...";
    el.answerView.appendChild(spinner);
    try {
      const response = await postQuery(question);
      renderAnswer(el.answerView, response);
      renderAuditDrawer(el.auditDrawer, response.audit, response.timings_ms);
    } catch (error) {
      // keep the question text untouched for retry
      renderErrorBanner(el.answerView, (error as Error).message);
    } finally {
      setPending(false);
    }
  });

  el.loadButton.addEventListener("click", async () => {
    const from = el.fromInput.value;
    const to = el.toInput.value;
    if (!from || !to) return;
    if (from > to) {
      renderErrorBanner(el.recordsView, "inverted range: 'from' is after 'to'");
      return;
    }
    try {
      const response = await getRecords(from, to);
      renderRecords(el.recordsView, response.entries);
    } catch (error) {
      renderErrorBanner(el.recordsView, (error as Error).message);
    }
  });
}
