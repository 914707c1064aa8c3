import { setupConsole } from "./app.js";

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

setupConsole({
  questionInput: byId("question"),
  askButton: byId("ask"),
  answerView: byId("answer"),
  auditDrawer: byId("audit"),
  fromInput: byId("from"),
  toInput: byId("to"),
  loadButton: byId("load"),
  recordsView: byId("records"),
});
