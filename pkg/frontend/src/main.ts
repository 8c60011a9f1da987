/** Browser bootstrap: the only file that touches the DOM. One in-flight
 * query at a time; submitting again aborts the stale stream.
 */

import { ApiClient, ApiError } from "./api.js";
import {
  applyFrame,
  initialModel,
  openDocument,
  closeDocument,
  setBusy,
  setNotice,
  setStatus,
  submitQuery,
  type ViewModel,
} from "./model.js";
import { renderApp } from "./render.js";

const api = new ApiClient("");
let model: ViewModel = initialModel;
let inflight: AbortController | null = null;

function paint(): void {
  const root = document.getElementById("app");
  if (root) root.innerHTML = renderApp(model);
}

function update(next: ViewModel): void {
  model = next;
  paint();
}

async function refreshStatus(): Promise<void> {
  try {
    update(setStatus(model, await api.status()));
  } catch (exc) {
    update(setNotice(model, `status failed: ${String(exc)}`));
  }
}

async function ask(text: string): Promise<void> {
  inflight?.abort();
  inflight = new AbortController();
  update(submitQuery(model, text));
  try {
    await api.streamQuery(text, (frame) => update(applyFrame(model, frame)), undefined, inflight.signal);
  } catch (exc) {
    if ((exc as Error).name === "AbortError") return;
    const busy = exc instanceof ApiError && exc.status === 409;
    update(busy ? setBusy(model, true) : setNotice(model, String(exc)));
  }
}

async function openReference(docId: number): Promise<void> {
  try {
    update(openDocument(model, await api.document(docId)));
  } catch (exc) {
    update(setNotice(model, String(exc)));
  }
}

document.addEventListener("submit", (event) => {
  const form = event.target as HTMLFormElement;
  if (!form.classList.contains("composer")) return;
  event.preventDefault();
  const input = form.elements.namedItem("q") as HTMLInputElement;
  const text = input.value.trim();
  if (text) void ask(text);
  input.value = "";
});

document.addEventListener("click", (event) => {
  const el = event.target as HTMLElement;
  if (el.classList.contains("ref")) {
    void openReference(Number(el.dataset.docId));
  } else if (el.classList.contains("close-reader")) {
    update(closeDocument(model));
  }
});

paint();
void refreshStatus();
