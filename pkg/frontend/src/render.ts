/** HTML renderers: the whole UI is a pure string function of the view model.
 * main.ts owns the only DOM writes and event wiring.
 */

import type { Message, ViewModel } from "./model.js";
import type { Reference, StatusResponse, Timings } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

function formatMs(value: number | null): string {
  return value === null ? "n/a" : `${value.toFixed(1)} ms`;
}

/** The per-answer latency readout; TTFT comes from the terminal frame. */
export function renderTimings(timings: Timings): string {
  return (
    `<p class="timings">TTFT <span class="ttft">${formatMs(timings.ttft_ms)}</span>` +
    ` · retrieval ${formatMs(timings.retrieval_ms)}` +
    ` · reduction ${formatMs(timings.scr_ms)}` +
    ` · total ${formatMs(timings.total_ms)}</p>`
  );
}

/** References in server order; buttons carry the doc id for the reader. */
export function renderReferences(references: Reference[]): string {
  if (references.length === 0) return "";
  const items = references
    .map(
      (ref) =>
        `<li><button class="ref" data-doc-id="${ref.doc_id}">` +
        `${escapeHtml(ref.title)}</button>` +
        `<span class="score">${ref.score.toFixed(4)}</span></li>`,
    )
    .join("");
  return `<details class="references" open><summary>References</summary><ol>${items}</ol></details>`;
}

function renderMessage(message: Message): string {
  if (message.role === "user") {
    return `<div class="msg user"><p>${escapeHtml(message.text)}</p></div>`;
  }
  const parts = [`<p class="answer">${escapeHtml(message.text)}</p>`];
  if (message.pending) parts.push('<p class="pending">…</p>');
  if (message.error) parts.push(`<p class="error">${escapeHtml(message.error)}</p>`);
  if (message.timings) parts.push(renderTimings(message.timings));
  parts.push(renderReferences(message.references));
  return `<div class="msg assistant">${parts.join("")}</div>`;
}

export function renderMessages(messages: Message[]): string {
  return messages.map(renderMessage).join("\n");
}

/** Reader pane showing one full document fetched from /v1/documents. */
export function renderReader(model: ViewModel): string {
  if (!model.reader) return "";
  const doc = model.reader;
  return (
    `<aside class="reader"><header><h2>${escapeHtml(doc.title)}</h2>` +
    `<button class="close-reader">close</button></header>` +
    `<p class="doc-id">document ${doc.doc_id}</p>` +
    `<div class="doc-text">${escapeHtml(doc.text)}</div></aside>`
  );
}

export function renderStatus(status: StatusResponse | null, busy: boolean): string {
  const banner = busy
    ? '<p class="busy">index update in progress, try again shortly</p>'
    : "";
  if (!status) return `<section class="status">${banner}<p>status unavailable</p></section>`;
  return (
    `<section class="status">${banner}` +
    `<p>${status.files} Files, ${status.vectors} Vectors` +
    ` · index v${status.index_version}</p></section>`
  );
}

export function renderApp(model: ViewModel): string {
  const notice = model.notice
    ? `<p class="notice">${escapeHtml(model.notice)}</p>`
    : "";
  return (
    `<main class="chat">` +
    renderStatus(model.status, model.busy) +
    notice +
    `<div class="history">${renderMessages(model.messages)}</div>` +
    `<form class="composer"><input name="q" placeholder="Ask the index" />` +
    `<button type="submit">Send</button></form>` +
    `</main>` +
    renderReader(model)
  );
}
