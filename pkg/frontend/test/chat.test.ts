/** Snapshot tests over transcripts recorded from a live /v1 service.
 * The view model folds fixtures exactly as the browser would fold network
 * frames, so these pin reference order, the TTFT readout, and the document
 * reader without any server. */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

import { parseNdjson } from "../src/api.js";
import {
  applyFrame,
  applyResponse,
  initialModel,
  openDocument,
  setBusy,
  setNotice,
  setStatus,
  submitQuery,
  type ViewModel,
} from "../src/model.js";
import { renderApp, renderReferences, renderTimings } from "../src/render.js";
import type {
  DocumentResponse,
  QueryResponse,
  StatusResponse,
  StreamFrame,
} from "../src/types.js";

const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), "..", "fixtures");

function fixture(name: string): string {
  return readFileSync(join(FIXTURES, name), "utf-8");
}

const QUERY_TEXT = "How should I prepare tiramisu for guests?";
const streamFrames = parseNdjson(fixture("query_stream.ndjson")).frames;
const endFrame = streamFrames.find((f) => f.type === "end");
if (!endFrame || endFrame.type !== "end") throw new Error("fixture has no end frame");

function replayStream(): ViewModel {
  let model = submitQuery(initialModel, QUERY_TEXT);
  for (const frame of streamFrames) model = applyFrame(model, frame);
  return model;
}

describe("streamed answer", () => {
  it("renders the replayed transcript", () => {
    expect(renderApp(replayStream())).toMatchSnapshot();
  });

  it("keeps references in server order", () => {
    const html = renderReferences(endFrame.references);
    const ids = [...html.matchAll(/data-doc-id="(\d+)"/g)].map((m) => Number(m[1]));
    expect(ids).toEqual(endFrame.references.map((r) => r.doc_id));
    const titles = [...html.matchAll(/class="ref"[^>]*>([^<]+)</g)].map((m) => m[1]);
    expect(titles).toEqual(endFrame.references.map((r) => r.title));
  });

  it("shows TTFT exactly as the terminal frame reports it", () => {
    const html = renderApp(replayStream());
    const ttft = endFrame.timings.ttft_ms;
    expect(ttft).not.toBeNull();
    expect(html).toContain(`<span class="ttft">${ttft!.toFixed(1)} ms</span>`);
  });

  it("assembles the answer from the token frames alone", () => {
    const model = replayStream();
    const last = model.messages[model.messages.length - 1];
    if (!last || last.role !== "assistant") throw new Error("no assistant message");
    const tokens = streamFrames
      .filter((f): f is Extract<StreamFrame, { type: "token" }> => f.type === "token")
      .map((f) => f.token)
      .join("");
    expect(last.text).toBe(tokens);
    expect(last.pending).toBe(false);
    expect(last.queryId).toBe(endFrame.query_id);
  });

  it("renders a mid-stream error frame inline", () => {
    let model = submitQuery(initialModel, QUERY_TEXT);
    model = applyFrame(model, { type: "token", token: "partial" });
    model = applyFrame(model, { type: "error", detail: "generation endpoint unreachable" });
    const html = renderApp(model);
    expect(html).toContain('<p class="error">generation endpoint unreachable</p>');
    expect(html).toMatchSnapshot();
  });
});

describe("non-streaming answer", () => {
  it("renders the recorded /v1/query body", () => {
    const response = JSON.parse(fixture("query.json")) as QueryResponse;
    const model = applyResponse(submitQuery(initialModel, QUERY_TEXT), response);
    const html = renderApp(model);
    expect(html).toContain(response.answer);
    expect(html).toMatchSnapshot();
  });
});

describe("document reader", () => {
  it("opens the full recorded document", () => {
    const doc = JSON.parse(fixture("document_2.json")) as DocumentResponse;
    const model = openDocument(replayStream(), doc);
    const html = renderApp(model);
    expect(html).toContain("<h2>tiramisu-recipe</h2>");
    expect(html).toContain("Leftovers keep for two days when covered.");
    expect(html).toMatchSnapshot();
  });
});

describe("status and errors", () => {
  it("renders recorded counts and the busy banner", () => {
    const status = JSON.parse(fixture("status.json")) as StatusResponse;
    let model = setStatus(initialModel, status);
    expect(renderApp(model)).toContain("3 Files, 3 Vectors");
    model = setBusy(model, true);
    const html = renderApp(model);
    expect(html).toContain("index update in progress");
    expect(html).toMatchSnapshot();
  });

  it("shows the recorded 404 detail as a notice", () => {
    const body = JSON.parse(fixture("error_404.json")) as { detail: string };
    const html = renderApp(setNotice(initialModel, body.detail));
    expect(html).toContain('<p class="notice">document 99 not found</p>');
  });
});

describe("ndjson parser", () => {
  it("is insensitive to chunk boundaries", () => {
    const raw = fixture("query_stream.ndjson");
    for (const cut of [1, 7, 40, raw.indexOf("\n") + 1, raw.length - 3]) {
      const first = parseNdjson(raw.slice(0, cut));
      const second = parseNdjson(first.rest + raw.slice(cut));
      expect([...first.frames, ...second.frames]).toEqual(streamFrames);
    }
  });

  it("escapes markup in timings rendering input", () => {
    expect(renderTimings(endFrame.timings)).not.toContain("undefined");
  });
});
