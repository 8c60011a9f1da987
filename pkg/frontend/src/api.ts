/** /v1 client: plain fetch plus an incremental NDJSON frame parser.
 *
 * parseNdjson is pure so the streaming protocol is testable on recorded
 * transcripts without a network or DOM.
 */

import type {
  DocumentResponse,
  MutationJob,
  QueryResponse,
  StatusResponse,
  StreamFrame,
} from "./types.js";

export interface NdjsonProgress {
  frames: StreamFrame[];
  rest: string;
}

/** Split buffered text into complete frames; returns the unfinished tail. */
export function parseNdjson(buffer: string): NdjsonProgress {
  const frames: StreamFrame[] = [];
  let rest = buffer;
  for (;;) {
    const cut = rest.indexOf("\n");
    if (cut < 0) break;
    const line = rest.slice(0, cut).trim();
    rest = rest.slice(cut + 1);
    if (line) frames.push(JSON.parse(line) as StreamFrame);
  }
  return { frames, rest };
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
  }
}

async function toError(response: Response): Promise<ApiError> {
  let detail = `${response.status} ${response.statusText}`;
  try {
    const body = (await response.json()) as { detail?: string };
    if (body.detail) detail = body.detail;
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(response.status, detail);
}

export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, init);
    if (!response.ok) throw await toError(response);
    return (await response.json()) as T;
  }

  query(text: string, k?: number): Promise<QueryResponse> {
    return this.json("/v1/query", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(k === undefined ? { text } : { text, k }),
    });
  }

  /** POST a streaming query; onFrame fires per parsed NDJSON frame. */
  async streamQuery(
    text: string,
    onFrame: (frame: StreamFrame) => void,
    k?: number,
    signal?: AbortSignal,
  ): Promise<void> {
    const body = k === undefined ? { text, stream: true } : { text, k, stream: true };
    const response = await fetch(this.baseUrl + "/v1/query", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
    if (!response.ok) throw await toError(response);
    if (!response.body) throw new ApiError(0, "response has no body to stream");
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      buffer += decoder.decode(value ?? new Uint8Array(), { stream: !done });
      const progress = parseNdjson(done ? buffer + "\n" : buffer);
      buffer = progress.rest;
      progress.frames.forEach(onFrame);
      if (done) break;
    }
  }

  document(docId: number): Promise<DocumentResponse> {
    return this.json(`/v1/documents/${docId}`);
  }

  references(queryId: string): Promise<{ query_id: string; references: unknown[] }> {
    return this.json(`/v1/queries/${queryId}/references`);
  }

  status(): Promise<StatusResponse> {
    return this.json("/v1/status");
  }

  update(addPaths: string[], removeDocIds: number[]): Promise<MutationJob> {
    return this.json("/v1/index/update", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ add_paths: addPaths, remove_doc_ids: removeDocIds }),
    });
  }

  build(paths: string[], titles?: string[], nC?: number): Promise<MutationJob> {
    const body: Record<string, unknown> = { paths };
    if (titles) body.titles = titles;
    if (nC !== undefined) body.n_c = nC;
    return this.json("/v1/index/build", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }
}
