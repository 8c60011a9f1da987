/** Wire types for the /v1 service schema. */

export interface Reference {
  doc_id: number;
  title: string;
  score: number;
}

export interface Timings {
  retrieval_ms: number | null;
  scr_ms: number | null;
  generation_first_token_ms: number | null;
  ttft_ms: number | null;
  total_ms: number | null;
}

export interface QueryResponse {
  query_id: string;
  answer: string;
  references: Reference[];
  timings: Timings;
}

export type StreamFrame =
  | { type: "token"; token: string }
  | { type: "end"; query_id: string; references: Reference[]; timings: Timings }
  | { type: "error"; detail: string };

export interface DocumentResponse {
  doc_id: number;
  title: string;
  text: string;
}

export interface StatusResponse {
  files: number;
  vectors: number;
  index_version: number;
}

export interface MutationJob {
  job_id: string;
  state: string;
  added_documents?: number;
  added_chunks?: number;
  removed_chunks?: number;
  live_vectors?: number;
  index_version?: number;
}

export interface ErrorBody {
  detail: string;
}
