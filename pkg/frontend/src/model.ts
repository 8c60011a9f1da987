/** Chat view model. Every transition is a pure function of the previous
 * model and a server payload, so any screen state is reconstructable (and
 * snapshot-testable) from recorded responses alone.
 */

import type {
  DocumentResponse,
  QueryResponse,
  Reference,
  StatusResponse,
  StreamFrame,
  Timings,
} from "./types.js";

export interface AssistantMessage {
  role: "assistant";
  text: string;
  pending: boolean;
  queryId: string | null;
  references: Reference[];
  timings: Timings | null;
  error: string | null;
}

export interface UserMessage {
  role: "user";
  text: string;
}

export type Message = UserMessage | AssistantMessage;

export interface ViewModel {
  messages: Message[];
  status: StatusResponse | null;
  reader: DocumentResponse | null;
  busy: boolean;
  notice: string | null;
}

export const initialModel: ViewModel = {
  messages: [],
  status: null,
  reader: null,
  busy: false,
  notice: null,
};

function emptyAssistant(): AssistantMessage {
  return {
    role: "assistant",
    text: "",
    pending: true,
    queryId: null,
    references: [],
    timings: null,
    error: null,
  };
}

function withAssistant(
  model: ViewModel,
  change: (message: AssistantMessage) => AssistantMessage,
): ViewModel {
  const messages = [...model.messages];
  const last = messages[messages.length - 1];
  if (!last || last.role !== "assistant") return model;
  messages[messages.length - 1] = change(last);
  return { ...model, messages };
}

/** User pressed send: append their message and a pending assistant slot. */
export function submitQuery(model: ViewModel, text: string): ViewModel {
  return {
    ...model,
    notice: null,
    messages: [...model.messages, { role: "user", text }, emptyAssistant()],
  };
}

/** Fold one streamed frame into the pending assistant message. */
export function applyFrame(model: ViewModel, frame: StreamFrame): ViewModel {
  switch (frame.type) {
    case "token":
      return withAssistant(model, (m) => ({ ...m, text: m.text + frame.token }));
    case "end":
      return withAssistant(model, (m) => ({
        ...m,
        pending: false,
        queryId: frame.query_id,
        references: frame.references,
        timings: frame.timings,
      }));
    case "error":
      return withAssistant(model, (m) => ({
        ...m,
        pending: false,
        error: frame.detail,
      }));
  }
}

/** Non-streaming /v1/query response fills the assistant slot in one step. */
export function applyResponse(model: ViewModel, response: QueryResponse): ViewModel {
  return withAssistant(model, (m) => ({
    ...m,
    pending: false,
    text: response.answer,
    queryId: response.query_id,
    references: response.references,
    timings: response.timings,
  }));
}

export function openDocument(model: ViewModel, doc: DocumentResponse): ViewModel {
  return { ...model, reader: doc };
}

export function closeDocument(model: ViewModel): ViewModel {
  return { ...model, reader: null };
}

export function setStatus(model: ViewModel, status: StatusResponse): ViewModel {
  return { ...model, status };
}

/** 409 from a mutation endpoint: show the busy banner until cleared. */
export function setBusy(model: ViewModel, busy: boolean): ViewModel {
  return { ...model, busy };
}

/** Inline notice for network failures and non-409 errors. */
export function setNotice(model: ViewModel, notice: string | null): ViewModel {
  return { ...model, notice };
}
