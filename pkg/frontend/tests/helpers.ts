/** Scripted in-process server: routes requests by method and path,
 * records everything it sees, and answers with canned payloads. */

import type { DialogTurnResponse, EvidenceItem, FetchLike, TaskResponse } from "../src/api.js";

export interface RecordedRequest {
  method: string;
  url: string;
  body: Record<string, unknown> | undefined;
}

type Handler = (request: RecordedRequest) => Response;

export function json(payload: unknown, status = 200): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export class FakeServer {
  readonly requests: RecordedRequest[] = [];
  private readonly handlers: { method: string; path: string | RegExp; handler: Handler }[] = [];

  on(method: string, path: string | RegExp, handler: Handler): this {
    this.handlers.push({ method, path, handler });
    return this;
  }

  requestsTo(path: string): RecordedRequest[] {
    return this.requests.filter((request) => request.url === path);
  }

  readonly fetch: FetchLike = async (url, init) => {
    const method = init?.method ?? "GET";
    const body =
      typeof init?.body === "string"
        ? (JSON.parse(init.body) as Record<string, unknown>)
        : undefined;
    const request: RecordedRequest = { method, url, body };
    this.requests.push(request);
    for (const route of this.handlers) {
      const pathMatches =
        typeof route.path === "string" ? route.path === url : route.path.test(url);
      if (route.method === method && pathMatches) {
        return route.handler(request);
      }
    }
    return json({ error: `no handler for ${method} ${url}` }, 500);
  };
}

export function evidenceItem(pid: string, title: string, score = 1.0): EvidenceItem {
  return { pid, title, snippet: `${title} snippet from the result payload`, score };
}

export function taskPayload(
  task: string,
  queryText: string,
  outputs: { text: string; score: number; pids: string[] }[],
  evidence: EvidenceItem[],
): TaskResponse {
  return {
    task,
    query_text: queryText,
    outputs: outputs.map((output) => ({
      text: output.text,
      model_score: output.score,
      evidence_pids: output.pids,
    })),
    evidence,
    closed_book: false,
    correlation_id: "c0ffee",
    timing_ms: 1.5,
  };
}

export function dialogPayload(
  sessionId: string,
  mode: "hybrid" | "conventional",
  text: string,
  source: "dialog_model" | "qa_model",
  evidence: EvidenceItem[] = [],
  gateTrace: [string, boolean][] = [],
): DialogTurnResponse {
  return {
    correlation_id: "c0ffee",
    session_id: sessionId,
    mode,
    text,
    source,
    evidence,
    gate_trace: gateTrace,
    timing_ms: 2.0,
  };
}

export function passagePayload(pid: string, title: string, snippet: string) {
  return {
    correlation_id: "c0ffee",
    pid,
    doc_id: pid.split("::")[0] ?? pid,
    title,
    text: snippet,
    snippet,
    token_count: snippet.split(/\s+/).length,
  };
}

/** Let queued promise callbacks run. */
export async function flush(times = 6): Promise<void> {
  for (let i = 0; i < times; i += 1) {
    await Promise.resolve();
  }
}
