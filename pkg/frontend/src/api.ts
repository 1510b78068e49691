/** Typed client for the kgi HTTP API. All calls go through one injected
 * fetch function so tests can script the server without a network. */

export type TaskName =
  | "slot_filling"
  | "fact_checking"
  | "question_answering"
  | "dialog_oneshot";

export type DialogMode = "conventional" | "hybrid";

export interface EvidenceItem {
  pid: string;
  title: string;
  snippet: string;
  score: number;
}

export interface TaskOutput {
  text: string;
  model_score: number;
  evidence_pids: string[];
}

export interface TaskResponse {
  task: string;
  query_text: string;
  outputs: TaskOutput[];
  evidence: EvidenceItem[];
  closed_book: boolean;
  correlation_id: string;
  timing_ms: number;
}

export interface DialogTurnResponse {
  correlation_id: string;
  session_id: string;
  mode: DialogMode;
  text: string;
  source: "dialog_model" | "qa_model";
  evidence: EvidenceItem[];
  gate_trace: [string, boolean][];
  timing_ms: number;
}

export interface PassageResponse {
  correlation_id: string;
  pid: string;
  doc_id: string;
  title: string;
  text: string;
  snippet: string;
  token_count: number;
}

export interface HealthResponse {
  status: string;
  correlation_id: string;
  indexed_passages: number;
}

export interface CrossExamineResponse {
  correlation_id: string;
  answer_agreement: boolean;
  evidence_overlap: number;
  results: Record<string, Omit<TaskResponse, "correlation_id" | "timing_ms">>;
  timing_ms: number;
}

/** Non-2xx response, with the server's error message when the body had one. */
export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number,
    public readonly correlationId?: string,
  ) {
    super(message);
    this.name = "ApiError";
  }

  get sessionBusy(): boolean {
    return this.status === 409;
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class KgiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  health(): Promise<HealthResponse> {
    return this.request("GET", "/api/health");
  }

  passage(pid: string): Promise<PassageResponse> {
    return this.request("GET", `/api/passage/${encodeURIComponent(pid)}`);
  }

  runTask(task: TaskName, fields: Record<string, unknown>): Promise<TaskResponse> {
    return this.request("POST", `/api/task/${task}`, fields);
  }

  dialogTurn(
    sessionId: string,
    utterance: string,
    mode: DialogMode,
  ): Promise<DialogTurnResponse> {
    return this.request("POST", "/api/dialog/turn", {
      session_id: sessionId,
      utterance,
      mode,
    });
  }

  crossExamine(
    formulations: Partial<Record<TaskName, Record<string, unknown>>>,
  ): Promise<CrossExamineResponse> {
    return this.request("POST", "/api/cross_examine", { formulations });
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { "content-type": "application/json" } };
    if (body !== undefined) {
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchFn(this.baseUrl + path, init);
    const payload = await response.json().catch(() => null);
    if (!response.ok) {
      const message =
        payload && typeof payload.error === "string"
          ? payload.error
          : `request failed with status ${response.status}`;
      throw new ApiError(message, response.status, payload?.correlation_id);
    }
    return payload as T;
  }
}
