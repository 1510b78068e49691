/** Chat session state. User turns append immediately and are sent one at
 * a time; the mode is read at send time so toggling it never rewrites
 * the transcript. A 409 (session busy server-side) re-queues the turn
 * and retries after a delay; a transport failure marks the turn
 * undelivered and leaves retrying to the user. */

import { ApiError, DialogMode, EvidenceItem, KgiClient } from "./api.js";

export interface UserEntry {
  role: "user";
  text: string;
  status: "sending" | "delivered" | "undelivered";
}

export interface SystemEntry {
  role: "system";
  text: string;
  source: "dialog_model" | "qa_model";
  evidence: EvidenceItem[];
  gateTrace: [string, boolean][];
  /** Mode the turn was sent under, for the transcript badge. */
  mode: DialogMode;
}

export type TranscriptEntry = UserEntry | SystemEntry;

export type Scheduler = (run: () => void, delayMs: number) => void;

export interface ChatOptions {
  onChange?: () => void;
  retryDelayMs?: number;
  schedule?: Scheduler;
}

export class ChatController {
  mode: DialogMode = "hybrid";
  readonly transcript: TranscriptEntry[] = [];

  private readonly queue: UserEntry[] = [];
  private inFlight = false;
  private readonly onChange: () => void;
  private readonly retryDelayMs: number;
  private readonly schedule: Scheduler;

  constructor(
    readonly sessionId: string,
    private readonly client: KgiClient,
    options: ChatOptions = {},
  ) {
    this.onChange = options.onChange ?? (() => {});
    this.retryDelayMs = options.retryDelayMs ?? 250;
    this.schedule = options.schedule ?? ((run, delayMs) => setTimeout(run, delayMs));
  }

  setMode(mode: DialogMode): void {
    this.mode = mode;
    this.onChange();
  }

  /** Append the user turn and send it once earlier turns have resolved. */
  send(utterance: string): void {
    const text = utterance.trim();
    if (!text) {
      return;
    }
    const entry: UserEntry = { role: "user", text, status: "sending" };
    this.transcript.push(entry);
    this.queue.push(entry);
    this.onChange();
    void this.pump();
  }

  /** Re-send a turn that previously failed to reach the server. */
  retry(entry: UserEntry): void {
    if (entry.status !== "undelivered" || !this.transcript.includes(entry)) {
      return;
    }
    entry.status = "sending";
    this.queue.push(entry);
    this.onChange();
    void this.pump();
  }

  get busy(): boolean {
    return this.inFlight || this.queue.length > 0;
  }

  private async pump(): Promise<void> {
    if (this.inFlight) {
      return;
    }
    const entry = this.queue.shift();
    if (!entry) {
      return;
    }
    this.inFlight = true;
    const mode = this.mode;
    try {
      const turn = await this.client.dialogTurn(this.sessionId, entry.text, mode);
      entry.status = "delivered";
      this.transcript.push({
        role: "system",
        text: turn.text,
        source: turn.source,
        evidence: turn.evidence,
        gateTrace: turn.gate_trace,
        mode,
      });
    } catch (error) {
      if (error instanceof ApiError && error.sessionBusy) {
        this.queue.unshift(entry);
        this.inFlight = false;
        this.schedule(() => void this.pump(), this.retryDelayMs);
        this.onChange();
        return;
      }
      entry.status = "undelivered";
    }
    this.inFlight = false;
    this.onChange();
    void this.pump();
  }
}
