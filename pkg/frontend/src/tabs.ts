/** Task tab state: per-task form shape, client-side validation, and a
 * submit path that blocks duplicate requests while one is in flight. */

import { ApiError, KgiClient, TaskName, TaskResponse } from "./api.js";

export interface FormField {
  name: string;
  label: string;
  multiline: boolean;
  placeholder: string;
}

export const TASK_LABELS: Record<TaskName, string> = {
  slot_filling: "Slot filling",
  fact_checking: "Fact checking",
  question_answering: "Question answering",
  dialog_oneshot: "Dialog (one-shot)",
};

export const TASK_ORDER: TaskName[] = [
  "slot_filling",
  "fact_checking",
  "question_answering",
  "dialog_oneshot",
];

export const TASK_FORMS: Record<TaskName, FormField[]> = {
  slot_filling: [
    { name: "head", label: "Head entity", multiline: false, placeholder: "Elizabeth Cromwell" },
    { name: "relation", label: "Relation", multiline: false, placeholder: "spouse" },
  ],
  fact_checking: [
    { name: "claim", label: "Claim", multiline: false, placeholder: "Slovenia uses the euro." },
  ],
  question_answering: [
    { name: "question", label: "Question", multiline: false, placeholder: "When did ..." },
  ],
  dialog_oneshot: [
    {
      name: "turns",
      label: "Conversation so far (one turn per line)",
      multiline: true,
      placeholder: "first turn\nsecond turn",
    },
  ],
};

export interface ValidationResult {
  errors: string[];
  /** Request body, present only when errors is empty. */
  fields?: Record<string, unknown>;
}

/** Check arity client-side so an incomplete form never reaches the server. */
export function validateForm(task: TaskName, raw: Record<string, string>): ValidationResult {
  const errors: string[] = [];
  const fields: Record<string, unknown> = {};
  for (const field of TASK_FORMS[task]) {
    const value = (raw[field.name] ?? "").trim();
    if (!value) {
      errors.push(`${field.label} is required`);
      continue;
    }
    if (field.name === "turns") {
      fields.turns = value
        .split("\n")
        .map((line) => line.trim())
        .filter((line) => line.length > 0);
    } else {
      fields[field.name] = value;
    }
  }
  return errors.length > 0 ? { errors } : { errors, fields };
}

export type SubmitOutcome = "invalid" | "busy" | "done" | "failed";

export interface TabState {
  task: TaskName;
  pending: boolean;
  result: TaskResponse | null;
  /** Inline banner text after a server or transport failure. */
  error: string | null;
  validationErrors: string[];
}

export class TaskTabController {
  readonly state: TabState;

  constructor(
    task: TaskName,
    private readonly client: KgiClient,
    private readonly onChange: (state: TabState) => void = () => {},
  ) {
    this.state = { task, pending: false, result: null, error: null, validationErrors: [] };
  }

  /** Validate, then run the task; duplicate submits while pending are dropped. */
  async submit(raw: Record<string, string>): Promise<SubmitOutcome> {
    if (this.state.pending) {
      return "busy";
    }
    const { errors, fields } = validateForm(this.state.task, raw);
    if (errors.length > 0 || !fields) {
      this.state.validationErrors = errors;
      this.notify();
      return "invalid";
    }
    this.state.pending = true;
    this.state.validationErrors = [];
    this.state.error = null;
    this.notify();
    try {
      this.state.result = await this.client.runTask(this.state.task, fields);
      return "done";
    } catch (error) {
      this.state.error =
        error instanceof ApiError ? error.message : "server unreachable, try again";
      return "failed";
    } finally {
      this.state.pending = false;
      this.notify();
    }
  }

  private notify(): void {
    this.onChange(this.state);
  }
}
