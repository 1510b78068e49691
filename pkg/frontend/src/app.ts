/** DOM layer: a tab strip with one panel per task, a chat view, and a
 * cross-examination view. All state lives in the controllers; the DOM
 * is re-rendered from them on every change. Forms are never rebuilt, so
 * typed values survive validation and server errors. */

import { EvidenceItem, KgiClient, TaskName, TaskResponse } from "./api.js";
import { ChatController, Scheduler, SystemEntry, UserEntry } from "./chat.js";
import {
  TASK_FORMS,
  TASK_LABELS,
  TASK_ORDER,
  TabState,
  TaskTabController,
  validateForm,
} from "./tabs.js";

export interface AppOptions {
  sessionId?: string;
  retryDelayMs?: number;
  schedule?: Scheduler;
}

type PanelId = TaskName | "chat" | "cross_examine";

const PANEL_LABELS: Record<string, string> = {
  ...TASK_LABELS,
  chat: "Chat",
  cross_examine: "Cross-examine",
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

/** Evidence rows with a toggle that resolves the passage endpoint on
 * first open and shows the snippet it returns. */
function renderEvidenceList(items: EvidenceItem[], client: KgiClient): HTMLUListElement {
  const list = el("ul", "evidence-list");
  for (const item of items) {
    const row = el("li", "evidence-item");
    row.dataset.pid = item.pid;
    const toggle = el("button", "evidence-toggle");
    toggle.type = "button";
    toggle.append(
      el("span", "evidence-title", item.title || item.pid),
      el("span", "evidence-score", item.score.toFixed(3)),
    );
    const snippet = el("div", "evidence-snippet");
    snippet.hidden = true;
    toggle.addEventListener("click", () => {
      if (!snippet.hidden) {
        snippet.hidden = true;
        return;
      }
      snippet.hidden = false;
      if (snippet.dataset.loaded !== "true") {
        snippet.textContent = "loading passage...";
        client
          .passage(item.pid)
          .then((passage) => {
            snippet.textContent = passage.snippet;
            snippet.dataset.loaded = "true";
          })
          .catch(() => {
            snippet.textContent = "passage unavailable";
          });
      }
    });
    row.append(toggle, snippet);
    list.append(row);
  }
  return list;
}

function renderTaskResult(result: TaskResponse, client: KgiClient): HTMLElement {
  const region = el("div", "task-result");
  if (result.closed_book) {
    region.append(
      el("p", "closed-book-note", "No passages retrieved; answer is closed-book."),
    );
  }
  for (const output of result.outputs) {
    const row = el("div", "output-row");
    row.append(
      el("span", "output-text", output.text),
      el("span", "output-score", output.model_score.toFixed(3)),
    );
    region.append(row);
  }
  if (result.evidence.length > 0) {
    region.append(el("h3", "evidence-heading", "Evidence"));
    region.append(renderEvidenceList(result.evidence, client));
  }
  return region;
}

function buildTaskPanel(task: TaskName, client: KgiClient): HTMLElement {
  const panel = el("section", "panel");
  panel.dataset.panel = task;

  const form = el("form", "task-form");
  const inputs: Record<string, HTMLInputElement | HTMLTextAreaElement> = {};
  for (const field of TASK_FORMS[task]) {
    const label = el("label", "form-field", field.label);
    const input = field.multiline ? el("textarea") : el("input");
    input.name = field.name;
    input.setAttribute("placeholder", field.placeholder);
    inputs[field.name] = input;
    label.append(input);
    form.append(label);
  }
  const submit = el("button", "submit", "Run");
  submit.type = "submit";
  form.append(submit);

  const validation = el("ul", "validation-errors");
  const banner = el("div", "error-banner");
  banner.hidden = true;
  const pending = el("div", "pending-indicator", "working...");
  pending.hidden = true;
  const resultRegion = el("div", "result-region");

  const render = (state: TabState) => {
    submit.disabled = state.pending;
    pending.hidden = !state.pending;
    validation.replaceChildren(
      ...state.validationErrors.map((message) => el("li", undefined, message)),
    );
    banner.hidden = state.error === null;
    banner.textContent = state.error ?? "";
    resultRegion.replaceChildren();
    if (state.result) {
      resultRegion.append(renderTaskResult(state.result, client));
    }
  };

  const controller = new TaskTabController(task, client, render);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const raw: Record<string, string> = {};
    for (const [name, input] of Object.entries(inputs)) {
      raw[name] = input.value;
    }
    void controller.submit(raw);
  });

  panel.append(form, validation, banner, pending, resultRegion);
  return panel;
}

function describeUserEntry(entry: UserEntry): string {
  if (entry.status === "sending") {
    return "sending";
  }
  return entry.status;
}

function buildChatPanel(client: KgiClient, options: AppOptions): HTMLElement {
  const panel = el("section", "panel");
  panel.dataset.panel = "chat";

  const sessionId = options.sessionId ?? `ui-${Date.now().toString(36)}`;

  const controls = el("div", "chat-controls");
  const modeLabel = el("label", "mode-label", "Mode");
  const modeToggle = el("select", "mode-toggle");
  for (const mode of ["hybrid", "conventional"]) {
    const option = el("option", undefined, mode);
    option.value = mode;
    modeToggle.append(option);
  }
  modeLabel.append(modeToggle);
  controls.append(modeLabel, el("span", "session-label", sessionId));

  const transcript = el("ol", "chat-transcript");

  const compose = el("form", "chat-compose");
  const input = el("input", "chat-input");
  input.setAttribute("placeholder", "say something");
  const send = el("button", "chat-send", "Send");
  send.type = "submit";
  compose.append(input, send);

  const render = () => {
    transcript.replaceChildren();
    for (const entry of chat.transcript) {
      if (entry.role === "user") {
        const item = el("li", "chat-entry user");
        item.dataset.status = entry.status;
        item.append(el("span", "turn-text", entry.text));
        if (entry.status !== "delivered") {
          item.append(el("span", "delivery-note", describeUserEntry(entry)));
        }
        if (entry.status === "undelivered") {
          const retry = el("button", "retry-button", "Retry");
          retry.type = "button";
          retry.addEventListener("click", () => chat.retry(entry));
          item.append(retry);
        }
        transcript.append(item);
      } else {
        transcript.append(renderSystemEntry(entry));
      }
    }
  };

  const renderSystemEntry = (entry: SystemEntry): HTMLLIElement => {
    const item = el("li", "chat-entry system");
    const badge = el(
      "span",
      entry.source === "qa_model" ? "source-badge qa" : "source-badge dialog",
      entry.source === "qa_model" ? "QA" : "Dialog",
    );
    if (entry.gateTrace.length > 0) {
      badge.title = entry.gateTrace
        .map(([gate, passed]) => `${gate}: ${passed ? "yes" : "no"}`)
        .join(", ");
    }
    item.append(badge, el("span", "turn-text", entry.text));
    if (entry.source === "qa_model" && entry.evidence.length > 0) {
      item.append(renderEvidenceList(entry.evidence, client));
    }
    return item;
  };

  const chat = new ChatController(sessionId, client, {
    onChange: render,
    retryDelayMs: options.retryDelayMs,
    schedule: options.schedule,
  });

  modeToggle.addEventListener("change", () => {
    chat.setMode(modeToggle.value === "conventional" ? "conventional" : "hybrid");
  });
  compose.addEventListener("submit", (event) => {
    event.preventDefault();
    const text = input.value;
    input.value = "";
    chat.send(text);
  });

  panel.append(controls, transcript, compose);
  return panel;
}

interface CrossFieldSpec {
  task: TaskName;
  inputs: { name: string; field: string; label: string }[];
}

const CROSS_FIELDS: CrossFieldSpec[] = [
  {
    task: "slot_filling",
    inputs: [
      { name: "cx-head", field: "head", label: "Head entity" },
      { name: "cx-relation", field: "relation", label: "Relation" },
    ],
  },
  { task: "fact_checking", inputs: [{ name: "cx-claim", field: "claim", label: "Claim" }] },
  {
    task: "question_answering",
    inputs: [{ name: "cx-question", field: "question", label: "Question" }],
  },
];

function buildCrossExaminePanel(client: KgiClient): HTMLElement {
  const panel = el("section", "panel");
  panel.dataset.panel = "cross_examine";

  const form = el("form", "cx-form");
  const inputs: Record<string, HTMLInputElement> = {};
  for (const spec of CROSS_FIELDS) {
    const group = el("fieldset", "cx-group");
    group.append(el("legend", undefined, TASK_LABELS[spec.task]));
    for (const item of spec.inputs) {
      const label = el("label", "form-field", item.label);
      const input = el("input");
      input.name = item.name;
      inputs[item.name] = input;
      label.append(input);
      group.append(label);
    }
    form.append(group);
  }
  const submit = el("button", "submit", "Compare");
  submit.type = "submit";
  form.append(submit);

  const validation = el("ul", "validation-errors");
  const banner = el("div", "error-banner");
  banner.hidden = true;
  const pendingNote = el("div", "pending-indicator", "working...");
  pendingNote.hidden = true;
  const resultRegion = el("div", "cx-result");

  let pending = false;

  const collectFormulations = (): {
    errors: string[];
    formulations: Partial<Record<TaskName, Record<string, unknown>>>;
  } => {
    const errors: string[] = [];
    const formulations: Partial<Record<TaskName, Record<string, unknown>>> = {};
    for (const spec of CROSS_FIELDS) {
      const values = spec.inputs.map((item) => (inputs[item.name]?.value ?? "").trim());
      const filled = values.filter((value) => value.length > 0).length;
      if (filled === 0) {
        continue;
      }
      if (filled < spec.inputs.length) {
        errors.push(`${TASK_LABELS[spec.task]} needs every field filled`);
        continue;
      }
      const fields: Record<string, unknown> = {};
      spec.inputs.forEach((item, index) => {
        fields[item.field] = values[index];
      });
      formulations[spec.task] = fields;
    }
    if (errors.length === 0 && Object.keys(formulations).length < 2) {
      errors.push("fill in at least two formulations to compare");
    }
    return { errors, formulations };
  };

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    if (pending) {
      return;
    }
    const { errors, formulations } = collectFormulations();
    validation.replaceChildren(...errors.map((message) => el("li", undefined, message)));
    if (errors.length > 0) {
      return;
    }
    pending = true;
    submit.disabled = true;
    pendingNote.hidden = false;
    banner.hidden = true;
    client
      .crossExamine(formulations)
      .then((report) => {
        resultRegion.replaceChildren();

        const agreement = el(
          "div",
          report.answer_agreement ? "cx-agreement agree" : "cx-agreement disagree",
          report.answer_agreement ? "Answers agree" : "Answers disagree",
        );
        resultRegion.append(agreement);

        const overlap = el("div", "cx-overlap");
        overlap.append(el("span", "cx-overlap-label", "Evidence overlap"));
        const track = el("div", "cx-overlap-track");
        const bar = el("div", "cx-overlap-bar");
        const percent = Math.round(report.evidence_overlap * 100);
        bar.style.width = `${percent}%`;
        track.append(bar);
        overlap.append(track, el("span", "cx-overlap-value", `${percent}%`));
        resultRegion.append(overlap);

        const columns = el("div", "cx-results");
        for (const [taskName, result] of Object.entries(report.results)) {
          const column = el("div", "cx-column");
          column.dataset.task = taskName;
          column.append(el("h3", undefined, PANEL_LABELS[taskName] ?? taskName));
          const top = result.outputs[0];
          column.append(el("p", "cx-answer", top ? top.text : "(no answer)"));
          column.append(
            renderEvidenceList(result.evidence as EvidenceItem[], client),
          );
          columns.append(column);
        }
        resultRegion.append(columns);
      })
      .catch((error: unknown) => {
        banner.hidden = false;
        banner.textContent =
          error instanceof Error ? error.message : "server unreachable, try again";
      })
      .finally(() => {
        pending = false;
        submit.disabled = false;
        pendingNote.hidden = true;
      });
  });

  panel.append(form, validation, banner, pendingNote, resultRegion);
  return panel;
}

export function createApp(root: HTMLElement, client: KgiClient, options: AppOptions = {}): void {
  root.replaceChildren();
  const header = el("header", "app-header");
  header.append(el("h1", undefined, "Knowledge-grounded tasks"));
  root.append(header);

  const strip = el("nav", "tab-strip");
  const panels = el("main", "panels");
  const panelById = new Map<PanelId, HTMLElement>();
  const buttonById = new Map<PanelId, HTMLButtonElement>();

  const panelIds: PanelId[] = [...TASK_ORDER, "chat", "cross_examine"];
  for (const id of panelIds) {
    const button = el("button", "tab-button", PANEL_LABELS[id]);
    button.type = "button";
    button.dataset.tab = id;
    button.addEventListener("click", () => activate(id));
    strip.append(button);
    buttonById.set(id, button);

    const panel =
      id === "chat"
        ? buildChatPanel(client, options)
        : id === "cross_examine"
          ? buildCrossExaminePanel(client)
          : buildTaskPanel(id, client);
    panel.hidden = true;
    panels.append(panel);
    panelById.set(id, panel);
  }

  const activate = (id: PanelId) => {
    for (const [panelId, panel] of panelById) {
      panel.hidden = panelId !== id;
      buttonById.get(panelId)?.classList.toggle("active", panelId === id);
    }
  };

  root.append(strip, panels);
  activate(panelIds[0] as PanelId);
}

export { validateForm };
