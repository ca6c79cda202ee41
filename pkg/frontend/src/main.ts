/** Entry point: wires the session flow to the page.
 *
 * Keyboard: digits 1..9 choose the class for the suspicious example, with
 * Shift held they choose for the counter-example; Enter submits once both
 * labels are chosen.
 */

import { SessionClient } from "./api";
import { SessionFlow } from "./state";
import { renderQuery, renderSummary, renderTick, clear } from "./render";
import { DecisionResponse, MetricsRow, QueryPayload } from "./types";

const DEFAULT_CONFIG = {
  dataset: "moons",
  model: { kind: "mlp", hidden_dims: [16, 16], dropout_rate: 0.0 },
  train: { epochs: 100 },
  corruption: { rate: 0.2 },
  bootstrap_size: 40,
  stream_length: 20,
  seed: 0,
  tau: 0.2,
  strategy: { kind: "cincer", backend: { kind: "top-fisher" } },
};

export function mountConsole(root: HTMLElement, baseUrl: string): SessionFlow {
  root.innerHTML = `
    <header>
      <h2>Label cleaning console</h2>
      <form id="session-form">
        <textarea id="config" rows="8" cols="60"></textarea>
        <button type="submit" id="start">Start session</button>
        <input id="resume-id" placeholder="session id to resume" />
        <button type="button" id="resume">Resume</button>
      </form>
      <div id="status"></div>
    </header>
    <div id="tick-log"></div>
    <main id="query-root"></main>
    <section id="summary-root"></section>
  `;
  const configBox = root.querySelector<HTMLTextAreaElement>("#config")!;
  configBox.value = JSON.stringify(DEFAULT_CONFIG, null, 2);
  const status = root.querySelector<HTMLElement>("#status")!;
  const tickLog = root.querySelector<HTMLElement>("#tick-log")!;
  const queryRoot = root.querySelector<HTMLElement>("#query-root")!;
  const summaryRoot = root.querySelector<HTMLElement>("#summary-root")!;

  const client = new SessionClient(baseUrl);
  const f1Series: number[] = [];

  const flow = new SessionFlow(client, {
    onCompatible: (iteration: number) => renderTick(tickLog, iteration),
    onQuery: (query: QueryPayload) => {
      status.textContent = `Query ${query.query_id} (iteration ${query.iteration})`;
      renderQuery(queryRoot, query, {
        onChooseSuspicious: (label) => flow.chooseSuspiciousLabel(label),
        onChooseCounter: (label) => flow.chooseCounterLabel(label),
        canSubmit: () => flow.canSubmit(),
        onSubmit: () => {
          void flow.submit().catch((err) => {
            status.textContent = `submit failed: ${err.message} (retry after reload)`;
          });
        },
      });
    },
    onDecisionApplied: (result: DecisionResponse) => {
      if (result.f1 !== undefined) f1Series.push(result.f1);
      clear(queryRoot);
      status.textContent =
        `cleaned ${result.cleaned} so far (${result.cleaned_ce} counter-examples), ` +
        `${result.queries} queries`;
    },
    onFinished: (rows: MetricsRow[]) => {
      clear(queryRoot);
      status.textContent = `Session ${flow.sessionId} finished`;
      renderSummary(summaryRoot, rows);
    },
    onError: (err: Error) => {
      status.textContent = `error: ${err.message} - the server keeps the session; reload to resume`;
    },
  });

  root.querySelector<HTMLFormElement>("#session-form")!.addEventListener("submit", (ev) => {
    ev.preventDefault();
    let config: unknown;
    try {
      config = JSON.parse(configBox.value);
    } catch {
      status.textContent = "config is not valid JSON";
      return;
    }
    status.textContent = "bootstrapping session...";
    void flow.start(config).catch((err) => {
      status.textContent = `could not start: ${err.message}`;
    });
  });

  root.querySelector<HTMLElement>("#resume")!.addEventListener("click", () => {
    const sessionId = root.querySelector<HTMLInputElement>("#resume-id")!.value.trim();
    if (!sessionId) return;
    void flow.resume(sessionId).catch((err) => {
      status.textContent = `could not resume: ${err.message}`;
    });
  });

  document.addEventListener("keydown", (ev) => {
    if (flow.phase !== "awaiting-decision" || !flow.query) return;
    if (ev.key === "Enter" && flow.canSubmit()) {
      void flow.submit();
      return;
    }
    const digit = Number(ev.key);
    if (!Number.isInteger(digit) || digit < 1) return;
    if (digit > flow.query.class_names.length) return;
    if (ev.shiftKey && flow.query.counterexample) {
      flow.chooseCounterLabel(digit);
    } else if (!ev.shiftKey) {
      flow.chooseSuspiciousLabel(digit);
    }
  });

  return flow;
}

declare global {
  interface Window {
    LABELCLEAN_BASE_URL?: string;
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mountConsole(
    document.getElementById("app") as HTMLElement,
    window.LABELCLEAN_BASE_URL ?? "http://127.0.0.1:8000",
  );
}
