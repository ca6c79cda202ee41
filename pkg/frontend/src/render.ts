/** DOM rendering for the annotation console.
 *
 * Tabular items become a two-column name/value table of training-set
 * z-scores; image items draw onto a canvas at 10x nearest-neighbor scale.
 * The counter-example's raw score hides behind a details toggle so it cannot
 * anchor the annotator.
 */

import { MetricsRow, QueryPayload, RenderedItem } from "./types";

export function clear(node: HTMLElement): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

export function renderItem(item: RenderedItem): HTMLElement {
  if (item.kind === "image") {
    const scale = 10;
    const canvas = document.createElement("canvas");
    canvas.width = item.width * scale;
    canvas.height = item.height * scale;
    canvas.className = "item-image";
    const ctx = canvas.getContext("2d");
    if (ctx) {
      const values = item.pixels.flat();
      const lo = Math.min(...values);
      const hi = Math.max(...values);
      const span = hi - lo || 1;
      for (let r = 0; r < item.height; r++) {
        for (let c = 0; c < item.width; c++) {
          const g = Math.round(((item.pixels[r][c] - lo) / span) * 255);
          ctx.fillStyle = `rgb(${g},${g},${g})`;
          ctx.fillRect(c * scale, r * scale, scale, scale);
        }
      }
    }
    return canvas;
  }
  const table = document.createElement("table");
  table.className = "item-features";
  for (const feature of item.features) {
    const row = table.insertRow();
    const name = row.insertCell();
    name.textContent = feature.name;
    const value = row.insertCell();
    value.textContent = feature.value.toFixed(3);
  }
  return table;
}

export interface LabelPickerHandlers {
  onChoose: (label: number) => void;
}

export function renderLabelPicker(
  classNames: string[],
  currentLabel: number,
  handlers: LabelPickerHandlers,
): HTMLElement {
  const wrap = document.createElement("div");
  wrap.className = "label-picker";
  classNames.forEach((name, i) => {
    const label = i + 1;
    const button = document.createElement("button");
    button.type = "button";
    button.dataset.label = String(label);
    button.textContent = label === currentLabel ? `${name} (current)` : name;
    button.addEventListener("click", () => {
      for (const other of Array.from(wrap.querySelectorAll("button"))) {
        other.classList.remove("chosen");
      }
      button.classList.add("chosen");
      handlers.onChoose(label);
    });
    wrap.appendChild(button);
  });
  return wrap;
}

export interface QueryViewHandlers {
  onChooseSuspicious: (label: number) => void;
  onChooseCounter: (label: number) => void;
  onSubmit: () => void;
  canSubmit: () => boolean;
}

export function renderQuery(
  container: HTMLElement,
  query: QueryPayload,
  handlers: QueryViewHandlers,
): void {
  clear(container);
  const names = query.class_names;

  const suspicious = document.createElement("section");
  suspicious.className = "suspicious-pane";
  const sHead = document.createElement("h3");
  sHead.textContent =
    `Suspicious example #${query.suspicious.id} - annotated ` +
    `"${names[query.suspicious.current_label - 1]}", model predicts ` +
    `"${names[query.suspicious.predicted_label - 1]}" ` +
    `(margin ${query.suspicious.margin.toFixed(3)})`;
  suspicious.appendChild(sHead);
  suspicious.appendChild(renderItem(query.suspicious.rendered));
  suspicious.appendChild(
    renderLabelPicker(names, query.suspicious.current_label, {
      onChoose: handlers.onChooseSuspicious,
    }),
  );
  container.appendChild(suspicious);

  if (query.counterexample) {
    const ce = query.counterexample;
    const pane = document.createElement("section");
    pane.className = "counterexample-pane";
    const head = document.createElement("h3");
    head.textContent =
      `Counter-example #${ce.id} - labeled "${names[ce.current_label - 1]}"` +
      ` (supports the model's doubt)`;
    pane.appendChild(head);
    pane.appendChild(renderItem(ce.rendered));
    if (ce.score !== null) {
      const details = document.createElement("details");
      const summary = document.createElement("summary");
      summary.textContent = "selection score";
      details.appendChild(summary);
      const score = document.createElement("span");
      score.className = "ce-score";
      score.textContent = ce.score.toPrecision(4);
      details.appendChild(score);
      pane.appendChild(details);
    }
    pane.appendChild(
      renderLabelPicker(names, ce.current_label, {
        onChoose: handlers.onChooseCounter,
      }),
    );
    container.appendChild(pane);
  }

  const submit = document.createElement("button");
  submit.type = "button";
  submit.id = "submit-decision";
  submit.textContent = "Submit labels";
  submit.disabled = true;
  submit.addEventListener("click", () => {
    if (handlers.canSubmit()) handlers.onSubmit();
  });
  container.appendChild(submit);
  // any picker click may unlock the submit button
  container.addEventListener("click", () => {
    submit.disabled = !handlers.canSubmit();
  });
}

export function renderTick(log: HTMLElement, iteration: number): void {
  const tick = document.createElement("span");
  tick.className = "tick";
  tick.title = `iteration ${iteration}: compatible`;
  tick.textContent = "·";
  log.appendChild(tick);
}

/** Inline SVG chart of the trace: test-F1 when present plus cleaned counts. */
export function renderMetricsChart(container: HTMLElement, rows: MetricsRow[],
                                   f1Series: number[] = []): void {
  clear(container);
  if (rows.length === 0) return;
  const width = 460;
  const height = 160;
  const pad = 26;
  const svgNs = "http://www.w3.org/2000/svg";
  const svg = document.createElementNS(svgNs, "svg");
  svg.setAttribute("width", String(width));
  svg.setAttribute("height", String(height));

  const maxIter = rows[rows.length - 1].iteration;
  const cleaned = rows.map(
    (r) => r.cleaned_suspicious + r.cleaned_counterexamples,
  );
  const maxCleaned = Math.max(1, ...cleaned);

  const xOf = (iter: number) => pad + ((width - 2 * pad) * (iter - 1)) / Math.max(1, maxIter - 1);
  const line = (points: string, color: string) => {
    const path = document.createElementNS(svgNs, "polyline");
    path.setAttribute("points", points);
    path.setAttribute("fill", "none");
    path.setAttribute("stroke", color);
    path.setAttribute("stroke-width", "1.5");
    svg.appendChild(path);
  };

  line(
    rows
      .map((r, i) => `${xOf(r.iteration)},${height - pad - (height - 2 * pad) * (cleaned[i] / maxCleaned)}`)
      .join(" "),
    "#2a7",
  );
  if (f1Series.length === rows.length) {
    line(
      rows
        .map((r, i) => `${xOf(r.iteration)},${height - pad - (height - 2 * pad) * f1Series[i]}`)
        .join(" "),
      "#27c",
    );
  }
  container.appendChild(svg);
}

export function renderSummary(container: HTMLElement, rows: MetricsRow[],
                              f1Series: number[] = []): void {
  clear(container);
  const last = rows[rows.length - 1];
  const text = document.createElement("p");
  text.className = "summary";
  if (!last) {
    text.textContent = "Stream finished: no iterations recorded.";
    container.appendChild(text);
    return;
  }
  const cleaned = last.cleaned_suspicious + last.cleaned_counterexamples;
  text.textContent =
    `Stream finished after ${last.iteration} iterations: ` +
    `${last.queries} queries, ${cleaned} labels cleaned ` +
    `(${last.cleaned_counterexamples} counter-examples), ` +
    `${last.useless_queries} queries touched nothing corrupted.`;
  container.appendChild(text);
  const chart = document.createElement("div");
  container.appendChild(chart);
  renderMetricsChart(chart, rows, f1Series);
}
