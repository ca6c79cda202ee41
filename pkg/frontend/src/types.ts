/** Wire types for the cleaning service HTTP API. */

export interface TabularRender {
  kind: "tabular";
  features: { name: string; value: number }[];
}

export interface ImageRender {
  kind: "image";
  height: number;
  width: number;
  pixels: number[][];
}

export type RenderedItem = TabularRender | ImageRender;

export interface SuspiciousView {
  id: number;
  rendered: RenderedItem;
  current_label: number;
  predicted_label: number;
  margin: number;
}

export interface CounterExampleView {
  id: number;
  rendered: RenderedItem;
  current_label: number;
  score: number | null;
}

export interface QueryPayload {
  query_id: number;
  iteration: number;
  suspicious: SuspiciousView;
  counterexample: CounterExampleView | null;
  class_names: string[];
}

export interface AdvanceCompatible {
  status: "compatible";
  iteration: number;
  dataset_size: number;
}

export interface AdvanceQuery {
  status: "query";
  payload: QueryPayload;
}

export type AdvanceResponse = AdvanceCompatible | AdvanceQuery;

export interface DecisionRequest {
  query_id: number;
  y_t: number;
  y_k?: number;
}

export interface DecisionResponse {
  iteration: number;
  cleaned: number;
  cleaned_ce: number;
  queries: number;
  dataset_size: number;
  f1?: number;
}

export interface MetricsRow {
  iteration: number;
  incoming_id: number;
  suspicious: boolean;
  query_issued: boolean;
  ce_id: number | null;
  incoming_label_before: number;
  incoming_label_after: number;
  ce_label_before: number | null;
  ce_label_after: number | null;
  cleaned_suspicious: number;
  cleaned_counterexamples: number;
  queries: number;
  dataset_size: number;
  useless_queries: number;
}

export interface SessionView {
  session_id: string;
  phase: "awaiting-example" | "awaiting-decision" | "finished";
  iteration: number;
  dataset_size: number;
  stream_remaining: number;
  queries: number;
  cleaned: number;
  cleaned_ce: number;
  pending: QueryPayload | null;
}

export interface ApiError {
  code: string;
  message: string;
}

export class ServiceError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
  }
}
