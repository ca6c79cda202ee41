/** Typed client for the cleaning service; network failures retry with backoff. */

import {
  AdvanceResponse,
  ApiError,
  DecisionRequest,
  DecisionResponse,
  MetricsRow,
  ServiceError,
  SessionView,
} from "./types";

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

export interface ClientOptions {
  maxAttempts?: number;
  baseDelayMs?: number;
  fetchImpl?: typeof fetch;
}

export class SessionClient {
  private readonly fetchImpl: typeof fetch;
  private readonly maxAttempts: number;
  private readonly baseDelayMs: number;

  constructor(
    public readonly baseUrl: string,
    options: ClientOptions = {},
  ) {
    this.fetchImpl = options.fetchImpl ?? fetch.bind(globalThis);
    this.maxAttempts = options.maxAttempts ?? 3;
    this.baseDelayMs = options.baseDelayMs ?? 250;
  }

  /** HTTP with retry on network failure only; 4xx/5xx surface immediately
   * as ServiceError so the state machine can react (409 recovery, etc.). */
  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let lastError: unknown;
    for (let attempt = 0; attempt < this.maxAttempts; attempt++) {
      let response: Response;
      try {
        response = await this.fetchImpl(`${this.baseUrl}${path}`, {
          method,
          headers: body === undefined ? undefined : { "Content-Type": "application/json" },
          body: body === undefined ? undefined : JSON.stringify(body),
        });
      } catch (err) {
        lastError = err;
        if (attempt < this.maxAttempts - 1) {
          await sleep(this.baseDelayMs * 2 ** attempt);
        }
        continue;
      }
      if (!response.ok) {
        let payload: Partial<ApiError> = {};
        try {
          payload = (await response.json()) as ApiError;
        } catch {
          // non-JSON error body
        }
        throw new ServiceError(
          response.status,
          payload.code ?? "unknown",
          payload.message ?? response.statusText,
        );
      }
      return (await response.json()) as T;
    }
    throw lastError instanceof Error ? lastError : new Error("network failure");
  }

  createSession(config: unknown): Promise<{ session_id: string; phase: string }> {
    return this.request("POST", "/sessions", config);
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  advance(sessionId: string): Promise<AdvanceResponse> {
    return this.request("POST", `/sessions/${sessionId}/advance`);
  }

  submitDecision(sessionId: string, decision: DecisionRequest): Promise<DecisionResponse> {
    return this.request("POST", `/sessions/${sessionId}/decision`, decision);
  }

  async metrics(sessionId: string): Promise<MetricsRow[]> {
    const body = await this.request<{ rows: MetricsRow[] }>(
      "GET",
      `/sessions/${sessionId}/metrics`,
    );
    return body.rows;
  }
}
