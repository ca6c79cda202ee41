/** Session flow state machine, kept free of DOM so tests can drive it headless.
 *
 * The flow advances the server until a query arrives, collects explicit label
 * choices for both shown items, submits, and repeats until the stream is
 * exhausted.  Labels are never auto-filled: the submit gate requires the user
 * to have actively chosen a label for the suspicious example and, when one is
 * shown, for the counter-example - confirming the current label counts as a
 * choice, silence does not.
 */

import { SessionClient } from "./api";
import {
  DecisionResponse,
  MetricsRow,
  QueryPayload,
  ServiceError,
} from "./types";

export type FlowPhase = "idle" | "advancing" | "awaiting-decision" | "finished" | "error";

export interface FlowHooks {
  onCompatible?: (iteration: number) => void;
  onQuery?: (query: QueryPayload) => void;
  onDecisionApplied?: (result: DecisionResponse) => void;
  onFinished?: (metrics: MetricsRow[]) => void;
  onError?: (error: Error) => void;
}

export class SessionFlow {
  phase: FlowPhase = "idle";
  sessionId: string | null = null;
  query: QueryPayload | null = null;
  private chosenSuspicious: number | null = null;
  private chosenCounter: number | null = null;
  lastDecision: DecisionResponse | null = null;

  constructor(
    private readonly client: SessionClient,
    private readonly hooks: FlowHooks = {},
  ) {}

  async start(config: unknown): Promise<void> {
    const created = await this.client.createSession(config);
    this.sessionId = created.session_id;
    await this.advanceUntilQuery();
  }

  /** Reconnect to an existing session: the server is the source of truth for
   * any pending query, so a page reload loses nothing. */
  async resume(sessionId: string): Promise<void> {
    this.sessionId = sessionId;
    const view = await this.client.getSession(sessionId);
    if (view.phase === "awaiting-decision" && view.pending) {
      this.setQuery(view.pending);
    } else if (view.phase === "finished") {
      await this.finish();
    } else {
      await this.advanceUntilQuery();
    }
  }

  async advanceUntilQuery(): Promise<void> {
    if (!this.sessionId) throw new Error("no session");
    this.phase = "advancing";
    for (;;) {
      let response;
      try {
        response = await this.client.advance(this.sessionId);
      } catch (err) {
        if (err instanceof ServiceError && err.status === 410) {
          await this.finish();
          return;
        }
        if (err instanceof ServiceError && err.status === 409) {
          // a stale tab left a pending decision; recover it from the server
          await this.recoverPending();
          return;
        }
        this.phase = "error";
        this.hooks.onError?.(err as Error);
        throw err;
      }
      if (response.status === "compatible") {
        this.hooks.onCompatible?.(response.iteration);
        continue;
      }
      this.setQuery(response.payload);
      return;
    }
  }

  private setQuery(payload: QueryPayload): void {
    this.query = payload;
    this.chosenSuspicious = null;
    this.chosenCounter = null;
    this.phase = "awaiting-decision";
    this.hooks.onQuery?.(payload);
  }

  chooseSuspiciousLabel(label: number): void {
    this.requireQuery();
    this.chosenSuspicious = label;
  }

  chooseCounterLabel(label: number): void {
    const query = this.requireQuery();
    if (!query.counterexample) throw new Error("query has no counter-example");
    this.chosenCounter = label;
  }

  /** True once every shown item has an explicit label choice. */
  canSubmit(): boolean {
    if (this.phase !== "awaiting-decision" || !this.query) return false;
    if (this.chosenSuspicious === null) return false;
    if (this.query.counterexample && this.chosenCounter === null) return false;
    return true;
  }

  async submit(): Promise<void> {
    const query = this.requireQuery();
    if (!this.canSubmit()) throw new Error("both labels must be chosen before submitting");
    if (!this.sessionId) throw new Error("no session");
    const decision = {
      query_id: query.query_id,
      y_t: this.chosenSuspicious as number,
      ...(query.counterexample ? { y_k: this.chosenCounter as number } : {}),
    };
    try {
      const result = await this.client.submitDecision(this.sessionId, decision);
      this.lastDecision = result;
      this.query = null;
      this.hooks.onDecisionApplied?.(result);
    } catch (err) {
      if (err instanceof ServiceError && err.status === 409) {
        // stale query id: refetch whatever the server actually has pending
        await this.recoverPending();
        return;
      }
      this.phase = "error";
      this.hooks.onError?.(err as Error);
      throw err;
    }
    await this.advanceUntilQuery();
  }

  private async recoverPending(): Promise<void> {
    if (!this.sessionId) throw new Error("no session");
    const view = await this.client.getSession(this.sessionId);
    if (view.phase === "awaiting-decision" && view.pending) {
      this.setQuery(view.pending);
    } else if (view.phase === "finished") {
      await this.finish();
    } else {
      await this.advanceUntilQuery();
    }
  }

  private async finish(): Promise<void> {
    this.phase = "finished";
    this.query = null;
    if (this.sessionId) {
      const rows = await this.client.metrics(this.sessionId);
      this.hooks.onFinished?.(rows);
    }
  }

  private requireQuery(): QueryPayload {
    if (!this.query) throw new Error("no pending query");
    return this.query;
  }
}
