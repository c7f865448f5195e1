import { ApiClient, ApiError } from "./api.js";
import type { SessionView } from "./types.js";

type Listener = (view: SessionView) => void;

function emptyView(): SessionView {
  return {
    sessionId: null,
    rounds: [],
    pendingQuestion: null,
    done: false,
    busy: false,
    error: null,
    log: null,
  };
}

/**
 * Client-side session state: a cache of the service's session resource
 * plus request bookkeeping. All retrieval logic lives server-side; this
 * store only mirrors responses. One request may be in flight at a time;
 * a failed call surfaces its error and leaves the cached view untouched.
 */
export class SessionStore {
  private view: SessionView = emptyView();
  private listeners: Listener[] = [];

  constructor(private readonly api: ApiClient) {}

  get state(): SessionView {
    return this.view;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private commit(patch: Partial<SessionView>): void {
    this.view = { ...this.view, ...patch };
    for (const listener of this.listeners) {
      listener(this.view);
    }
  }

  private async guarded<T>(work: () => Promise<T>): Promise<T | null> {
    if (this.view.busy) {
      return null;
    }
    this.commit({ busy: true, error: null });
    try {
      const result = await work();
      this.commit({ busy: false });
      return result;
    } catch (err) {
      if (err instanceof ApiError && err.code === "conflict" && this.view.sessionId) {
        // Someone else won the round; re-sync with the service.
        await this.refreshSilently();
        this.commit({ busy: false, error: err.message });
        return null;
      }
      const message = err instanceof Error ? err.message : String(err);
      this.commit({ busy: false, error: message });
      return null;
    }
  }

  /** Start a session; renders the round-0 grid and the first question. */
  async start(
    caption: string,
    options: { k?: number; targetId?: string } = {},
  ): Promise<boolean> {
    const created = await this.guarded(() => this.api.createSession(caption, options));
    if (created === null) {
      return false;
    }
    this.commit({
      sessionId: created.session_id,
      rounds: [created.round],
      pendingQuestion: created.question,
      done: created.done,
      log: null,
    });
    return true;
  }

  /** Submit the answer to the pending question; appends one round. */
  async answer(text: string): Promise<boolean> {
    const sessionId = this.view.sessionId;
    if (!sessionId || this.view.done || !this.view.pendingQuestion) {
      return false;
    }
    const reply = await this.guarded(() => this.api.submitAnswer(sessionId, text));
    if (reply === null) {
      return false;
    }
    this.commit({
      rounds: [...this.view.rounds, reply.round],
      pendingQuestion: reply.question,
      done: reply.done,
    });
    return true;
  }

  /** Re-fetch the full session; reproduces the identical view. */
  async refresh(sessionId?: string): Promise<boolean> {
    const id = sessionId ?? this.view.sessionId;
    if (!id) {
      return false;
    }
    const ok = await this.guarded(async () => {
      await this.applyResource(id);
      return true;
    });
    return ok === true;
  }

  private async refreshSilently(): Promise<void> {
    const id = this.view.sessionId;
    if (!id) {
      return;
    }
    try {
      await this.applyResource(id);
    } catch {
      // keep the cached view when the re-sync itself fails
    }
  }

  private async applyResource(id: string): Promise<void> {
    const resource = await this.api.getSession(id);
    this.commit({
      sessionId: resource.session_id,
      rounds: resource.rounds,
      pendingQuestion: resource.question,
      done: resource.done,
    });
  }

  /** End the session; the episode log becomes available for download. */
  async end(): Promise<boolean> {
    const sessionId = this.view.sessionId;
    if (!sessionId) {
      return false;
    }
    const ended = await this.guarded(() => this.api.endSession(sessionId));
    if (ended === null) {
      return false;
    }
    this.commit({ done: true, pendingQuestion: null, log: ended.log });
    return true;
  }

  reset(): void {
    this.view = emptyView();
    this.commit({});
  }
}
