import type {
  AnswerResponse,
  CreateSessionResponse,
  EndSessionResponse,
  SessionResource,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let response: Response;
  try {
    response = await fetch(url, init);
  } catch (err) {
    throw new ApiError(0, "network", `cannot reach the service: ${String(err)}`);
  }
  let body: unknown = null;
  try {
    body = await response.json();
  } catch {
    // error shape below covers non-JSON replies
  }
  if (!response.ok) {
    const err = body as { code?: string; message?: string } | null;
    throw new ApiError(
      response.status,
      err?.code ?? "error",
      err?.message ?? `service returned status ${response.status}`,
    );
  }
  return body as T;
}

function post<T>(url: string, payload: unknown): Promise<T> {
  return request<T>(url, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(payload),
  });
}

/** Thin typed client of the session endpoints; no logic of its own. */
export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  createSession(
    caption: string,
    options: { k?: number; targetId?: string } = {},
  ): Promise<CreateSessionResponse> {
    return post(`${this.baseUrl}/sessions`, {
      caption,
      k: options.k ?? null,
      target_id: options.targetId ?? null,
    });
  }

  getSession(sessionId: string): Promise<SessionResource> {
    return request(`${this.baseUrl}/sessions/${sessionId}`);
  }

  submitAnswer(sessionId: string, text: string): Promise<AnswerResponse> {
    return post(`${this.baseUrl}/sessions/${sessionId}/answer`, { text });
  }

  endSession(sessionId: string): Promise<EndSessionResponse> {
    return post(`${this.baseUrl}/sessions/${sessionId}/end`, {});
  }
}
