/**
 * Typed client for the trial service's HTTP+JSON API.
 *
 * The UI consumes the service exclusively through this module; it never
 * computes pressure decisions or answer correctness itself. `fetch` is
 * injectable so tests can run against a fake transport.
 */

export type Phase =
  | "practice1" | "rest1" | "practice2" | "rest2"
  | "test1" | "questionnaire1" | "rest3"
  | "test2" | "questionnaire2" | "done";

export type Group = "control" | "random" | "rl";
export type Order = "feedback-first" | "control-first";

export interface CreateSessionRequest {
  participant: string;
  group: Group;
  order: Order;
  seed?: number;
}

export interface CreateSessionResponse {
  session_id: string;
  phase: Phase;
  group: Group;
  order: Order;
  schema: string;
}

export interface TrialStub {
  phase: Phase;
  trial_index: number;
  question: string;
  pressure: boolean;
  trials_in_phase: number;
}

export interface AnswerResponse {
  phase: Phase;
  trial_index: number;
  valid: boolean;
  /** Present only during practice1, where participants get feedback. */
  correct?: boolean;
  next_phase: Phase;
}

export interface SessionStateResponse {
  phase: Phase;
  trial_index: number;
  trials_in_phase: number;
  rest_remaining_s: number;
  outstanding: { question: string; pressure: boolean; trial_index: number } | null;
  resumed: boolean;
}

export interface QuestionnaireAnswers {
  attention: number;
  anxiety: number;
}

/** Raised for any non-2xx response; 425 carries the remaining rest time. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
    readonly retryAfterS: number | null = null,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }

  get isRestInProgress(): boolean {
    return this.status === 425;
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class StudyApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  createSession(req: CreateSessionRequest): Promise<CreateSessionResponse> {
    return this.request("POST", "/sessions", req);
  }

  nextTrial(sessionId: string): Promise<TrialStub> {
    return this.request("GET", `/sessions/${sessionId}/next`);
  }

  submitAnswer(sessionId: string, answer: boolean, rtMs: number): Promise<AnswerResponse> {
    return this.request("POST", `/sessions/${sessionId}/answer`, { answer, rt_ms: rtMs });
  }

  extendPractice(sessionId: string): Promise<{ phase: Phase; trials_in_phase: number }> {
    return this.request("POST", `/sessions/${sessionId}/extend-practice`);
  }

  submitQuestionnaire(sessionId: string, answers: QuestionnaireAnswers): Promise<{ phase: Phase }> {
    return this.request("POST", `/sessions/${sessionId}/questionnaire`, answers);
  }

  state(sessionId: string): Promise<SessionStateResponse> {
    return this.request("GET", `/sessions/${sessionId}/state`);
  }

  exportSession(sessionId: string): Promise<Record<string, unknown>> {
    return this.request("GET", `/sessions/${sessionId}/export`);
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { "content-type": "application/json" } };
    if (body !== undefined) {
      init.body = JSON.stringify(body);
    }
    const res = await this.fetchImpl(this.baseUrl + path, init);
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const payload = (await res.json()) as { detail?: string };
        if (payload.detail) detail = payload.detail;
      } catch {
        // keep the status text when the body is not JSON
      }
      const retryAfter = res.headers.get("retry-after");
      throw new ApiError(res.status, detail, retryAfter === null ? null : Number(retryAfter));
    }
    return (await res.json()) as T;
  }
}
