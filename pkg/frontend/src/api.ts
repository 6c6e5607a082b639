// Typed client for the quiz HTTP API. Everything the UI knows about the
// server lives here; views never touch fetch directly.

export interface SessionInfo {
  session_id: string;
  n_questions: number;
}

export interface SessionState {
  session_id: string;
  n_questions: number;
  answered: Record<string, number>;
  finalized: boolean;
}

export interface QuestionPayload {
  session_id: string;
  position: number;
  n_questions: number;
  question_id: string;
  initial_media: string;
  final_media: string;
  options: string[];
  answered_choice: number | null;
}

export interface AnswerReply {
  accepted: boolean;
  question_id: string;
  position: number;
  choice: number;
  n_answered: number;
}

export interface ResultRow {
  position: number;
  question_id: string;
  choice: number | null;
  correct_index: number;
  correct: boolean;
}

export interface Results {
  session_id: string;
  n_questions: number;
  n_correct: number;
  n_abstained: number;
  accuracy: number;
  per_question: ResultRow[];
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

function findAnswerKeys(value: unknown, found: string[] = []): string[] {
  if (Array.isArray(value)) {
    for (const v of value) findAnswerKeys(v, found);
  } else if (value !== null && typeof value === "object") {
    for (const [k, v] of Object.entries(value as Record<string, unknown>)) {
      if (k.toLowerCase().includes("correct")) found.push(k);
      findAnswerKeys(v, found);
    }
  }
  return found;
}

/** Mid-session payloads must never carry the answer key; refuse to proceed
 *  if the server ever leaks one. Results are exempt: the session is over. */
export function assertNoAnswerKey(payload: unknown): void {
  const keys = findAnswerKeys(payload);
  if (keys.length > 0) {
    throw new Error(`server leaked answer keys mid-session: ${keys.join(", ")}`);
  }
}

async function request<T>(
  path: string,
  init?: RequestInit,
  guard: boolean = true,
): Promise<T> {
  const res = await fetch(path, init);
  const body = await res.json().catch(() => ({}));
  if (!res.ok) {
    const detail = (body as { detail?: string }).detail ?? res.statusText;
    throw new ApiError(res.status, detail);
  }
  if (guard) assertNoAnswerKey(body);
  return body as T;
}

function post(payload: unknown): RequestInit {
  return {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(payload),
  };
}

export function createSession(nQuestions?: number): Promise<SessionInfo> {
  return request<SessionInfo>(
    "/api/sessions",
    post(nQuestions === undefined ? {} : { n_questions: nQuestions }),
  );
}

export function getSession(sid: string): Promise<SessionState> {
  return request<SessionState>(`/api/sessions/${sid}`);
}

export function getQuestion(sid: string, position: number): Promise<QuestionPayload> {
  return request<QuestionPayload>(`/api/sessions/${sid}/questions/${position}`);
}

export function submitAnswer(
  sid: string,
  questionId: string,
  choice: number,
): Promise<AnswerReply> {
  return request<AnswerReply>(
    `/api/sessions/${sid}/answers`,
    post({ question_id: questionId, choice }),
  );
}

// results legitimately contain correct_index, so the leak guard is off
export function getResults(sid: string): Promise<Results> {
  return request<Results>(`/api/sessions/${sid}/results`, undefined, false);
}
