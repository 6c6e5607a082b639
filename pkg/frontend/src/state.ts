// Session progress plus URL-hash persistence, so a reload lands on the
// same session and question.

export interface QuizProgress {
  sid: string;
  position: number;
  nQuestions: number;
  answered: Map<number, number>;
  finalized: boolean;
}

export function newProgress(sid: string, nQuestions: number): QuizProgress {
  return { sid, position: 0, nQuestions, answered: new Map(), finalized: false };
}

export function recordAnswer(p: QuizProgress, position: number, choice: number): void {
  if (!p.answered.has(position)) p.answered.set(position, choice);
}

export function nAnswered(p: QuizProgress): number {
  return p.answered.size;
}

export function isComplete(p: QuizProgress): boolean {
  return p.answered.size >= p.nQuestions;
}

/** First position without an answer, or null once every slot is filled. */
export function nextUnanswered(p: QuizProgress, from: number = 0): number | null {
  for (let i = 0; i < p.nQuestions; i++) {
    const pos = (from + i) % p.nQuestions;
    if (!p.answered.has(pos)) return pos;
  }
  return null;
}

export function clampPosition(p: QuizProgress, position: number): number {
  return Math.min(Math.max(position, 0), p.nQuestions - 1);
}

// -- URL hash ----------------------------------------------------------------

export function toHash(sid: string, position: number): string {
  return `#s=${encodeURIComponent(sid)}&q=${position}`;
}

export function parseHash(hash: string): { sid: string; position: number } | null {
  const m = /^#s=([^&]+)&q=(\d+)$/.exec(hash);
  if (!m || !m[1] || m[2] === undefined) return null;
  return { sid: decodeURIComponent(m[1]), position: parseInt(m[2], 10) };
}

/** Rebuild local progress from the server's view of the session. */
export function fromServerState(state: {
  session_id: string;
  n_questions: number;
  answered: Record<string, number>;
  finalized: boolean;
}): QuizProgress {
  const p = newProgress(state.session_id, state.n_questions);
  for (const [pos, choice] of Object.entries(state.answered)) {
    p.answered.set(parseInt(pos, 10), choice);
  }
  p.finalized = state.finalized;
  return p;
}
