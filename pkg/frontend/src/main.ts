// Bootstraps a quiz session against the same-origin API and drives the views.

import {
  ApiError,
  createSession,
  getQuestion,
  getResults,
  getSession,
  submitAnswer,
} from "./api";
import {
  QuizProgress,
  clampPosition,
  fromServerState,
  isComplete,
  nextUnanswered,
  parseHash,
  toHash,
} from "./state";
import { choiceFromKey, renderError, renderQuestion, renderResults } from "./views";

async function resumeOrCreate(): Promise<QuizProgress> {
  const fromHash = parseHash(window.location.hash);
  if (fromHash) {
    try {
      const p = fromServerState(await getSession(fromHash.sid));
      p.position = clampPosition(p, fromHash.position);
      return p;
    } catch (e) {
      if (!(e instanceof ApiError && e.status === 404)) throw e;
      // stale hash: fall through to a fresh session
    }
  }
  const info = await createSession();
  const p = fromServerState(await getSession(info.session_id));
  return p;
}

export async function boot(root: HTMLElement): Promise<void> {
  let progress: QuizProgress;
  try {
    progress = await resumeOrCreate();
  } catch (e) {
    renderError(root, `could not reach the quiz server: ${String(e)}`);
    return;
  }

  const show = async (position: number): Promise<void> => {
    progress.position = clampPosition(progress, position);
    window.location.hash = toHash(progress.sid, progress.position);
    if (progress.finalized) {
      renderResults(root, await getResults(progress.sid));
      return;
    }
    const q = await getQuestion(progress.sid, progress.position);
    renderQuestion(root, q, handlers(q.question_id), isComplete(progress));
  };

  const choose = async (questionId: string, choice: number): Promise<void> => {
    try {
      await submitAnswer(progress.sid, questionId, choice);
      progress.answered.set(progress.position, choice);
    } catch (e) {
      if (!(e instanceof ApiError && e.status === 409)) throw e;
      // already answered (double key press, second tab): trust the server
      const server = fromServerState(await getSession(progress.sid));
      progress.answered = server.answered;
      progress.finalized = server.finalized;
    }
    const pending = nextUnanswered(progress, progress.position);
    if (pending === null) {
      await finish();
    } else {
      await show(pending);
    }
  };

  const finish = async (): Promise<void> => {
    const results = await getResults(progress.sid);
    progress.finalized = true;
    renderResults(root, results);
  };

  const handlers = (questionId: string) => ({
    onChoose: (choice: number) => void choose(questionId, choice),
    onPrev: () => void show(progress.position - 1),
    onNext: () => void show(progress.position + 1),
    onFinish: () => void finish(),
  });

  window.addEventListener("keydown", (ev) => {
    if (progress.finalized || ev.altKey || ev.ctrlKey || ev.metaKey) return;
    const choice = choiceFromKey(ev.key);
    if (choice === null) return;
    const current = root.querySelector<HTMLButtonElement>(
      `button.option[data-choice="${choice}"]`,
    );
    if (current && !current.disabled) current.click();
  });

  await show(progress.position);
}

const app = document.getElementById("app");
if (app) void boot(app);
