// DOM rendering. Pure functions from payloads to elements; main.ts wires
// the handlers and owns navigation.

import type { QuestionPayload, Results } from "./api";

export const OPTION_LABELS = ["a", "b", "c", "d"] as const;

export interface QuestionHandlers {
  onChoose: (choice: number) => void;
  onPrev: () => void;
  onNext: () => void;
  onFinish: () => void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function clip(src: string, caption: string): HTMLElement {
  const fig = el("figure", "clip");
  const img = el("img");
  img.src = src;
  img.alt = caption;
  fig.append(img, el("figcaption", undefined, caption));
  return fig;
}

export function renderQuestion(
  root: HTMLElement,
  q: QuestionPayload,
  handlers: QuestionHandlers,
  showFinish: boolean,
): void {
  root.replaceChildren();

  const header = el("header");
  header.append(
    el("h1", undefined, "Which action explains the change?"),
    el("span", "progress", `${q.position + 1}/${q.n_questions}`),
  );

  const states = el("section", "states");
  states.append(
    clip(q.initial_media, "initial state"),
    el("span", "arrow", "→"),
    clip(q.final_media, "final state"),
  );

  const grid = el("section", "options");
  q.options.forEach((src, i) => {
    const label = OPTION_LABELS[i] ?? String(i);
    const btn = el("button", "option");
    btn.dataset.choice = String(i);
    btn.append(clip(src, `(${label})`));
    if (q.answered_choice !== null) {
      btn.disabled = true;
      if (q.answered_choice === i) btn.classList.add("chosen");
    } else {
      btn.addEventListener("click", () => handlers.onChoose(i));
    }
    grid.append(btn);
  });

  const nav = el("nav");
  const prev = el("button", "nav-prev", "← previous");
  prev.disabled = q.position === 0;
  prev.addEventListener("click", handlers.onPrev);
  const next = el("button", "nav-next", "next →");
  next.disabled = q.position >= q.n_questions - 1;
  next.addEventListener("click", handlers.onNext);
  nav.append(prev, next);
  if (showFinish) {
    const finish = el("button", "finish", "finish quiz");
    finish.addEventListener("click", handlers.onFinish);
    nav.append(finish);
  }

  const hint = el("p", "hint", "press a, b, c or d to answer");
  root.append(header, states, grid, nav, hint);
}

export function renderResults(root: HTMLElement, r: Results): void {
  root.replaceChildren();
  const pct = (100 * r.accuracy).toFixed(1);
  root.append(
    el("h1", undefined, "Results"),
    el(
      "p",
      "score",
      `${r.n_correct} of ${r.n_questions} correct (${pct}%)` +
        (r.n_abstained > 0 ? `, ${r.n_abstained} unanswered` : ""),
    ),
  );
  const list = el("ol", "breakdown");
  for (const row of r.per_question) {
    const choice = row.choice === null ? "no answer" : `(${OPTION_LABELS[row.choice]})`;
    const verdict = row.correct ? "correct" : `wrong, was (${OPTION_LABELS[row.correct_index]})`;
    list.append(el("li", row.correct ? "right" : "wrong", `${choice}: ${verdict}`));
  }
  root.append(list);
}

export function renderError(root: HTMLElement, message: string): void {
  root.replaceChildren(el("p", "error", message));
}

/** Map a keyboard event to an option index, or null if it isn't one. */
export function choiceFromKey(key: string): number | null {
  const i = OPTION_LABELS.indexOf(key.toLowerCase() as (typeof OPTION_LABELS)[number]);
  return i === -1 ? null : i;
}
