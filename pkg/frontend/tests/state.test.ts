import { describe, expect, it } from "vitest";

import {
  clampPosition,
  fromServerState,
  isComplete,
  nAnswered,
  newProgress,
  nextUnanswered,
  parseHash,
  recordAnswer,
  toHash,
} from "../src/state";

describe("progress bookkeeping", () => {
  it("records each position once, first writer wins", () => {
    const p = newProgress("s1", 3);
    recordAnswer(p, 1, 2);
    recordAnswer(p, 1, 0);
    expect(p.answered.get(1)).toBe(2);
    expect(nAnswered(p)).toBe(1);
    expect(isComplete(p)).toBe(false);
  });

  it("is complete when every slot is filled", () => {
    const p = newProgress("s1", 2);
    recordAnswer(p, 0, 0);
    recordAnswer(p, 1, 3);
    expect(isComplete(p)).toBe(true);
    expect(nextUnanswered(p)).toBeNull();
  });

  it("nextUnanswered scans forward and wraps", () => {
    const p = newProgress("s1", 4);
    recordAnswer(p, 2, 1);
    recordAnswer(p, 3, 1);
    expect(nextUnanswered(p, 2)).toBe(0);
    recordAnswer(p, 0, 1);
    expect(nextUnanswered(p, 2)).toBe(1);
  });

  it("clamps navigation to the question range", () => {
    const p = newProgress("s1", 5);
    expect(clampPosition(p, -3)).toBe(0);
    expect(clampPosition(p, 99)).toBe(4);
    expect(clampPosition(p, 2)).toBe(2);
  });
});

describe("hash round trip", () => {
  it("keeps sid and position", () => {
    const hash = toHash("abc123", 17);
    expect(parseHash(hash)).toEqual({ sid: "abc123", position: 17 });
  });

  it("escapes awkward session ids", () => {
    const hash = toHash("a&b=c", 0);
    expect(parseHash(hash)).toEqual({ sid: "a&b=c", position: 0 });
  });

  it("rejects anything malformed", () => {
    expect(parseHash("")).toBeNull();
    expect(parseHash("#s=onlysid")).toBeNull();
    expect(parseHash("#q=2&s=x")).toBeNull();
    expect(parseHash("#s=x&q=notanumber")).toBeNull();
  });
});

describe("server state import", () => {
  it("restores answers and the finalized flag", () => {
    const p = fromServerState({
      session_id: "s9",
      n_questions: 4,
      answered: { "0": 1, "2": 3 },
      finalized: true,
    });
    expect(p.sid).toBe("s9");
    expect(p.answered.get(0)).toBe(1);
    expect(p.answered.get(2)).toBe(3);
    expect(nAnswered(p)).toBe(2);
    expect(p.finalized).toBe(true);
  });
});
