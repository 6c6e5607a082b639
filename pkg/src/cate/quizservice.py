"""HTTP quiz service for human runs over a question set.

Question payloads never carry the correct answer; correctness is only revealed
by the results endpoint, which finalizes the session (unanswered questions
become abstentions and no further answers are accepted). All state changes are
appended to a JSONL event log and replayed on startup.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
import uuid
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image
from pydantic import BaseModel

from .errors import ConfigError, DataError
from .questions import Question

ROLES = ("initial", "final", "opt0", "opt1", "opt2", "opt3")


class SessionNotFound(KeyError):
    pass


class SessionFinalized(RuntimeError):
    pass


class DuplicateAnswer(RuntimeError):
    """The question was already answered; first writer wins."""


def _clip_for_role(question: Question, role: str):
    if role == "initial":
        return question.initial_state
    if role == "final":
        return question.final_state
    if role.startswith("opt"):
        return question.options[int(role[3:])]
    raise ConfigError(f"unknown media role {role!r}")


def _media_token(question: Question, role: str) -> str:
    """Opaque content-derived token; reveals nothing about option provenance."""
    if role == "initial":
        ident = (question.states_clip_id, *question.initial_range, "none")
    elif role == "final":
        ident = (question.states_clip_id, *question.final_range, "none")
    else:
        p = question.provenance[int(role[3:])]
        ident = (p.source_clip_id, *p.frame_range, p.counterfactual_kind or "none")
    return hashlib.sha1("|".join(map(str, ident)).encode()).hexdigest()[:16]


class QuizStore:
    """Owns the question set, session state, media cache and the event log."""

    def __init__(
        self,
        questions: Sequence[Question],
        log_path: Path | str,
        media_dir: Path | str,
        gif_frame_ms: int = 90,
    ):
        self.questions = list(questions)
        if not self.questions:
            raise DataError("quiz needs at least one question")
        for q in self.questions:
            q.validate()
        self.log_path = Path(log_path)
        self.media_dir = Path(media_dir)
        self.media_dir.mkdir(parents=True, exist_ok=True)
        self.gif_frame_ms = gif_frame_ms
        self.sessions: dict[str, dict] = {}
        self._lock = threading.Lock()
        self._media_index: dict[str, tuple[int, str]] = {}
        for qi, q in enumerate(self.questions):
            for role in ROLES:
                self._media_index.setdefault(_media_token(q, role), (qi, role))
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        if self.log_path.exists():
            self._replay()
        self._log_fh = self.log_path.open("a")

    # -- event log -----------------------------------------------------------

    def _append(self, event: dict) -> None:
        self._log_fh.write(json.dumps(event, sort_keys=True) + "\n")
        self._log_fh.flush()

    def _replay(self) -> None:
        for line_no, line in enumerate(self.log_path.read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                ev = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{self.log_path}:{line_no}: bad event log line: {e}") from e
            kind = ev.get("type")
            if kind == "session":
                self.sessions[ev["session_id"]] = {
                    "indices": list(ev["question_indices"]),
                    "answers": {},
                    "finalized": False,
                }
            elif kind == "answer":
                sess = self.sessions.get(ev["session_id"])
                if sess is not None and ev["question_index"] not in sess["answers"]:
                    sess["answers"][ev["question_index"]] = ev["choice"]
            elif kind == "finalize":
                sess = self.sessions.get(ev["session_id"])
                if sess is not None:
                    sess["finalized"] = True

    # -- sessions ------------------------------------------------------------

    def create_session(self, n_questions: Optional[int] = None, seed: Optional[int] = None) -> dict:
        with self._lock:
            total = len(self.questions)
            # default session size follows the human-study convention of 100
            n = min(100, total) if n_questions is None else n_questions
            if not 0 < n <= total:
                raise DataError(f"n_questions must be in [1, {total}], got {n}")
            indices = list(range(total))
            if seed is not None:
                np.random.default_rng(seed).shuffle(indices)
            indices = indices[:n]
            sid = uuid.uuid4().hex
            self.sessions[sid] = {"indices": indices, "answers": {}, "finalized": False}
            self._append(
                {
                    "type": "session",
                    "session_id": sid,
                    "question_indices": indices,
                    "ts": time.time(),
                }
            )
            return {"session_id": sid, "n_questions": n}

    def _session(self, sid: str) -> dict:
        sess = self.sessions.get(sid)
        if sess is None:
            raise SessionNotFound(sid)
        return sess

    def session_state(self, sid: str) -> dict:
        sess = self._session(sid)
        return {
            "session_id": sid,
            "n_questions": len(sess["indices"]),
            "answered": {str(k): v for k, v in sorted(sess["answers"].items())},
            "finalized": sess["finalized"],
        }

    def question_payload(self, sid: str, position: int) -> dict:
        sess = self._session(sid)
        if not 0 <= position < len(sess["indices"]):
            raise DataError(f"question position {position} out of range")
        q = self.questions[sess["indices"][position]]
        return {
            "session_id": sid,
            "position": position,
            "n_questions": len(sess["indices"]),
            "question_id": q.question_id,
            "initial_media": f"/media/{_media_token(q, 'initial')}.gif",
            "final_media": f"/media/{_media_token(q, 'final')}.gif",
            "options": [f"/media/{_media_token(q, f'opt{i}')}.gif" for i in range(4)],
            "answered_choice": sess["answers"].get(position),
        }

    def _position_of(self, sess: dict, question_id: str) -> int:
        for pos, qi in enumerate(sess["indices"]):
            if self.questions[qi].question_id == question_id:
                return pos
        raise DataError(f"question {question_id!r} is not part of this session")

    def submit_answer(self, sid: str, question_id: str, choice: int) -> dict:
        """Record one answer; a second submission for the same question fails."""
        if not isinstance(choice, int) or not 0 <= choice < 4:
            raise DataError(f"choice must be in [0, 3], got {choice}")
        with self._lock:
            sess = self._session(sid)
            if sess["finalized"]:
                raise SessionFinalized(sid)
            position = self._position_of(sess, question_id)
            if position in sess["answers"]:
                raise DuplicateAnswer(question_id)
            sess["answers"][position] = choice
            self._append(
                {
                    "type": "answer",
                    "session_id": sid,
                    "question_index": position,
                    "question_id": question_id,
                    "choice": choice,
                    "ts": time.time(),
                }
            )
            return {
                "accepted": True,
                "question_id": question_id,
                "position": position,
                "choice": choice,
                "n_answered": len(sess["answers"]),
            }

    def results(self, sid: str) -> dict:
        """Finalize and grade. Unanswered questions count as abstentions."""
        with self._lock:
            sess = self._session(sid)
            if not sess["finalized"]:
                sess["finalized"] = True
                self._append({"type": "finalize", "session_id": sid, "ts": time.time()})
            per_question = []
            n_correct = 0
            n_abstained = 0
            for i, qi in enumerate(sess["indices"]):
                q = self.questions[qi]
                choice = sess["answers"].get(i)
                correct = choice is not None and choice == q.correct_index
                if choice is None:
                    n_abstained += 1
                if correct:
                    n_correct += 1
                per_question.append(
                    {
                        "position": i,
                        "question_id": q.question_id,
                        "choice": choice,
                        "correct_index": q.correct_index,
                        "correct": correct,
                    }
                )
            n = len(sess["indices"])
            return {
                "session_id": sid,
                "n_questions": n,
                "n_correct": n_correct,
                "n_abstained": n_abstained,
                "accuracy": n_correct / n,
                "per_question": per_question,
            }

    # -- media ---------------------------------------------------------------

    def media_path(self, token: str) -> Path:
        """Render the GIF for a media token on first request, then reuse it."""
        if token not in self._media_index:
            raise DataError(f"unknown media token {token!r}")
        out = self.media_dir / f"{token}.gif"
        if not out.exists():
            qi, role = self._media_index[token]
            clip = _clip_for_role(self.questions[qi], role)
            frames = [Image.fromarray(f) for f in clip.frames]
            frames[0].save(
                out,
                save_all=True,
                append_images=frames[1:],
                duration=self.gif_frame_ms,
                loop=0,
            )
        return out

    def close(self) -> None:
        self._log_fh.close()


# module scope so FastAPI can resolve the (stringified) handler annotations
class CreateSessionBody(BaseModel):
    n_questions: Optional[int] = None
    seed: Optional[int] = None


class AnswerBody(BaseModel):
    question_id: str
    choice: int


def create_app(store: QuizStore, static_dir: Optional[Path | str] = None):
    """FastAPI app over a QuizStore; optionally serves a built UI at /."""
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import FileResponse

    app = FastAPI(title="cate quiz")
    app.state.store = store

    def _wrap(fn, *args):
        try:
            return fn(*args)
        except SessionNotFound as e:
            raise HTTPException(status_code=404, detail=f"unknown session {e.args[0]!r}")
        except SessionFinalized:
            raise HTTPException(status_code=409, detail="session is finalized")
        except DuplicateAnswer as e:
            raise HTTPException(status_code=409, detail=f"question {e.args[0]!r} already answered")
        except DataError as e:
            raise HTTPException(status_code=400, detail=str(e))

    @app.get("/api/health")
    def health():
        return {"status": "ok", "n_questions": len(store.questions)}

    @app.post("/api/sessions")
    def create_session(body: CreateSessionBody):
        return _wrap(store.create_session, body.n_questions, body.seed)

    @app.get("/api/sessions/{sid}")
    def session_state(sid: str):
        return _wrap(store.session_state, sid)

    @app.get("/api/sessions/{sid}/questions/{position}")
    def question(sid: str, position: int):
        return _wrap(store.question_payload, sid, position)

    @app.post("/api/sessions/{sid}/answers")
    def answer(sid: str, body: AnswerBody):
        return _wrap(store.submit_answer, sid, body.question_id, body.choice)

    @app.get("/api/sessions/{sid}/results")
    def results(sid: str):
        return _wrap(store.results, sid)

    @app.get("/media/{token}.gif")
    def media(token: str):
        path = _wrap(store.media_path, token)
        return FileResponse(path, media_type="image/gif")

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
