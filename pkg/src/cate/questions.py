"""Action Selection question assembly.

Each question pairs the initial/final states of one clip with four action
options: one correct (drawn same-sample or cross-sample) and three wrong ones,
which are either actions from other classes or hard counterfactuals of the
correct option (temporal reversal, static freeze, horizontal flip), gated by a
per-class whitelist.
"""

from __future__ import annotations

import json
import random
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .corpus import (
    DEFAULT_MARGIN_FRAC,
    DEFAULT_STATE_FRAC,
    Corpus,
    StateActionTriplet,
    VideoClip,
    temporal_split,
)
from .errors import ConfigError, DataError

COUNTERFACTUAL_KINDS = ("temporal_reverse", "static", "horizontal_flip")
OPTION_KINDS = ("correct", "other_class", "counterfactual")
MODES = ("same", "cross")


@dataclass
class AugmentationWhitelist:
    """Which counterfactual kinds are allowed per class."""

    kinds_by_class: dict[str, list[str]]

    def __post_init__(self):
        for cls, kinds in self.kinds_by_class.items():
            bad = set(kinds) - set(COUNTERFACTUAL_KINDS)
            if bad:
                raise ConfigError(f"whitelist for {cls!r} has unknown kinds {sorted(bad)}")

    def kinds_for(self, class_label: str) -> list[str]:
        return list(self.kinds_by_class.get(class_label, []))

    @classmethod
    def load(cls, path: Path | str) -> "AugmentationWhitelist":
        raw = json.loads(Path(path).read_text())
        return cls(kinds_by_class={k: list(v) for k, v in raw.items()})

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.kinds_by_class, indent=1, sort_keys=True) + "\n")


@dataclass
class OptionProvenance:
    kind: str  # correct | other_class | counterfactual
    source_clip_id: str
    class_label: str
    frame_range: tuple[int, int]
    counterfactual_kind: Optional[str] = None


@dataclass
class Question:
    question_id: str
    initial_state: VideoClip
    final_state: VideoClip
    options: list[VideoClip]
    correct_index: int
    provenance: list[OptionProvenance]
    states_clip_id: str
    initial_range: tuple[int, int]
    final_range: tuple[int, int]
    mode: str = "cross"

    @property
    def class_label(self) -> str:
        return self.provenance[self.correct_index].class_label

    def validate(self) -> None:
        if len(self.options) != 4 or len(self.provenance) != 4:
            raise DataError(f"question {self.question_id}: needs exactly 4 options")
        correct = [i for i, p in enumerate(self.provenance) if p.kind == "correct"]
        if correct != [self.correct_index]:
            raise DataError(f"question {self.question_id}: correct provenance/index mismatch")
        if self.mode == "cross":
            p = self.provenance[self.correct_index]
            if p.source_clip_id == self.states_clip_id:
                raise DataError(f"question {self.question_id}: cross-mode option from states' clip")
        for p in self.provenance:
            if p.kind not in OPTION_KINDS:
                raise DataError(f"question {self.question_id}: bad option kind {p.kind!r}")


def apply_counterfactual(action: VideoClip, kind: str) -> VideoClip:
    """temporal_reverse / static / horizontal_flip; shape and length preserved."""
    if kind == "temporal_reverse":
        frames = action.frames[::-1].copy()
    elif kind == "static":
        frames = np.repeat(action.frames[:1], len(action), axis=0)
    elif kind == "horizontal_flip":
        frames = action.frames[:, :, ::-1, :].copy()
    else:
        raise DataError(f"unknown counterfactual kind {kind!r}")
    return VideoClip(
        clip_id=action.clip_id,
        frames=frames,
        fps=action.fps,
        class_label=action.class_label,
        source=action.source,
    )


def _derived_seed(base_seed: int, *parts) -> int:
    return zlib.crc32("|".join([str(base_seed), *map(str, parts)]).encode())


def make_question(
    triplet: StateActionTriplet,
    pool: Sequence[StateActionTriplet],
    mode: str,
    whitelist: AugmentationWhitelist,
    counterfactual_ratio: float = 0.5,
    rng_seed: int = 0,
    question_id: Optional[str] = None,
) -> Question:
    """Assemble one 4-option question; fully deterministic given rng_seed.

    Distractor slots flip a counterfactual_ratio-biased coin independently;
    counterfactual kinds are drawn without replacement so options stay distinct,
    falling back to other-class actions when the whitelist runs dry.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if not 0.0 <= counterfactual_ratio <= 1.0:
        raise ConfigError("counterfactual_ratio must be in [0, 1]")
    rng = random.Random(rng_seed)

    if mode == "cross":
        partners = [
            t
            for t in pool
            if t.class_label == triplet.class_label and t.source_clip_id != triplet.source_clip_id
        ]
        if not partners:
            raise DataError(
                f"no same-class partner for {triplet.source_clip_id!r} in cross mode"
            )
        correct_t = partners[rng.randrange(len(partners))]
    else:
        correct_t = triplet
    correct_clip = correct_t.action
    correct_prov = OptionProvenance(
        kind="correct",
        source_clip_id=correct_t.source_clip_id,
        class_label=correct_t.class_label,
        frame_range=correct_t.action_range,
    )

    other_by_class: dict[str, list[StateActionTriplet]] = {}
    for t in pool:
        if t.class_label != triplet.class_label:
            other_by_class.setdefault(t.class_label, []).append(t)
    other_classes = sorted(other_by_class)

    available_kinds = whitelist.kinds_for(correct_t.class_label)
    options: list[tuple[VideoClip, OptionProvenance]] = [(correct_clip, correct_prov)]
    for _ in range(3):
        use_cf = available_kinds and rng.random() < counterfactual_ratio
        if use_cf:
            kind = available_kinds.pop(rng.randrange(len(available_kinds)))
            clip = apply_counterfactual(correct_clip, kind)
            prov = OptionProvenance(
                kind="counterfactual",
                source_clip_id=correct_t.source_clip_id,
                class_label=correct_t.class_label,
                frame_range=correct_t.action_range,
                counterfactual_kind=kind,
            )
        else:
            if not other_classes:
                raise DataError(
                    f"pool exhausted: no other-class distractors for {triplet.source_clip_id!r}"
                )
            cls = other_classes[rng.randrange(len(other_classes))]
            cands = other_by_class[cls]
            t = cands[rng.randrange(len(cands))]
            clip = t.action
            prov = OptionProvenance(
                kind="other_class",
                source_clip_id=t.source_clip_id,
                class_label=t.class_label,
                frame_range=t.action_range,
            )
        options.append((clip, prov))

    order = list(range(4))
    rng.shuffle(order)
    shuffled = [options[i] for i in order]
    correct_index = order.index(0)

    if question_id is None:
        question_id = f"{triplet.source_clip_id}:{rng_seed}"
    q = Question(
        question_id=question_id,
        initial_state=triplet.initial_state,
        final_state=triplet.final_state,
        options=[c for c, _ in shuffled],
        correct_index=correct_index,
        provenance=[p for _, p in shuffled],
        states_clip_id=triplet.source_clip_id,
        initial_range=triplet.initial_range,
        final_range=triplet.final_range,
        mode=mode,
    )
    q.validate()
    return q


def build_question_set(
    corpus: Corpus,
    split: str,
    mode: str = "cross",
    whitelist: AugmentationWhitelist | None = None,
    counterfactual_ratio: float = 0.5,
    rng_seed: int = 0,
    n_per_triplet: int = 1,
    state_frac: float = DEFAULT_STATE_FRAC,
    margin_frac: float = DEFAULT_MARGIN_FRAC,
) -> Iterator[Question]:
    """Yield questions for every eligible triplet of one split.

    Clips whose class has no partner (cross mode) or that are too short are
    skipped, not fatal. Question ids are unique; no clip from another split is
    ever touched, so splits cannot leak into each other.
    """
    if whitelist is None:
        whitelist = AugmentationWhitelist({})
    entries = corpus.by_split(split)
    if not entries:
        raise DataError(f"corpus has no clips in split {split!r}")

    triplets: list[StateActionTriplet] = []
    for entry in entries:
        clip = corpus.load_clip(entry.clip_id)
        try:
            triplets.append(temporal_split(clip, state_frac, margin_frac))
        except DataError:
            continue

    for triplet in triplets:
        for j in range(n_per_triplet):
            seed = _derived_seed(rng_seed, triplet.source_clip_id, j)
            try:
                yield make_question(
                    triplet,
                    triplets,
                    mode=mode,
                    whitelist=whitelist,
                    counterfactual_ratio=counterfactual_ratio,
                    rng_seed=seed,
                    question_id=f"{triplet.source_clip_id}.q{j:03d}",
                )
            except DataError:
                break  # this triplet has no partners/distractors; skip it


# ---------------------------------------------------------------------------
# Question-set files: JSON lines, clips referenced by (clip_id, frame_range,
# counterfactual_kind) instead of embedded pixels.


def question_to_record(q: Question) -> dict:
    return {
        "question_id": q.question_id,
        "mode": q.mode,
        "class_label": q.class_label,
        "states": {
            "clip_id": q.states_clip_id,
            "initial_range": list(q.initial_range),
            "final_range": list(q.final_range),
        },
        "options": [
            {
                "clip_id": p.source_clip_id,
                "frame_range": list(p.frame_range),
                "kind": p.kind,
                "class_label": p.class_label,
                "counterfactual_kind": p.counterfactual_kind,
            }
            for p in q.provenance
        ],
        "correct_index": q.correct_index,
    }


def write_question_set(questions: Iterator[Question] | list[Question], path: Path | str) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w") as fh:
        for q in questions:
            fh.write(json.dumps(question_to_record(q), sort_keys=True, separators=(",", ":")))
            fh.write("\n")
            n += 1
    return n


class QuestionSetReader:
    """Materializes questions from a JSONL file against a corpus.

    Source clips are cached so repeated frame-range slices stay cheap.
    """

    def __init__(self, path: Path | str, corpus: Corpus):
        self.path = Path(path)
        self.corpus = corpus
        self._clip_cache: dict[str, VideoClip] = {}
        if not self.path.is_file():
            raise DataError(f"question set not found: {self.path}")
        self.records = [json.loads(line) for line in self.path.read_text().splitlines() if line]
        if not self.records:
            raise DataError(f"question set {self.path} is empty")

    def __len__(self) -> int:
        return len(self.records)

    def _clip(self, clip_id: str) -> VideoClip:
        if clip_id not in self._clip_cache:
            self._clip_cache[clip_id] = self.corpus.load_clip(clip_id)
        return self._clip_cache[clip_id]

    def materialize(self, record: dict) -> Question:
        states = record["states"]
        src = self._clip(states["clip_id"])
        initial = src.section(*states["initial_range"])
        final = src.section(*states["final_range"])
        options, provenance = [], []
        for opt in record["options"]:
            clip = self._clip(opt["clip_id"]).section(*opt["frame_range"])
            if opt["counterfactual_kind"]:
                clip = apply_counterfactual(clip, opt["counterfactual_kind"])
            options.append(clip)
            provenance.append(
                OptionProvenance(
                    kind=opt["kind"],
                    source_clip_id=opt["clip_id"],
                    class_label=opt["class_label"],
                    frame_range=tuple(opt["frame_range"]),
                    counterfactual_kind=opt["counterfactual_kind"],
                )
            )
        q = Question(
            question_id=record["question_id"],
            initial_state=initial,
            final_state=final,
            options=options,
            correct_index=record["correct_index"],
            provenance=provenance,
            states_clip_id=states["clip_id"],
            initial_range=tuple(states["initial_range"]),
            final_range=tuple(states["final_range"]),
            mode=record["mode"],
        )
        q.validate()
        return q

    def __iter__(self) -> Iterator[Question]:
        for record in self.records:
            yield self.materialize(record)
