"""Corpus ingestion: manifests, clip loading, detection filtering, temporal splits.

A corpus is described by a JSON manifest (a flat array of entries). Clips are
stored as directories of losslessly-compressed frames plus a small metadata
JSON; other storage backends can be plugged in via ``register_clip_reader``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np
from PIL import Image

from .errors import DataError

SPLITS = ("train", "val", "test")

DEFAULT_STATE_FRAC = 0.10
DEFAULT_MARGIN_FRAC = 0.05


@dataclass
class VideoClip:
    """An ordered stack of frames with identity and class metadata."""

    clip_id: str
    frames: np.ndarray  # (N, H, W, 3) uint8
    fps: float = 12.0
    class_label: Optional[str] = None
    source: Optional[str] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise DataError(
                f"clip {self.clip_id!r}: frames must be (N, H, W, 3), got {self.frames.shape}"
            )
        if self.frames.shape[0] == 0:
            raise DataError(f"clip {self.clip_id!r}: no frames")
        if self.fps <= 0:
            raise DataError(f"clip {self.clip_id!r}: fps must be positive")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    def section(self, start: int, stop: int) -> "VideoClip":
        """Contiguous frame slice [start, stop) as a new clip, id preserved."""
        if not 0 <= start < stop <= len(self):
            raise DataError(f"clip {self.clip_id!r}: bad section [{start}, {stop})")
        return VideoClip(
            clip_id=self.clip_id,
            frames=self.frames[start:stop],
            fps=self.fps,
            class_label=self.class_label,
            source=self.source,
        )


@dataclass
class DetectionTrack:
    """Per-frame presence flags for the object/hand detections of one clip."""

    clip_id: str
    present: np.ndarray  # (N,) bool

    def __post_init__(self):
        self.present = np.asarray(self.present, dtype=bool)
        if self.present.ndim != 1:
            raise DataError(f"track {self.clip_id!r}: present must be a flat flag list")


@dataclass
class StateActionTriplet:
    """(initial state, action, final state) decomposition of one clip.

    The three ``*_range`` fields record the half-open frame intervals in the
    source clip, so questions can be serialized by reference instead of pixels.
    """

    initial_state: VideoClip
    action: VideoClip
    final_state: VideoClip
    class_label: str
    source_clip_id: str
    margin_frac: float
    initial_range: tuple[int, int]
    action_range: tuple[int, int]
    final_range: tuple[int, int]


@dataclass
class ManifestEntry:
    clip_id: str
    file_path: str
    class_label: str
    split: str
    detections_path: Optional[str] = None


@dataclass
class Corpus:
    """Manifest entries plus the root they resolve against."""

    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def by_split(self, split: str) -> list[ManifestEntry]:
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r}; expected one of {SPLITS}")
        return [e for e in self.entries if e.split == split]

    def get(self, clip_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.clip_id == clip_id:
                return e
        raise DataError(f"clip_id {clip_id!r} not in corpus")

    def class_labels(self) -> list[str]:
        return sorted({e.class_label for e in self.entries})

    def load_clip(self, clip_id: str) -> VideoClip:
        """Load a clip, applying detection filtering when a track is declared.

        Filtering runs before any temporal split so percentage rules apply to
        usable footage only.
        """
        entry = self.get(clip_id)
        clip = load_clip(self.root / entry.file_path)
        clip.class_label = entry.class_label
        if entry.detections_path:
            track = load_detection_track(self.root / entry.detections_path)
            clip = filter_by_detections(clip, track)
        return clip


# ---------------------------------------------------------------------------
# Clip storage backends


def _read_frame_dir(path: Path) -> VideoClip:
    meta_path = path / "clip.json"
    if not meta_path.is_file():
        raise DataError(f"{path}: missing clip.json")
    meta = json.loads(meta_path.read_text())
    frame_files = sorted(path.glob("frame_*.png"))
    if not frame_files:
        raise DataError(f"{path}: no frame_*.png files")
    frames = np.stack([np.asarray(Image.open(f).convert("RGB")) for f in frame_files])
    return VideoClip(
        clip_id=meta["clip_id"],
        frames=frames,
        fps=float(meta.get("fps", 12.0)),
        class_label=meta.get("class_label"),
        source=meta.get("source"),
    )


def _read_npz(path: Path) -> VideoClip:
    with np.load(path) as data:
        frames = data["frames"]
        clip_id = str(data["clip_id"]) if "clip_id" in data else path.stem
    return VideoClip(clip_id=clip_id, frames=frames)


_CLIP_READERS: dict[str, Callable[[Path], VideoClip]] = {
    "frame_dir": _read_frame_dir,
    ".npz": _read_npz,
}


def register_clip_reader(key: str, reader: Callable[[Path], VideoClip]) -> None:
    """Register a decoder for a new storage backend (key = file suffix)."""
    _CLIP_READERS[key] = reader


def load_clip(path: Path | str) -> VideoClip:
    path = Path(path)
    if path.is_dir():
        return _CLIP_READERS["frame_dir"](path)
    reader = _CLIP_READERS.get(path.suffix)
    if reader is None:
        raise DataError(f"no clip reader for {path} (suffix {path.suffix!r})")
    if not path.exists():
        raise DataError(f"clip file not found: {path}")
    return reader(path)


def load_detection_track(path: Path | str) -> DetectionTrack:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"detection track not found: {path}")
    raw = json.loads(path.read_text())
    if "clip_id" not in raw or "present" not in raw:
        raise DataError(f"{path}: detection track needs clip_id and present")
    return DetectionTrack(clip_id=raw["clip_id"], present=np.asarray(raw["present"], dtype=bool))


# ---------------------------------------------------------------------------
# Operations


def load_manifest(path: Path | str) -> Corpus:
    """Read a JSON-array manifest; duplicate clip_ids and bad splits are rejected."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise DataError(f"manifest {path} must be a JSON array")

    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for i, item in enumerate(raw):
        missing = {"clip_id", "file_path", "class_label", "split"} - set(item)
        if missing:
            raise DataError(f"manifest entry {i}: missing fields {sorted(missing)}")
        if item["split"] not in SPLITS:
            raise DataError(f"manifest entry {i}: unknown split {item['split']!r}")
        if item["clip_id"] in seen:
            raise DataError(f"duplicate clip_id {item['clip_id']!r} in manifest")
        seen.add(item["clip_id"])
        entries.append(
            ManifestEntry(
                clip_id=item["clip_id"],
                file_path=item["file_path"],
                class_label=item["class_label"],
                split=item["split"],
                detections_path=item.get("detections_path"),
            )
        )
    return Corpus(entries=entries, root=path.parent)


def filter_by_detections(clip: VideoClip, track: DetectionTrack) -> VideoClip:
    """Keep exactly the frames flagged present, in order. Empty result is an error."""
    if len(track.present) != len(clip):
        raise DataError(
            f"clip {clip.clip_id!r}: track length {len(track.present)} != frame count {len(clip)}"
        )
    kept = clip.frames[track.present]
    if kept.shape[0] == 0:
        raise DataError(f"clip {clip.clip_id!r}: no frames left after detection filtering")
    return VideoClip(
        clip_id=clip.clip_id,
        frames=kept,
        fps=clip.fps,
        class_label=clip.class_label,
        source=clip.source,
    )


def temporal_split(
    clip: VideoClip,
    state_frac: float = DEFAULT_STATE_FRAC,
    margin_frac: float = DEFAULT_MARGIN_FRAC,
) -> StateActionTriplet:
    """Split a clip into first/last state segments and the driving middle action.

    The state segments take the first and last ``floor(state_frac * N)`` frames;
    the action is the middle after dropping ``floor(margin_frac * N)`` frames on
    each side so state frames never leak into the action.
    """
    if not 0 < state_frac < 0.5:
        raise DataError(f"state_frac must be in (0, 0.5), got {state_frac}")
    if not 0 <= margin_frac < 0.2:
        raise DataError(f"margin_frac must be in [0, 0.2), got {margin_frac}")
    if clip.class_label is None:
        raise DataError(f"clip {clip.clip_id!r}: class_label required for a triplet")

    n = len(clip)
    n_state = math.floor(state_frac * n)
    n_margin = math.floor(margin_frac * n)
    if n_state == 0:
        raise DataError(
            f"clip {clip.clip_id!r}: {n} frames give empty state segments at state_frac={state_frac}"
        )
    action_start = n_state + n_margin
    action_stop = n - n_state - n_margin
    if action_stop <= action_start:
        raise DataError(f"clip {clip.clip_id!r}: {n} frames leave an empty action segment")

    return StateActionTriplet(
        initial_state=clip.section(0, n_state),
        action=clip.section(action_start, action_stop),
        final_state=clip.section(n - n_state, n),
        class_label=clip.class_label,
        source_clip_id=clip.clip_id,
        margin_frac=margin_frac,
        initial_range=(0, n_state),
        action_range=(action_start, action_stop),
        final_range=(n - n_state, n),
    )
