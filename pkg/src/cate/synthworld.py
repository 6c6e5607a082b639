"""Procedural action-effect episodes with exact ground truth.

Eight action classes over a single moving/changing object on a random textured
background. The class set is closed under horizontal flipping
(move_left <-> move_right) and temporal reversal (grow <-> shrink, move pairs),
so hard counterfactual distractors are genuinely wrong answers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .corpus import VideoClip
from .errors import ConfigError, DataError

ACTION_CLASSES = (
    "move_left",
    "move_right",
    "move_up",
    "move_down",
    "grow",
    "shrink",
    "recolor_to_red",
    "recolor_to_blue",
)

RECOLOR_TARGETS = {
    "recolor_to_red": np.array([230.0, 40.0, 40.0]),
    "recolor_to_blue": np.array([40.0, 40.0, 230.0]),
}

# Counterfactual kinds that stay wrong for each class. horizontal_flip is only
# listed where flipping changes the class (left/right moves); temporal_reverse
# is listed everywhere because every class has a monotone defining factor.
DEFAULT_WHITELIST = {
    "move_left": ["temporal_reverse", "static", "horizontal_flip"],
    "move_right": ["temporal_reverse", "static", "horizontal_flip"],
    "move_up": ["temporal_reverse", "static"],
    "move_down": ["temporal_reverse", "static"],
    "grow": ["temporal_reverse", "static"],
    "shrink": ["temporal_reverse", "static"],
    "recolor_to_red": ["temporal_reverse", "static"],
    "recolor_to_blue": ["temporal_reverse", "static"],
}

_MIN_TRAVEL = 18.0
_MAX_TRAVEL = 26.0
_EDGE_PAD = 2.0


@dataclass
class EpisodeSpec:
    action_class: str
    n_frames: int = 32
    canvas: tuple[int, int] = (64, 64)
    object_shape: str = "circle"
    rng_seed: int = 0

    def __post_init__(self):
        if self.action_class not in ACTION_CLASSES:
            raise ConfigError(f"unknown action_class {self.action_class!r}")
        if self.n_frames < 20:
            raise ConfigError(f"n_frames must be >= 20, got {self.n_frames}")
        if self.object_shape not in ("circle", "square"):
            raise ConfigError(f"object_shape must be circle or square")


@dataclass
class EpisodeGroundTruth:
    """Per-frame object center (x, y), half-size, and color, plus the class."""

    action_class: str
    centers: np.ndarray  # (N, 2) float, (x, y)
    sizes: np.ndarray  # (N,) float, radius or half-side
    colors: np.ndarray  # (N, 3) float in [0, 255]

    def bounding_box(self, frame: int) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) box around the object in the given frame."""
        x, y = self.centers[frame]
        r = self.sizes[frame]
        return (x - r, y - r, x + r, y + r)

    def to_json(self) -> dict:
        return {
            "action_class": self.action_class,
            "centers": self.centers.tolist(),
            "sizes": self.sizes.tolist(),
            "colors": self.colors.tolist(),
        }

    @classmethod
    def from_json(cls, raw: dict) -> "EpisodeGroundTruth":
        return cls(
            action_class=raw["action_class"],
            centers=np.asarray(raw["centers"], dtype=float),
            sizes=np.asarray(raw["sizes"], dtype=float),
            colors=np.asarray(raw["colors"], dtype=float),
        )


def _random_texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Smooth low-contrast background texture, static across the episode."""
    coarse = rng.uniform(30, 110, size=(6, 6, 3))
    # bilinear upsample of the coarse grid
    yi = np.linspace(0, 5, h)
    xi = np.linspace(0, 5, w)
    y0 = np.floor(yi).astype(int).clip(0, 4)
    x0 = np.floor(xi).astype(int).clip(0, 4)
    fy = (yi - y0)[:, None, None]
    fx = (xi - x0)[None, :, None]
    tl = coarse[y0][:, x0]
    tr = coarse[y0][:, x0 + 1]
    bl = coarse[y0 + 1][:, x0]
    br = coarse[y0 + 1][:, x0 + 1]
    return (tl * (1 - fy) * (1 - fx) + tr * (1 - fy) * fx + bl * fy * (1 - fx) + br * fy * fx)


def _random_object_color(rng: np.random.Generator) -> np.ndarray:
    """Bright saturated color, kept away from the two recolor targets."""
    while True:
        c = rng.uniform(60, 255, size=3)
        c[rng.integers(0, 3)] = rng.uniform(180, 255)
        for target in RECOLOR_TARGETS.values():
            if np.abs(c - target).max() < 60:
                break
        else:
            return c


def _render_frame(
    bg: np.ndarray, cx: float, cy: float, size: float, color: np.ndarray, shape: str
) -> np.ndarray:
    h, w, _ = bg.shape
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    if shape == "circle":
        dist = np.sqrt((xs - cx) ** 2 + (ys - cy) ** 2)
        mask = np.clip(size + 0.5 - dist, 0.0, 1.0)
    else:
        dx = np.abs(xs - cx)
        dy = np.abs(ys - cy)
        mask = np.clip(size + 0.5 - np.maximum(dx, dy), 0.0, 1.0)
    frame = bg * (1 - mask[..., None]) + color[None, None, :] * mask[..., None]
    return np.clip(np.round(frame), 0, 255).astype(np.uint8)


def generate_episode(spec: EpisodeSpec) -> tuple[VideoClip, EpisodeGroundTruth]:
    """Render one episode; deterministic given spec.rng_seed.

    Nuisance factors (background, start position, object color for non-recolor
    classes, off-axis jitter) vary with the seed; the class-defining factor is
    strictly monotone across frames.
    """
    rng = np.random.default_rng(spec.rng_seed)
    h, w = spec.canvas
    n = spec.n_frames
    cls = spec.action_class

    bg = _random_texture(rng, h, w)
    r0 = rng.uniform(5.0, 8.0)
    jitter = rng.uniform(-0.8, 0.8, size=n)

    sizes = np.full(n, r0)
    colors = np.tile(_random_object_color(rng), (n, 1))

    if cls.startswith("move_"):
        travel = rng.uniform(_MIN_TRAVEL, _MAX_TRAVEL)
        pad = r0 + _EDGE_PAD
        axis_len = w if cls in ("move_left", "move_right") else h
        if axis_len - 2 * pad - travel <= 0:
            raise DataError(f"canvas {spec.canvas} too small for {cls} with travel {travel:.1f}")
        lo = rng.uniform(pad, axis_len - pad - travel)
        path = np.linspace(lo, lo + travel, n)
        if cls in ("move_left", "move_up"):
            path = path[::-1]
        if cls in ("move_left", "move_right"):
            off = rng.uniform(pad, h - pad)
            centers = np.stack([path, off + jitter], axis=1)
        else:
            off = rng.uniform(pad, w - pad)
            centers = np.stack([off + jitter, path], axis=1)
    elif cls in ("grow", "shrink"):
        r_small, r_big = r0, r0 * rng.uniform(1.8, 2.2)
        pad = r_big + _EDGE_PAD
        if min(h, w) <= 2 * pad:
            raise DataError(f"canvas {spec.canvas} too small for {cls} at size {r_big:.1f}")
        cx = rng.uniform(pad, w - pad)
        cy = rng.uniform(pad, h - pad)
        sizes = np.linspace(r_small, r_big, n) if cls == "grow" else np.linspace(r_big, r_small, n)
        centers = np.stack([cx + jitter, cy + rng.uniform(-0.8, 0.8, size=n)], axis=1)
    else:  # recolor classes
        pad = r0 + _EDGE_PAD
        cx = rng.uniform(pad, w - pad)
        cy = rng.uniform(pad, h - pad)
        centers = np.stack([cx + jitter, cy + rng.uniform(-0.8, 0.8, size=n)], axis=1)
        start = _random_object_color(rng)
        target = RECOLOR_TARGETS[cls]
        t = np.linspace(0.0, 1.0, n)[:, None]
        colors = start[None, :] * (1 - t) + target[None, :] * t

    if (centers[:, 0] - sizes < -0.5).any() or (centers[:, 0] + sizes > w + 0.5).any():
        raise DataError("object trajectory exits canvas horizontally")
    if (centers[:, 1] - sizes < -0.5).any() or (centers[:, 1] + sizes > h + 0.5).any():
        raise DataError("object trajectory exits canvas vertically")

    frames = np.stack(
        [
            _render_frame(bg, centers[i, 0], centers[i, 1], sizes[i], colors[i], spec.object_shape)
            for i in range(n)
        ]
    )
    clip = VideoClip(
        clip_id=f"{cls}_{spec.rng_seed}",
        frames=frames,
        fps=12.0,
        class_label=cls,
        source="synthworld",
    )
    gt = EpisodeGroundTruth(action_class=cls, centers=centers, sizes=sizes, colors=colors)
    return clip, gt


def classify_ground_truth(gt: EpisodeGroundTruth) -> str:
    """Rule-based class from trajectory deltas; exact on generated episodes."""
    dx = gt.centers[-1, 0] - gt.centers[0, 0]
    dy = gt.centers[-1, 1] - gt.centers[0, 1]
    dsize = gt.sizes[-1] - gt.sizes[0]
    dcolor = gt.colors[-1] - gt.colors[0]
    if abs(dsize) > 2.0:
        return "grow" if dsize > 0 else "shrink"
    if np.abs(dcolor).max() > 40.0:
        red = RECOLOR_TARGETS["recolor_to_red"]
        blue = RECOLOR_TARGETS["recolor_to_blue"]
        d_red = np.abs(gt.colors[-1] - red).sum()
        d_blue = np.abs(gt.colors[-1] - blue).sum()
        return "recolor_to_red" if d_red < d_blue else "recolor_to_blue"
    if abs(dx) >= abs(dy):
        return "move_right" if dx > 0 else "move_left"
    return "move_down" if dy > 0 else "move_up"


def _episode_seed(base_seed: int, class_index: int, episode_index: int) -> int:
    # stable across processes, unlike hash()
    return int(
        np.random.SeedSequence(
            entropy=base_seed, spawn_key=(class_index, episode_index)
        ).generate_state(1)[0]
    )


@dataclass
class CorpusSpec:
    n_per_class: int
    n_frames: int = 32
    canvas: tuple[int, int] = (64, 64)
    rng_seed: int = 0
    classes: tuple[str, ...] = ACTION_CLASSES
    split_fracs: tuple[float, float] = (0.70, 0.15)  # train, val; rest is test

    def __post_init__(self):
        if self.n_per_class < 2:
            raise ConfigError("n_per_class must be >= 2 so cross-sample questions have partners")


def generate_corpus(out_dir: Path | str, spec: CorpusSpec) -> Path:
    """Write episodes + manifest.json under out_dir; returns the manifest path.

    Splits are assigned 70/15/15 per class (seeded shuffle within each class),
    so every split keeps class partners as long as n_per_class is large enough.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split_rng = np.random.default_rng(spec.rng_seed)

    entries = []
    for ci, cls in enumerate(spec.classes):
        order = split_rng.permutation(spec.n_per_class)
        n_train = int(round(spec.split_fracs[0] * spec.n_per_class))
        n_val = int(round(spec.split_fracs[1] * spec.n_per_class))
        split_of = {}
        for rank, ep in enumerate(order):
            if rank < n_train:
                split_of[ep] = "train"
            elif rank < n_train + n_val:
                split_of[ep] = "val"
            else:
                split_of[ep] = "test"

        for ep in range(spec.n_per_class):
            seed = _episode_seed(spec.rng_seed, ci, ep)
            shape = "circle" if (ep % 2 == 0) else "square"
            ep_spec = EpisodeSpec(
                action_class=cls,
                n_frames=spec.n_frames,
                canvas=spec.canvas,
                object_shape=shape,
                rng_seed=seed,
            )
            clip_id = f"{cls}_{ep:04d}"
            clip, gt = generate_episode(ep_spec)
            clip_dir = out_dir / clip_id
            write_clip_dir(clip_dir, clip_id, clip, gt)
            entries.append(
                {
                    "clip_id": clip_id,
                    "file_path": clip_id,
                    "class_label": cls,
                    "split": split_of[ep],
                }
            )

    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(entries, indent=1, sort_keys=True) + "\n")
    return manifest_path


def write_clip_dir(
    clip_dir: Path, clip_id: str, clip: VideoClip, gt: EpisodeGroundTruth | None = None
) -> None:
    clip_dir.mkdir(parents=True, exist_ok=True)
    for i in range(len(clip)):
        Image.fromarray(clip.frames[i]).save(clip_dir / f"frame_{i:05d}.png")
    meta = {
        "clip_id": clip_id,
        "fps": clip.fps,
        "class_label": clip.class_label,
        "n_frames": len(clip),
        "source": clip.source,
    }
    (clip_dir / "clip.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    if gt is not None:
        (clip_dir / "gt.json").write_text(json.dumps(gt.to_json(), sort_keys=True) + "\n")


def load_ground_truth(corpus_root: Path | str, clip_id: str, file_path: str) -> EpisodeGroundTruth:
    gt_path = Path(corpus_root) / file_path / "gt.json"
    if not gt_path.is_file():
        raise DataError(f"no ground truth for clip {clip_id!r} at {gt_path}")
    return EpisodeGroundTruth.from_json(json.loads(gt_path.read_text()))
