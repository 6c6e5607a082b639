"""Gradient-based attention for the analogical selector.

The joint score dot(state_change, projected_action) is backpropagated all the
way to the input pixels of the three branches (initial, final, chosen option).
Gradients are rectified, summed over color channels, and max-normalized per
branch into [0, 1] heat maps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

from .encoders import clip_to_tensor, sample_frame_indices
from .errors import ConfigError, DataError
from .questions import Question

BRANCHES = ("initial", "final", "action")


@dataclass
class AttentionMaps:
    question_id: str
    option_index: int
    initial: np.ndarray  # (T, H, W) float32 in [0, 1]
    final: np.ndarray
    action: np.ndarray  # heat over the chosen option's clip
    # true where a branch's rectified gradient was identically zero
    degenerate: dict[str, bool] = field(default_factory=dict)

    def branch(self, name: str) -> np.ndarray:
        if name not in BRANCHES:
            raise ConfigError(f"branch must be one of {BRANCHES}, got {name!r}")
        return getattr(self, name)


def _heat_from_grad(grad: torch.Tensor) -> tuple[np.ndarray, bool]:
    """(3, T, H, W) pixel gradient -> (T, H, W) rectified channel-sum heat."""
    heat = grad.clamp(min=0).sum(dim=0)
    peak = float(heat.max())
    if peak == 0.0:
        return heat.numpy().astype(np.float32), True
    return (heat / peak).numpy().astype(np.float32), False


def joint_attention(selector, question: Question, option_index: Optional[int] = None) -> AttentionMaps:
    """Pixel attention for one question under a fitted analogical selector.

    Defaults to the correct option. The score is the unnormalized dot product
    so gradient magnitude is not rescaled by the cosine denominator.
    """
    heads = getattr(selector, "heads_", None)
    if heads is None or "scc" not in heads or "action" not in heads:
        raise ConfigError("joint attention needs a fitted selector with scc and action heads")
    question.validate()
    if option_index is None:
        option_index = question.correct_index
    if not 0 <= option_index < len(question.options):
        raise ConfigError(f"option index {option_index} out of range")

    n_s = selector.state_encoder_.config.n_sampled_frames
    n_a = selector.action_encoder_.config.n_sampled_frames
    x_i = clip_to_tensor(question.initial_state, n_s).unsqueeze(0).requires_grad_(True)
    x_f = clip_to_tensor(question.final_state, n_s).unsqueeze(0).requires_grad_(True)
    x_o = clip_to_tensor(question.options[option_index], n_a).unsqueeze(0).requires_grad_(True)

    change = heads["scc"](selector.state_encoder_.module(x_i), selector.state_encoder_.module(x_f))
    proj = heads["action"](selector.action_encoder_.module(x_o))
    score = (change * proj).sum()
    score.backward()

    maps, degenerate = {}, {}
    for name, x in (("initial", x_i), ("final", x_f), ("action", x_o)):
        if x.grad is None:
            raise DataError(f"no gradient reached the {name} branch input")
        maps[name], degenerate[name] = _heat_from_grad(x.grad[0])
    return AttentionMaps(
        question_id=question.question_id,
        option_index=option_index,
        initial=maps["initial"],
        final=maps["final"],
        action=maps["action"],
        degenerate=degenerate,
    )


# ---------------------------------------------------------------------------
# Heat mass vs. ground-truth boxes


def clip_box(box, h: int, w: int) -> tuple[int, int, int, int]:
    """Float (x0, y0, x1, y1) -> integer pixel box clipped to the canvas."""
    x0, y0, x1, y1 = box
    xi0, yi0 = max(0, int(np.floor(x0))), max(0, int(np.floor(y0)))
    xi1, yi1 = min(w, int(np.ceil(x1))), min(h, int(np.ceil(y1)))
    if xi1 <= xi0 or yi1 <= yi0:
        raise DataError(f"box {box} is empty after clipping to {w}x{h}")
    return xi0, yi0, xi1, yi1


def union_box(gt, frames: range | list[int]) -> tuple[float, float, float, float]:
    """Union of per-frame object boxes over a frame range."""
    boxes = [gt.bounding_box(f) for f in frames]
    if not boxes:
        raise DataError("no frames to union boxes over")
    xs0, ys0, xs1, ys1 = zip(*boxes)
    return (min(xs0), min(ys0), max(xs1), max(ys1))


def mass_inside_box(heat: np.ndarray, box) -> float:
    """Fraction of total heat mass falling inside the pixel box.

    Accepts (H, W) or (T, H, W); time is folded into the mass sums.
    """
    heat = np.asarray(heat, dtype=np.float64)
    if heat.ndim == 2:
        heat = heat[None]
    if heat.ndim != 3:
        raise DataError(f"heat map must be (H, W) or (T, H, W), got {heat.shape}")
    total = heat.sum()
    if total <= 0:
        raise DataError("heat map has zero mass")
    h, w = heat.shape[1:]
    x0, y0, x1, y1 = clip_box(box, h, w)
    return float(heat[:, y0:y1, x0:x1].sum() / total)


def box_area_fraction(box, h: int, w: int) -> float:
    x0, y0, x1, y1 = clip_box(box, h, w)
    return (x1 - x0) * (y1 - y0) / float(h * w)


def provenance_union_box(
    gt, frame_range: tuple[int, int], counterfactual_kind: Optional[str], canvas_w: int
) -> tuple[float, float, float, float]:
    """Object box for an option clip, honoring its counterfactual edit.

    Reversal reuses the same frame set; static keeps only the first frame;
    horizontal flip mirrors the box across the vertical canvas midline.
    """
    start, stop = frame_range
    if counterfactual_kind == "static":
        frames = [start]
    else:
        frames = list(range(start, stop))
    box = union_box(gt, frames)
    if counterfactual_kind == "horizontal_flip":
        x0, y0, x1, y1 = box
        box = (canvas_w - x1, y0, canvas_w - x0, y1)
    return box


# ---------------------------------------------------------------------------
# Output files


def save_attention_npz(maps: AttentionMaps, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "question_id": maps.question_id,
        "option_index": maps.option_index,
        "degenerate": maps.degenerate,
    }
    np.savez(
        path,
        initial=maps.initial,
        final=maps.final,
        action=maps.action,
        meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
    )


def load_attention_npz(path: Path | str) -> AttentionMaps:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"attention file not found: {path}")
    with np.load(path) as npz:
        meta = json.loads(bytes(npz["meta"]).decode())
        return AttentionMaps(
            question_id=meta["question_id"],
            option_index=meta["option_index"],
            initial=npz["initial"],
            final=npz["final"],
            action=npz["action"],
            degenerate=meta["degenerate"],
        )


def overlay_heat(frame: np.ndarray, heat: np.ndarray, alpha: float = 0.65) -> np.ndarray:
    """Red heat over a grayscale copy of the frame; uint8 (H, W, 3)."""
    if frame.shape[:2] != heat.shape:
        raise DataError("frame and heat map sizes differ")
    gray = frame.astype(np.float32).mean(axis=2, keepdims=True)
    base = np.repeat(gray, 3, axis=2)
    red = np.zeros_like(base)
    red[:, :, 0] = 255.0
    a = (np.clip(heat, 0.0, 1.0) * alpha)[:, :, None]
    return np.clip(base * (1 - a) + red * a, 0, 255).astype(np.uint8)


def render_overlays(maps: AttentionMaps, question: Question, out_dir: Path | str) -> list[Path]:
    """One PNG per branch: temporally averaged heat on that branch's middle frame."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clips = {
        "initial": question.initial_state,
        "final": question.final_state,
        "action": question.options[maps.option_index],
    }
    paths = []
    for name in BRANCHES:
        heat_t = maps.branch(name)
        clip = clips[name]
        idx = sample_frame_indices(len(clip), heat_t.shape[0])
        frame = clip.frames[idx[len(idx) // 2]]
        img = overlay_heat(frame, heat_t.mean(axis=0))
        p = out_dir / f"{maps.question_id}.{name}.png"
        Image.fromarray(img).save(p)
        paths.append(p)
    return paths
