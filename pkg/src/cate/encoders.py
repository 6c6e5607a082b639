"""Clip encoders: the backbone abstraction and the state/action encoding ops.

Three interchangeable backbones sit behind one contract: a tiny trainable 3-D
convolutional stack, a per-frame MLP with temporal averaging, and a reader for
precomputed per-clip feature files (for users who bring features extracted by
larger models). All downstream models consume only d-dimensional embeddings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .corpus import VideoClip
from .errors import ConfigError, DataError

BACKBONE_KINDS = ("tiny3dconv", "frame_mlp", "precomputed")


@dataclass
class Embedding:
    """Dense feature vector; ``normalized`` marks unit Euclidean norm."""

    values: torch.Tensor
    normalized: bool = False

    def __post_init__(self):
        if self.values.dim() != 1:
            raise DataError(f"embedding must be 1-D, got shape {tuple(self.values.shape)}")
        if self.normalized:
            norm = float(torch.linalg.vector_norm(self.values.detach().double()))
            if abs(norm - 1.0) > 1e-5:
                raise DataError(f"embedding flagged normalized but |v| = {norm}")

    @property
    def d(self) -> int:
        return self.values.shape[0]

    def normalize(self) -> "Embedding":
        norm = torch.linalg.vector_norm(self.values)
        if float(norm) == 0.0:
            raise DataError("cannot normalize a zero embedding")
        return Embedding(values=self.values / norm, normalized=True)

    def numpy(self) -> np.ndarray:
        return self.values.detach().cpu().numpy()


@dataclass
class BackboneConfig:
    kind: str = "tiny3dconv"
    d: int = 64
    n_sampled_frames: int = 4
    frozen: bool = False
    feature_dir: Optional[str] = None  # required for kind="precomputed"

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ConfigError(f"backbone kind must be one of {BACKBONE_KINDS}")
        if self.d <= 0 or self.n_sampled_frames <= 0:
            raise ConfigError("d and n_sampled_frames must be positive")
        if self.kind == "precomputed" and not self.feature_dir:
            raise ConfigError("precomputed backbone needs feature_dir")


def sample_frame_indices(n_frames: int, n_samples: int) -> np.ndarray:
    """Uniform frame sampling with both endpoints included."""
    if n_frames <= 0:
        raise DataError("cannot sample from an empty clip")
    return np.round(np.linspace(0, n_frames - 1, n_samples)).astype(int)


def clip_to_tensor(clip: VideoClip, n_samples: int, dtype=torch.float32) -> torch.Tensor:
    """(3, T, H, W) tensor in [0, 1]; short clips repeat frames via sampling."""
    idx = sample_frame_indices(len(clip), n_samples)
    frames = clip.frames[idx].astype(np.float32) / 255.0
    return torch.from_numpy(frames).permute(3, 0, 1, 2).to(dtype)


class TinyConv3d(nn.Module):
    """Small strided 3-D conv stack; input (B, 3, T, H, W) in [0, 1]."""

    def __init__(self, d: int):
        super().__init__()
        self.d = d
        self.features = nn.Sequential(
            nn.AvgPool3d((1, 2, 2)),
            nn.Conv3d(3, 12, 3, stride=(1, 2, 2), padding=1),
            nn.GELU(),
            nn.Conv3d(12, 24, 3, stride=(2, 2, 2), padding=1),
            nn.GELU(),
            nn.Conv3d(24, 48, 3, stride=(1, 2, 2), padding=1),
            nn.GELU(),
            nn.AdaptiveAvgPool3d(1),
            nn.Flatten(),
        )
        self.proj = nn.Linear(48, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(self.features(x))


class FrameMlp(nn.Module):
    """Per-frame MLP over pooled pixels, temporally averaged. Order-blind."""

    def __init__(self, d: int, pool_hw: int = 16, hidden: int = 256):
        super().__init__()
        self.d = d
        self.pool_hw = pool_hw
        self.mlp = nn.Sequential(
            nn.Linear(3 * pool_hw * pool_hw, hidden),
            nn.GELU(),
            nn.Linear(hidden, d),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, t, h, w = x.shape
        frames = x.permute(0, 2, 1, 3, 4).reshape(b * t, c, h, w)
        pooled = torch.nn.functional.adaptive_avg_pool2d(frames, self.pool_hw)
        feats = self.mlp(pooled.reshape(b * t, -1))
        return feats.reshape(b, t, -1).mean(dim=1)


class Backbone:
    """A configured encoder: torch module (or feature store) + sampling policy."""

    def __init__(self, config: BackboneConfig, module: Optional[nn.Module] = None):
        self.config = config
        self.module = module
        self._features: Optional[dict[str, np.ndarray]] = None
        if config.kind == "precomputed":
            self._features, d_file = read_feature_dir(config.feature_dir)
            if d_file != config.d:
                raise DataError(
                    f"precomputed features have d={d_file}, backbone expects d={config.d}"
                )
        elif module is None:
            raise ConfigError(f"{config.kind} backbone requires a torch module")
        if module is not None and config.frozen:
            for p in module.parameters():
                p.requires_grad_(False)

    @property
    def d(self) -> int:
        return self.config.d

    def parameters(self):
        return [] if self.module is None else list(self.module.parameters())

    def encode_batch(self, clips: Sequence[VideoClip]) -> torch.Tensor:
        """(B, d) embeddings; runs the module with grad enabled if trainable."""
        if self.config.kind == "precomputed":
            rows = []
            for clip in clips:
                if clip.clip_id not in self._features:
                    raise DataError(f"no precomputed features for clip {clip.clip_id!r}")
                rows.append(torch.from_numpy(self._features[clip.clip_id].copy()))
            return torch.stack(rows)
        x = torch.stack([clip_to_tensor(c, self.config.n_sampled_frames) for c in clips])
        dtype = next(self.module.parameters()).dtype
        if self.config.frozen:
            with torch.no_grad():
                return self.module(x.to(dtype))
        return self.module(x.to(dtype))


def build_backbone(config: BackboneConfig, rng_seed: int = 0) -> Backbone:
    """Construct a backbone with seeded weight init."""
    if config.kind == "precomputed":
        return Backbone(config)
    gen_state = torch.get_rng_state()
    torch.manual_seed(rng_seed)
    try:
        if config.kind == "tiny3dconv":
            module = TinyConv3d(config.d)
        else:
            module = FrameMlp(config.d)
    finally:
        torch.set_rng_state(gen_state)
    return Backbone(config, module)


def encode_state(clip: VideoClip, backbone: Backbone) -> Embedding:
    """Encode a short state clip; deterministic given weights, unnormalized."""
    if len(clip) == 0:
        raise DataError("cannot encode an empty clip")
    values = backbone.encode_batch([clip])[0]
    _check_finite(values, clip.clip_id)
    return Embedding(values=values, normalized=False)


def encode_action(clip: VideoClip, backbone: Backbone) -> Embedding:
    """Encode an action clip; sampling spans the full temporal extent."""
    return encode_state(clip, backbone)


def _check_finite(values: torch.Tensor, clip_id: str) -> None:
    if not torch.isfinite(values.detach()).all():
        raise DataError(f"non-finite embedding for clip {clip_id!r}")


def cosine_similarity(a: Embedding | torch.Tensor, b: Embedding | torch.Tensor) -> float:
    """Cosine of two embeddings, computed in float64. Zero vectors are an error."""
    va = (a.values if isinstance(a, Embedding) else a).detach().double()
    vb = (b.values if isinstance(b, Embedding) else b).detach().double()
    if va.shape != vb.shape:
        raise DataError(f"dimension mismatch: {tuple(va.shape)} vs {tuple(vb.shape)}")
    na = torch.linalg.vector_norm(va)
    nb = torch.linalg.vector_norm(vb)
    if float(na) == 0.0 or float(nb) == 0.0:
        raise DataError("cosine similarity undefined for zero vectors")
    return float(va @ vb / (na * nb))


def cosine_sim_t(x: torch.Tensor, y: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Differentiable batched cosine; training-internal, eps-guarded."""
    return torch.nn.functional.cosine_similarity(x, y, dim=dim, eps=1e-12)


# ---------------------------------------------------------------------------
# Precomputed feature files: per clip one flat little-endian float32 array in
# <clip_id>.bin, with a directory-level meta.json declaring the dimension.


def write_feature_dir(dir_path: Path | str, features: dict[str, np.ndarray], d: int) -> None:
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    meta = {"format_version": 1, "d": d, "dtype": "float32", "byte_order": "little"}
    (dir_path / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    for clip_id, vec in features.items():
        arr = np.asarray(vec, dtype="<f4")
        if arr.shape != (d,):
            raise DataError(f"features for {clip_id!r} have shape {arr.shape}, want ({d},)")
        (dir_path / f"{clip_id}.bin").write_bytes(arr.tobytes())


def read_feature_dir(dir_path: Path | str) -> tuple[dict[str, np.ndarray], int]:
    dir_path = Path(dir_path)
    meta_path = dir_path / "meta.json"
    if not meta_path.is_file():
        raise DataError(f"feature dir {dir_path} has no meta.json")
    meta = json.loads(meta_path.read_text())
    d = int(meta["d"])
    features = {}
    for bin_path in sorted(dir_path.glob("*.bin")):
        arr = np.frombuffer(bin_path.read_bytes(), dtype="<f4")
        if arr.shape != (d,):
            raise DataError(f"{bin_path} holds {arr.shape[0]} values, meta declares d={d}")
        features[bin_path.stem] = arr.astype(np.float32)
    return features, d
