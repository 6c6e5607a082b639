"""Training machinery: contrastive objective, alternating head optimization,
and the two self-supervised pretext tasks (forward/backward action selection
and effect-affinity regression onto graded proxy labels)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import torch

from .corpus import VideoClip
from .encoders import Backbone, BackboneConfig, Embedding, build_backbone, cosine_sim_t
from .errors import ConfigError, DataError
from .networks import EaaRegressor
from .questions import apply_counterfactual

PHASES = ("state", "action")


# ---------------------------------------------------------------------------
# Contrastive objective


@dataclass
class ContrastiveBatch:
    anchor: Embedding
    positive: Embedding
    negatives: list[Embedding]
    temperature: float = 0.1

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not 1 <= len(self.negatives) <= 3:
            raise ConfigError(
                f"contrastive batch takes 1 to 3 negatives, got {len(self.negatives)}"
            )
        dims = {self.anchor.d, self.positive.d, *(n.d for n in self.negatives)}
        if len(dims) != 1:
            raise DataError(f"contrastive batch mixes dimensions: {sorted(dims)}")


def contrastive_loss(batch: ContrastiveBatch) -> float:
    """-log softmax of the positive among all similarities, in float64.

    Uses the scaled-cosine form: exp(cos(a,p)/t) over the sum including every
    negative. Stable via log1p of similarity gaps.
    """
    from .encoders import cosine_similarity

    cp = cosine_similarity(batch.anchor, batch.positive)
    gaps = [
        (cosine_similarity(batch.anchor, n) - cp) / batch.temperature for n in batch.negatives
    ]
    return math.log1p(sum(math.exp(g) for g in gaps))


def info_nce(
    anchor: torch.Tensor,
    positive: torch.Tensor,
    negatives: torch.Tensor,
    temperature: float,
) -> torch.Tensor:
    """Differentiable batched contrastive loss; shapes (B,d), (B,d), (B,K,d)."""
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    cp = cosine_sim_t(anchor, positive).unsqueeze(1)
    cn = cosine_sim_t(anchor.unsqueeze(1), negatives, dim=-1)
    logits = torch.cat([cp, cn], dim=1) / temperature
    target = torch.zeros(anchor.shape[0], dtype=torch.long, device=anchor.device)
    return torch.nn.functional.cross_entropy(logits, target)


# ---------------------------------------------------------------------------
# Alternating optimization


def alternating_train_step(
    loss_fn: Callable[[], torch.Tensor],
    phase: str,
    param_groups: dict[str, list[torch.nn.Parameter]],
    optimizers: dict[str, torch.optim.Optimizer],
) -> float:
    """One step updating only the parameters of the active phase.

    Inactive parameters have requires_grad switched off for the pass, so they
    receive no gradient and their optimizer state never advances: they are
    bit-identical before and after the step.
    """
    if phase not in param_groups or phase not in optimizers:
        raise ConfigError(f"phase must be one of {sorted(param_groups)}, got {phase!r}")
    saved: list[tuple[torch.nn.Parameter, bool]] = []
    for name, params in param_groups.items():
        active = name == phase
        for p in params:
            saved.append((p, p.requires_grad))
            p.requires_grad_(active)
    try:
        optimizers[phase].zero_grad(set_to_none=True)
        loss = loss_fn()
        loss.backward()
        optimizers[phase].step()
    finally:
        for p, flag in saved:
            p.requires_grad_(flag)
    return float(loss.detach())


def joint_train_step(
    loss_fn: Callable[[], torch.Tensor], optimizer: torch.optim.Optimizer
) -> float:
    optimizer.zero_grad(set_to_none=True)
    loss = loss_fn()
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def phase_for_step(step: int, period: int) -> str:
    """Phase schedule: toggles between state and action every `period` steps."""
    if period <= 0:
        raise ConfigError("alternating period must be positive")
    return PHASES[(step // period) % 2]


# ---------------------------------------------------------------------------
# SSL forward/backward action selection


@dataclass
class OrderedStateChangePair:
    """Order-preserving concatenation of two frozen state representations."""

    direction: str  # forward | backward
    representation: torch.Tensor

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise ConfigError(f"direction must be forward|backward, got {self.direction!r}")


def make_state_change_pair(
    initial: torch.Tensor, final: torch.Tensor, direction: str
) -> OrderedStateChangePair:
    if direction == "forward":
        rep = torch.cat([initial, final], dim=-1)
    else:
        rep = torch.cat([final, initial], dim=-1)
    return OrderedStateChangePair(direction=direction, representation=rep)


def ssl_decompose(clip: VideoClip, state_window: int = 1) -> tuple[VideoClip, VideoClip, VideoClip]:
    """(initial, action, final): first/last frames are the states, middle the action."""
    n = len(clip)
    if n < 2 * state_window + 1:
        raise DataError(f"clip {clip.clip_id!r}: {n} frames too short to decompose")
    return (
        clip.section(0, state_window),
        clip.section(state_window, n - state_window),
        clip.section(n - state_window, n),
    )


def ssl_action_selection_loss(
    clips: Sequence[VideoClip],
    action_encoder: Backbone,
    state_encoder: Backbone,
    temperature: float = 0.1,
    state_window: int = 1,
) -> torch.Tensor:
    """Pull forward actions toward forward state pairs and away from backward
    pairs, and symmetrically for temporally reversed actions."""
    if not state_encoder.config.frozen:
        raise ConfigError("SSL action selection requires a frozen state encoder")
    initials, finals, fwd_actions, bwd_actions = [], [], [], []
    for clip in clips:
        ini, act, fin = ssl_decompose(clip, state_window)
        initials.append(ini)
        finals.append(fin)
        fwd_actions.append(act)
        bwd_actions.append(apply_counterfactual(act, "temporal_reverse"))
    with torch.no_grad():
        s_i = state_encoder.encode_batch(initials)
        s_f = state_encoder.encode_batch(finals)
    fwd_pair = torch.cat([s_i, s_f], dim=-1)
    bwd_pair = torch.cat([s_f, s_i], dim=-1)
    a_f = action_encoder.encode_batch(fwd_actions)
    a_b = action_encoder.encode_batch(bwd_actions)
    loss_f = info_nce(a_f, fwd_pair, bwd_pair.unsqueeze(1), temperature)
    loss_b = info_nce(a_b, bwd_pair, fwd_pair.unsqueeze(1), temperature)
    return loss_f + loss_b


def ssl_action_selection_step(
    clips: Sequence[VideoClip],
    action_encoder: Backbone,
    state_encoder: Backbone,
    optimizer: torch.optim.Optimizer,
    temperature: float = 0.1,
    state_window: int = 1,
) -> float:
    optimizer.zero_grad(set_to_none=True)
    loss = ssl_action_selection_loss(clips, action_encoder, state_encoder, temperature, state_window)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def train_ssl_action_encoder(
    clips: Sequence[VideoClip],
    d: int = 32,
    epochs: int = 10,
    lr: float = 1e-3,
    temperature: float = 0.1,
    batch_size: int = 32,
    seed: int = 0,
    state_backbone_kind: str = "frame_mlp",
    logger: Optional["MetricsLogger"] = None,
) -> tuple[Backbone, Backbone, list[float]]:
    """Returns (action_encoder, frozen state_encoder, per-step losses).

    The action encoder emits 2d-dimensional embeddings so it lives in the same
    space as the ordered state-pair concatenations.
    """
    if not clips:
        raise DataError("no clips to train on")
    state_encoder = build_backbone(
        BackboneConfig(kind=state_backbone_kind, d=d, n_sampled_frames=1, frozen=True),
        rng_seed=seed,
    )
    action_encoder = build_backbone(
        BackboneConfig(kind="tiny3dconv", d=2 * d, n_sampled_frames=8), rng_seed=seed + 1
    )
    optimizer = torch.optim.Adam(action_encoder.parameters(), lr=lr)
    order_rng = np.random.default_rng(seed)
    history: list[float] = []
    step = 0
    for _ in range(epochs):
        order = order_rng.permutation(len(clips))
        for start in range(0, len(clips), batch_size):
            batch = [clips[i] for i in order[start : start + batch_size]]
            loss = ssl_action_selection_step(
                batch, action_encoder, state_encoder, optimizer, temperature
            )
            history.append(loss)
            if logger is not None:
                logger.log(step=step, phase="ssl", loss=loss)
            step += 1
    return action_encoder, state_encoder, history


def ssl_forward_alignment(
    clips: Sequence[VideoClip],
    action_encoder: Backbone,
    state_encoder: Backbone,
    state_window: int = 1,
) -> np.ndarray:
    """Per-clip flag: does the forward action match the forward pair better
    than the backward pair?"""
    flags = []
    with torch.no_grad():
        for clip in clips:
            ini, act, fin = ssl_decompose(clip, state_window)
            s_i = state_encoder.encode_batch([ini])[0]
            s_f = state_encoder.encode_batch([fin])[0]
            a_f = action_encoder.encode_batch([act])[0]
            fwd = torch.cat([s_i, s_f])
            bwd = torch.cat([s_f, s_i])
            flags.append(
                float(cosine_sim_t(a_f, fwd, dim=0)) > float(cosine_sim_t(a_f, bwd, dim=0))
            )
    return np.asarray(flags, dtype=bool)


# ---------------------------------------------------------------------------
# Effect-Affinity Assessment


@dataclass
class ProxyLabelSequence:
    """Graded relatedness targets: the k-th of K frames gets 1 - k/(K-1)."""

    K: int
    labels: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.K < 2:
            raise ConfigError(f"K must be >= 2, got {self.K}")
        if not self.labels:
            self.labels = [1.0 - k / (self.K - 1) for k in range(self.K)]
        if len(self.labels) != self.K:
            raise DataError("label count must equal K")
        if self.labels[0] != 1.0 or self.labels[-1] != 0.0:
            raise DataError("proxy labels must start at 1.0 and end at 0.0")
        if any(a <= b for a, b in zip(self.labels, self.labels[1:])):
            raise DataError("proxy labels must be strictly decreasing")


@dataclass
class EaaSample:
    initial_state: VideoClip
    action: VideoClip
    effect_frames: np.ndarray  # (K, H, W, 3) uint8, temporally ordered
    labels: ProxyLabelSequence
    source_clip_id: str


def eaa_make_sample(clip: VideoClip, action_len_frac: float = 0.25, K: int = 8) -> EaaSample:
    """First frame = initial state, next floor(frac*N) frames = the short
    action, then K evenly spaced ordered frames from the remainder."""
    if not 0 < action_len_frac < 1:
        raise ConfigError("action_len_frac must be in (0, 1)")
    n = len(clip)
    n_action = max(1, math.floor(action_len_frac * n))
    effect_start = 1 + n_action
    span = n - effect_start
    if span < K:
        raise DataError(
            f"clip {clip.clip_id!r}: only {span} frames after the action, need K={K}"
        )
    offsets = np.round(np.linspace(0, span - 1, K)).astype(int)
    return EaaSample(
        initial_state=clip.section(0, 1),
        action=clip.section(1, effect_start),
        effect_frames=clip.frames[effect_start + offsets],
        labels=ProxyLabelSequence(K=K),
        source_clip_id=clip.clip_id,
    )


def _effect_frame_clips(sample: EaaSample) -> list[VideoClip]:
    return [
        VideoClip(clip_id=f"{sample.source_clip_id}#e{k}", frames=sample.effect_frames[k : k + 1])
        for k in range(sample.labels.K)
    ]


def eaa_predictions(
    sample: EaaSample,
    regressor: EaaRegressor,
    frame_encoder: Backbone,
    action_encoder: Backbone,
) -> torch.Tensor:
    """(K,) predicted degree-of-relatedness for one sample."""
    K = sample.labels.K
    e_i = frame_encoder.encode_batch([sample.initial_state])
    e_a = action_encoder.encode_batch([sample.action])
    e_f = frame_encoder.encode_batch(_effect_frame_clips(sample))
    return regressor(e_i.expand(K, -1), e_a.expand(K, -1), e_f)


def eaa_loss(
    samples: Sequence[EaaSample],
    regressor: EaaRegressor,
    frame_encoder: Backbone,
    action_encoder: Backbone,
) -> torch.Tensor:
    """Mean squared error against the proxy labels, averaged over samples."""
    preds, targets = [], []
    for sample in samples:
        preds.append(eaa_predictions(sample, regressor, frame_encoder, action_encoder))
        targets.append(torch.tensor(sample.labels.labels, dtype=preds[-1].dtype))
    pred = torch.stack(preds)
    target = torch.stack(targets)
    return torch.mean((pred - target) ** 2)


def eaa_train_step(
    samples: Sequence[EaaSample],
    regressor: EaaRegressor,
    frame_encoder: Backbone,
    action_encoder: Backbone,
    optimizer: torch.optim.Optimizer,
) -> float:
    optimizer.zero_grad(set_to_none=True)
    loss = eaa_loss(samples, regressor, frame_encoder, action_encoder)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def train_eaa(
    clips: Sequence[VideoClip],
    d: int = 32,
    K: int = 8,
    action_len_frac: float = 0.25,
    epochs: int = 20,
    lr: float = 1e-3,
    batch_size: int = 16,
    seed: int = 0,
    logger: Optional["MetricsLogger"] = None,
) -> tuple[EaaRegressor, Backbone, Backbone, list[float]]:
    """Self-supervised EAA training; encoders and regressor learn jointly."""
    samples = []
    for clip in clips:
        try:
            samples.append(eaa_make_sample(clip, action_len_frac, K))
        except DataError:
            continue
    if not samples:
        raise DataError("no clip is long enough for EAA samples")
    gen_state = torch.get_rng_state()
    torch.manual_seed(seed)
    try:
        regressor = EaaRegressor(d)
    finally:
        torch.set_rng_state(gen_state)
    frame_encoder = build_backbone(
        BackboneConfig(kind="frame_mlp", d=d, n_sampled_frames=1), rng_seed=seed + 1
    )
    action_encoder = build_backbone(
        BackboneConfig(kind="frame_mlp", d=d, n_sampled_frames=4), rng_seed=seed + 2
    )
    params = (
        list(regressor.parameters()) + frame_encoder.parameters() + action_encoder.parameters()
    )
    optimizer = torch.optim.Adam(params, lr=lr)
    order_rng = np.random.default_rng(seed)
    history: list[float] = []
    step = 0
    for _ in range(epochs):
        order = order_rng.permutation(len(samples))
        for start in range(0, len(samples), batch_size):
            batch = [samples[i] for i in order[start : start + batch_size]]
            loss = eaa_train_step(batch, regressor, frame_encoder, action_encoder, optimizer)
            history.append(loss)
            if logger is not None:
                logger.log(step=step, phase="eaa", loss=loss)
            step += 1
    return regressor, frame_encoder, action_encoder, history


# ---------------------------------------------------------------------------
# Checkpoints for the two pretext tasks


def save_ssl_checkpoint(path, action_encoder: Backbone, state_encoder: Backbone) -> None:
    from dataclasses import asdict

    from .models import save_checkpoint

    config = {
        "task": "ssl_action",
        "action_backbone": asdict(action_encoder.config),
        "state_backbone": asdict(state_encoder.config),
    }
    save_checkpoint(
        path, config, {"action_encoder": action_encoder.module, "state_encoder": state_encoder.module}
    )


def load_ssl_checkpoint(path) -> tuple[Backbone, Backbone]:
    from .models import load_checkpoint

    config, states = load_checkpoint(path)
    if config.get("task") != "ssl_action":
        raise DataError(f"not an ssl_action checkpoint: task={config.get('task')!r}")
    action = build_backbone(BackboneConfig(**config["action_backbone"]))
    state = build_backbone(BackboneConfig(**config["state_backbone"]))
    action.module.load_state_dict(states["action_encoder"])
    state.module.load_state_dict(states["state_encoder"])
    return action, state


def save_eaa_checkpoint(
    path,
    regressor: EaaRegressor,
    frame_encoder: Backbone,
    action_encoder: Backbone,
    K: int,
    action_len_frac: float,
) -> None:
    from dataclasses import asdict

    from .models import save_checkpoint

    config = {
        "task": "eaa",
        "d": frame_encoder.d,
        "K": K,
        "action_len_frac": action_len_frac,
        "frame_backbone": asdict(frame_encoder.config),
        "action_backbone": asdict(action_encoder.config),
    }
    save_checkpoint(
        path,
        config,
        {
            "regressor": regressor,
            "frame_encoder": frame_encoder.module,
            "action_encoder": action_encoder.module,
        },
    )


def load_eaa_checkpoint(path) -> tuple[EaaRegressor, Backbone, Backbone, dict]:
    from .models import load_checkpoint

    config, states = load_checkpoint(path)
    if config.get("task") != "eaa":
        raise DataError(f"not an eaa checkpoint: task={config.get('task')!r}")
    regressor = EaaRegressor(config["d"])
    regressor.load_state_dict(states["regressor"])
    frame = build_backbone(BackboneConfig(**config["frame_backbone"]))
    frame.module.load_state_dict(states["frame_encoder"])
    action = build_backbone(BackboneConfig(**config["action_backbone"]))
    action.module.load_state_dict(states["action_encoder"])
    return regressor, frame, action, config


# ---------------------------------------------------------------------------
# Metrics log: JSON lines, one record per step


class MetricsLogger:
    def __init__(self, path: Path | str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w")

    def log(self, step: int, phase: str, loss: float) -> None:
        self._fh.write(json.dumps({"step": step, "phase": phase, "loss": loss}) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "MetricsLogger":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
