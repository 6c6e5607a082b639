"""Trainable answer selectors with a scikit-learn estimator surface.

Each selector owns a state encoder, an action encoder and a model-specific
head stack. fit() consumes materialized questions; predict() returns the
chosen option index per question, or None where the scores tie.
"""

from __future__ import annotations

import zlib
from typing import Optional, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .encoders import Backbone, BackboneConfig, build_backbone, cosine_sim_t
from .errors import ConfigError, DataError
from .models import ABSTAIN, load_checkpoint, save_checkpoint, select_answer
from .networks import (
    ActionHead,
    BilinearHead,
    SccHead,
    SequencePairEncoder,
    SwapActionEncoder,
    SwapDecoder,
    SwapStateEncoder,
    TransformNet,
)
from .questions import Question
from .training import info_nce, phase_for_step

N_OPTIONS = 4


def _check_questions(X) -> list[Question]:
    qs = list(X)
    if not qs:
        raise DataError("selector got an empty question set")
    for q in qs:
        q.validate()
    return qs


def _seeded_module(factory, seed: int) -> torch.nn.Module:
    state = torch.get_rng_state()
    torch.manual_seed(seed)
    try:
        return factory()
    finally:
        torch.set_rng_state(state)


class _QuestionSelector(BaseEstimator):
    """Shared encode/train/predict plumbing; subclasses define the head."""

    model_kind = ""

    def __init__(
        self,
        d: int = 32,
        epochs: int = 8,
        lr: float = 1e-3,
        batch_size: int = 32,
        temperature: float = 0.1,
        tie_eps: float = 1e-9,
        seed: int = 0,
        state_backbone: str = "frame_mlp",
        action_backbone: str = "tiny3dconv",
        n_state_frames: int = 3,
        n_action_frames: int = 8,
    ):
        self.d = d
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.temperature = temperature
        self.tie_eps = tie_eps
        self.seed = seed
        self.state_backbone = state_backbone
        self.action_backbone = action_backbone
        self.n_state_frames = n_state_frames
        self.n_action_frames = n_action_frames

    # -- architecture -------------------------------------------------------

    def _module_seed(self, name: str) -> int:
        return zlib.crc32(f"{self.seed}|{self.model_kind}|{name}".encode())

    def _build_modules(self) -> None:
        if self.d <= 0:
            raise ConfigError(f"d must be positive, got {self.d}")
        self.state_encoder_ = build_backbone(
            BackboneConfig(kind=self.state_backbone, d=self.d, n_sampled_frames=self.n_state_frames),
            rng_seed=self._module_seed("state"),
        )
        self.action_encoder_ = build_backbone(
            BackboneConfig(
                kind=self.action_backbone, d=self.d, n_sampled_frames=self.n_action_frames
            ),
            rng_seed=self._module_seed("action"),
        )
        self.heads_ = _seeded_module(self._make_heads, self._module_seed("heads"))

    def _make_heads(self) -> torch.nn.ModuleDict:
        return torch.nn.ModuleDict()

    # -- encoding ------------------------------------------------------------

    def _encode(self, qs: Sequence[Question]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        b = len(qs)
        states = [q.initial_state for q in qs] + [q.final_state for q in qs]
        options = [opt for q in qs for opt in q.options]
        s = self.state_encoder_.encode_batch(states)
        o = self.action_encoder_.encode_batch(options).reshape(b, N_OPTIONS, -1)
        return s[:b], s[b:], o

    # -- training ------------------------------------------------------------

    def _trainable_parameters(self) -> list[torch.nn.Parameter]:
        return (
            self.state_encoder_.parameters()
            + self.action_encoder_.parameters()
            + list(self.heads_.parameters())
        )

    def _batch_loss(
        self, I: torch.Tensor, F: torch.Tensor, O: torch.Tensor, y: torch.Tensor
    ) -> torch.Tensor:
        scores = self._score_batch(I, F, O)
        return torch.nn.functional.cross_entropy(scores / self.temperature, y)

    def fit(self, X, y=None):
        qs = _check_questions(X)
        self._build_modules()
        params = self._trainable_parameters()
        optimizer = torch.optim.Adam(params, lr=self.lr) if params else None
        rng = np.random.default_rng(self._module_seed("order"))
        targets = np.asarray([q.correct_index for q in qs])
        history: list[float] = []
        if optimizer is not None:
            for _ in range(self.epochs):
                order = rng.permutation(len(qs))
                for start in range(0, len(qs), self.batch_size):
                    idx = order[start : start + self.batch_size]
                    batch = [qs[i] for i in idx]
                    yb = torch.from_numpy(targets[idx]).long()
                    optimizer.zero_grad(set_to_none=True)
                    I, F, O = self._encode(batch)
                    loss = self._batch_loss(I, F, O, yb)
                    loss.backward()
                    optimizer.step()
                    history.append(float(loss.detach()))
        self.history_ = history
        self.n_questions_fit_ = len(qs)
        return self

    # -- inference -----------------------------------------------------------

    def _score_batch(self, I: torch.Tensor, F: torch.Tensor, O: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "heads_")
        qs = _check_questions(X)
        out = []
        with torch.no_grad():
            for start in range(0, len(qs), max(1, self.batch_size)):
                I, F, O = self._encode(qs[start : start + self.batch_size])
                out.append(self._score_batch(I, F, O).double().numpy())
        return np.concatenate(out, axis=0)

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        picks = [select_answer(row, tie_eps=self.tie_eps) for row in scores]
        return np.asarray(picks, dtype=object)

    def predict_forced(self, X) -> np.ndarray:
        """Tie-breaking variant: lowest tied index instead of abstaining."""
        scores = self.decision_function(X)
        picks = [select_answer(row, tie_eps=self.tie_eps, on_tie="first") for row in scores]
        return np.asarray(picks, dtype=object)

    def score(self, X, y=None) -> float:
        qs = _check_questions(X)
        truth = [q.correct_index for q in qs] if y is None else list(y)
        picks = self.predict(qs)
        hits = sum(1 for p, t in zip(picks, truth) if p is not ABSTAIN and int(p) == t)
        return hits / len(qs)

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        check_is_fitted(self, "heads_")
        modules: dict[str, torch.nn.Module] = {f"head.{k}": m for k, m in self.heads_.items()}
        if self.state_encoder_.module is not None:
            modules["state_encoder"] = self.state_encoder_.module
        if self.action_encoder_.module is not None:
            modules["action_encoder"] = self.action_encoder_.module
        config = {"model_kind": self.model_kind, "hyperparams": self.get_params()}
        save_checkpoint(path, config, modules)

    def _restore(self, states: dict[str, dict[str, torch.Tensor]]) -> None:
        self._build_modules()
        if "state_encoder" in states:
            self.state_encoder_.module.load_state_dict(states["state_encoder"])
        if "action_encoder" in states:
            self.action_encoder_.module.load_state_dict(states["action_encoder"])
        for key, head in self.heads_.items():
            head.load_state_dict(states[f"head.{key}"])
        self.history_ = []
        self.n_questions_fit_ = 0


class NaiveSelector(_QuestionSelector):
    """No learned mapping: cosine between mean(initial, final) and the option."""

    model_kind = "naive"

    def fit(self, X, y=None):
        _check_questions(X)
        self._build_modules()
        self.history_ = []
        self.n_questions_fit_ = len(list(X))
        return self

    def _score_batch(self, I, F, O):
        mean = (I + F) / 2.0
        return cosine_sim_t(mean.unsqueeze(1), O, dim=-1)


class AatSelector(_QuestionSelector):
    """Actions as transformations: final = initial * t(action), elementwise."""

    model_kind = "aat"

    def _make_heads(self):
        return torch.nn.ModuleDict({"transform": TransformNet(self.d)})

    def _score_batch(self, I, F, O):
        pred = I.unsqueeze(1) * self.heads_["transform"](O)
        return cosine_sim_t(pred, F.unsqueeze(1), dim=-1)


class MorisaSelector(_QuestionSelector):
    """Bilinear interaction between initial state and action.

    rank=None keeps the full (d, d, d) tensor; "auto" switches to a low-rank
    factorization of rank d//4 once d reaches 16.
    """

    model_kind = "morisa"

    def __init__(
        self,
        d: int = 32,
        epochs: int = 8,
        lr: float = 1e-3,
        batch_size: int = 32,
        temperature: float = 0.1,
        tie_eps: float = 1e-9,
        seed: int = 0,
        state_backbone: str = "frame_mlp",
        action_backbone: str = "tiny3dconv",
        n_state_frames: int = 3,
        n_action_frames: int = 8,
        rank="auto",
    ):
        super().__init__(
            d=d,
            epochs=epochs,
            lr=lr,
            batch_size=batch_size,
            temperature=temperature,
            tie_eps=tie_eps,
            seed=seed,
            state_backbone=state_backbone,
            action_backbone=action_backbone,
            n_state_frames=n_state_frames,
            n_action_frames=n_action_frames,
        )
        self.rank = rank

    def _resolved_rank(self) -> Optional[int]:
        if self.rank == "auto":
            return self.d // 4 if self.d >= 16 else None
        return self.rank

    def _make_heads(self):
        return torch.nn.ModuleDict({"bilinear": BilinearHead(self.d, rank=self._resolved_rank())})

    def _score_batch(self, I, F, O):
        pred = self.heads_["bilinear"](I.unsqueeze(1).expand_as(O), O)
        return cosine_sim_t(pred, F.unsqueeze(1), dim=-1)


class LinsaesSelector(_QuestionSelector):
    """Two-token sequence encoder over (initial, action) with a linear decoder."""

    model_kind = "linsaes"

    def _make_heads(self):
        return torch.nn.ModuleDict({"seq": SequencePairEncoder(self.d)})

    def _score_batch(self, I, F, O):
        b = O.shape[0]
        i_flat = I.unsqueeze(1).expand_as(O).reshape(-1, self.d)
        pred = self.heads_["seq"](i_flat, O.reshape(-1, self.d)).reshape(b, N_OPTIONS, self.d)
        return cosine_sim_t(pred, F.unsqueeze(1), dim=-1)


class SwappingSelector(_QuestionSelector):
    """State/transformation factorization with an action-side distillation path.

    The state pair encodes to an m-dim state part plus an n-dim transformation
    code; a decoder rebuilds the final state from either the state-derived code
    or the code distilled from the action clip alone.
    """

    model_kind = "swapping"

    def __init__(
        self,
        d: int = 32,
        epochs: int = 8,
        lr: float = 1e-3,
        batch_size: int = 32,
        temperature: float = 0.1,
        tie_eps: float = 1e-9,
        seed: int = 0,
        state_backbone: str = "frame_mlp",
        action_backbone: str = "tiny3dconv",
        n_state_frames: int = 3,
        n_action_frames: int = 8,
        m: Optional[int] = None,
        n: Optional[int] = None,
        recon_weight: float = 1.0,
        distill_weight: float = 1.0,
    ):
        super().__init__(
            d=d,
            epochs=epochs,
            lr=lr,
            batch_size=batch_size,
            temperature=temperature,
            tie_eps=tie_eps,
            seed=seed,
            state_backbone=state_backbone,
            action_backbone=action_backbone,
            n_state_frames=n_state_frames,
            n_action_frames=n_action_frames,
        )
        self.m = m
        self.n = n
        self.recon_weight = recon_weight
        self.distill_weight = distill_weight

    def _dims(self) -> tuple[int, int]:
        m = self.d if self.m is None else self.m
        n = max(1, self.d // 4) if self.n is None else self.n
        if m <= 0 or n <= 0:
            raise ConfigError("swapping dims m and n must be positive")
        return m, n

    def _make_heads(self):
        m, n = self._dims()
        return torch.nn.ModuleDict(
            {
                "alpha": SwapStateEncoder(self.d, m, n),
                "beta": SwapActionEncoder(self.d, n),
                "decoder": SwapDecoder(self.d, m, n),
            }
        )

    def _score_batch(self, I, F, O):
        m, _ = self._dims()
        raw = self.heads_["alpha"](I, F)
        state_part = raw[..., :m]
        stc_opt = self.heads_["beta"](O)
        pred = self.heads_["decoder"](
            state_part.unsqueeze(1).expand(-1, N_OPTIONS, -1), stc_opt
        )
        return cosine_sim_t(pred, F.unsqueeze(1), dim=-1)

    def _batch_loss(self, I, F, O, y):
        m, _ = self._dims()
        raw = self.heads_["alpha"](I, F)
        state_part, stc_state = raw[..., :m], raw[..., m:]
        # answer term: decode every option's distilled code against the final
        stc_opt = self.heads_["beta"](O)
        pred = self.heads_["decoder"](
            state_part.unsqueeze(1).expand(-1, N_OPTIONS, -1), stc_opt
        )
        scores = cosine_sim_t(pred, F.unsqueeze(1), dim=-1)
        answer = torch.nn.functional.cross_entropy(scores / self.temperature, y)
        # reconstruction: the state-derived code must rebuild the final state
        recon = self.heads_["decoder"](state_part, stc_state)
        recon_term = (1.0 - cosine_sim_t(recon, F, dim=-1)).mean()
        # distillation: the correct action's code matches the state-derived one
        stc_pos = stc_opt[torch.arange(O.shape[0]), y]
        distill = torch.mean((stc_pos - stc_state.detach()) ** 2)
        return answer + self.recon_weight * recon_term + self.distill_weight * distill


class AnalogicalSelector(_QuestionSelector):
    """Contrastive alignment of state changes with projected action embeddings.

    Optimization alternates between the state side (state encoder + change
    computer) and the action side (action encoder + projection head) every
    `period` steps; the idle side is untouched, optimizer state included.
    """

    model_kind = "analogical"

    def __init__(
        self,
        d: int = 32,
        epochs: int = 8,
        lr: float = 1e-3,
        batch_size: int = 32,
        temperature: float = 0.1,
        tie_eps: float = 1e-9,
        seed: int = 0,
        state_backbone: str = "frame_mlp",
        action_backbone: str = "tiny3dconv",
        n_state_frames: int = 3,
        n_action_frames: int = 8,
        period: int = 1,
        alternating: bool = True,
    ):
        super().__init__(
            d=d,
            epochs=epochs,
            lr=lr,
            batch_size=batch_size,
            temperature=temperature,
            tie_eps=tie_eps,
            seed=seed,
            state_backbone=state_backbone,
            action_backbone=action_backbone,
            n_state_frames=n_state_frames,
            n_action_frames=n_action_frames,
        )
        self.period = period
        self.alternating = alternating

    def _make_heads(self):
        return torch.nn.ModuleDict(
            {"scc": SccHead(self.d), "action": ActionHead(self.d)}
        )

    def _score_batch(self, I, F, O):
        change = self.heads_["scc"](I, F)
        proj = self.heads_["action"](O)
        return cosine_sim_t(change.unsqueeze(1), proj, dim=-1)

    def _batch_loss(self, I, F, O, y):
        change = self.heads_["scc"](I, F)
        proj = self.heads_["action"](O)
        b = O.shape[0]
        pos = proj[torch.arange(b), y]
        neg_mask = torch.ones(b, N_OPTIONS, dtype=torch.bool)
        neg_mask[torch.arange(b), y] = False
        negs = proj[neg_mask].reshape(b, N_OPTIONS - 1, self.d)
        return info_nce(change, pos, negs, self.temperature)

    def _param_groups(self) -> dict[str, list[torch.nn.Parameter]]:
        return {
            "state": self.state_encoder_.parameters() + list(self.heads_["scc"].parameters()),
            "action": self.action_encoder_.parameters() + list(self.heads_["action"].parameters()),
        }

    def fit(self, X, y=None):
        if not self.alternating:
            return super().fit(X, y)
        qs = _check_questions(X)
        self._build_modules()
        groups = self._param_groups()
        optimizers = {k: torch.optim.Adam(ps, lr=self.lr) for k, ps in groups.items()}
        rng = np.random.default_rng(self._module_seed("order"))
        targets = np.asarray([q.correct_index for q in qs])
        history: list[float] = []
        step = 0
        from .training import alternating_train_step

        for _ in range(self.epochs):
            order = rng.permutation(len(qs))
            for start in range(0, len(qs), self.batch_size):
                idx = order[start : start + self.batch_size]
                batch = [qs[i] for i in idx]
                yb = torch.from_numpy(targets[idx]).long()
                phase = phase_for_step(step, self.period)

                def loss_fn():
                    I, F, O = self._encode(batch)
                    return self._batch_loss(I, F, O, yb)

                history.append(alternating_train_step(loss_fn, phase, groups, optimizers))
                step += 1
        self.history_ = history
        self.n_questions_fit_ = len(qs)
        return self


SELECTOR_REGISTRY: dict[str, type[_QuestionSelector]] = {
    cls.model_kind: cls
    for cls in (
        NaiveSelector,
        AatSelector,
        MorisaSelector,
        LinsaesSelector,
        SwappingSelector,
        AnalogicalSelector,
    )
}


def make_selector(model_kind: str, **params) -> _QuestionSelector:
    if model_kind not in SELECTOR_REGISTRY:
        raise ConfigError(
            f"unknown model kind {model_kind!r}; expected one of {sorted(SELECTOR_REGISTRY)}"
        )
    return SELECTOR_REGISTRY[model_kind](**params)


def load_selector(path) -> _QuestionSelector:
    """Rebuild a saved selector: architecture from config, weights from arrays."""
    config, states = load_checkpoint(path)
    kind = config.get("model_kind")
    if kind not in SELECTOR_REGISTRY:
        raise DataError(f"checkpoint has unknown model kind {kind!r}")
    selector = SELECTOR_REGISTRY[kind](**config["hyperparams"])
    selector._restore(states)
    return selector
