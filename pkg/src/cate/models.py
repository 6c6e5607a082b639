"""Scoring operations for the six action-selection baselines.

Every baseline reduces to one real score per option; prediction-style models
(transformation, bilinear, linear-embedding, swapping) share the inference
rule score(option) = cosine(predicted_final(option), true_final), while the
analogical model compares its state-change vector against projected actions.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .encoders import Embedding, cosine_similarity
from .errors import ConfigError, DataError
from .networks import (
    ActionHead,
    BilinearHead,
    EaaRegressor,
    SccHead,
    SequencePairEncoder,
    SwapActionEncoder,
    SwapDecoder,
    SwapStateEncoder,
    TransformNet,
)

TIE_EPS = 1e-9

MODEL_KINDS = ("naive", "aat", "morisa", "linsaes", "swapping", "analogical")


@dataclass
class SwapCode:
    """Split of the swap encoder output: m-dim state part + n-dim STC."""

    state_part: torch.Tensor
    transformation_code: torch.Tensor


def _values(x: Embedding | torch.Tensor) -> torch.Tensor:
    return x.values if isinstance(x, Embedding) else x


def naive_score(
    initial: Embedding | torch.Tensor,
    final: Embedding | torch.Tensor,
    option: Embedding | torch.Tensor,
) -> float:
    """Cosine between the state average and the option; no parameters."""
    mean = (_values(initial) + _values(final)) / 2.0
    if float(torch.linalg.vector_norm(mean.detach())) == 0.0:
        raise DataError("naive score undefined: initial and final average to zero")
    return cosine_similarity(mean, _values(option))


def aat_predict_final(
    initial: Embedding | torch.Tensor,
    action: Embedding | torch.Tensor,
    transform_net: TransformNet,
) -> Embedding:
    """Hadamard product of the initial state with the action's transformation."""
    out = _values(initial) * transform_net(_values(action))
    return Embedding(values=out)


def morisa_predict_final(
    initial: Embedding | torch.Tensor,
    action: Embedding | torch.Tensor,
    bilinear: BilinearHead,
) -> Embedding:
    return Embedding(values=bilinear(_values(initial), _values(action)))


def linsaes_predict_final(
    initial: Embedding | torch.Tensor,
    action: Embedding | torch.Tensor,
    seq_encoder: SequencePairEncoder,
) -> Embedding:
    return Embedding(values=seq_encoder(_values(initial), _values(action)))


def swap_encode_states(
    initial: Embedding | torch.Tensor,
    final: Embedding | torch.Tensor,
    encoder: SwapStateEncoder,
) -> SwapCode:
    raw = encoder(_values(initial), _values(final))
    return SwapCode(state_part=raw[..., : encoder.m], transformation_code=raw[..., encoder.m :])


def swap_distill_stc(
    action: Embedding | torch.Tensor, encoder: SwapActionEncoder
) -> torch.Tensor:
    return encoder(_values(action))


def swap_decode(
    state_part: torch.Tensor, stc: torch.Tensor, decoder: SwapDecoder
) -> Embedding:
    return Embedding(values=decoder(state_part, stc))


def scc(
    initial: Embedding | torch.Tensor,
    final: Embedding | torch.Tensor,
    scc_head: SccHead,
) -> Embedding:
    """State-change vector from the ordered concatenation [initial || final]."""
    return Embedding(values=scc_head(_values(initial), _values(final)))


def analogical_score(
    initial: Embedding | torch.Tensor,
    final: Embedding | torch.Tensor,
    option: Embedding | torch.Tensor,
    scc_head: SccHead,
    action_head: ActionHead,
) -> float:
    change = scc_head(_values(initial), _values(final))
    projected = action_head(_values(option))
    return cosine_similarity(change, projected)


ABSTAIN = None  # sentinel for "failed to pick exactly one option"


def select_answer(
    scores: Sequence[float], tie_eps: float = TIE_EPS, on_tie: str = "abstain"
) -> Optional[int]:
    """Argmax over option scores; ties within tie_eps abstain (None).

    on_tie="first" force-picks the lowest tied index instead, which is the
    comparison variant used to show the tie rule can only lower accuracy.
    """
    if len(scores) < 2:
        raise DataError("select_answer needs at least two option scores")
    arr = np.asarray(scores, dtype=float)
    if not np.isfinite(arr).all():
        raise DataError("option scores must be finite")
    best = int(arr.argmax())
    runner_up = np.partition(arr, -2)[-2]
    if arr[best] - runner_up <= tie_eps:
        if on_tie == "first":
            return best
        return ABSTAIN
    return best


# ---------------------------------------------------------------------------
# Checkpoints: one zip archive holding config.json + named parameter arrays.

CHECKPOINT_VERSION = 1


def save_checkpoint(path: Path | str, config: dict, modules: dict[str, torch.nn.Module]) -> None:
    """Write a versioned archive of JSON config + flat named float arrays."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    for mod_name, module in modules.items():
        for p_name, tensor in module.state_dict().items():
            arrays[f"{mod_name}/{p_name}"] = tensor.detach().cpu().numpy()
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    full_config = {"format_version": CHECKPOINT_VERSION, **config}
    with zipfile.ZipFile(path, "w") as zf:
        # fixed entry timestamps keep checkpoint bytes identical across reruns
        for name, payload in (
            ("config.json", json.dumps(full_config, indent=1, sort_keys=True).encode()),
            ("params.npz", buf.getvalue()),
        ):
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, payload)


def load_checkpoint(path: Path | str) -> tuple[dict, dict[str, dict[str, torch.Tensor]]]:
    """Returns (config, {module_name: state_dict})."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    with zipfile.ZipFile(path) as zf:
        config = json.loads(zf.read("config.json"))
        npz = np.load(io.BytesIO(zf.read("params.npz")))
        states: dict[str, dict[str, torch.Tensor]] = {}
        for key in npz.files:
            mod_name, p_name = key.split("/", 1)
            states.setdefault(mod_name, {})[p_name] = torch.from_numpy(npz[key])
    if config.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {config.get('format_version')}")
    return config, states
