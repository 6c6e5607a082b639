"""Trainable heads shared by the action-selection baselines.

Everything here is a plain ``nn.Module`` with smooth activations (GELU) so
analytic gradients admit tight finite-difference verification. Heads carry no
dropout or other stochastic layers; forward passes are deterministic.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import ConfigError


def _mlp(sizes: list[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(nn.GELU())
    return nn.Sequential(*layers)


class SccHead(nn.Module):
    """State-change computer: MLP over the concatenation [initial || final]."""

    def __init__(self, d: int, hidden_mult: int = 2, n_hidden: int = 2):
        super().__init__()
        self.d = d
        sizes = [2 * d] + [hidden_mult * d] * n_hidden + [d]
        self.net = _mlp(sizes)

    def forward(self, initial: torch.Tensor, final: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([initial, final], dim=-1))


class ActionHead(nn.Module):
    """Projection of action embeddings into the joint state-change space."""

    def __init__(self, d: int, hidden_mult: int = 2):
        super().__init__()
        self.d = d
        self.net = _mlp([d, hidden_mult * d, d])

    def forward(self, action: torch.Tensor) -> torch.Tensor:
        return self.net(action)


class TransformNet(nn.Module):
    """Maps an action embedding to a per-element transformation vector."""

    def __init__(self, d: int, hidden_mult: int = 2):
        super().__init__()
        self.d = d
        self.net = _mlp([d, hidden_mult * d, d])

    def forward(self, action: torch.Tensor) -> torch.Tensor:
        return self.net(action)


class BilinearHead(nn.Module):
    """Bilinear interaction between initial state and action.

    rank=None keeps the full (d, d, d) tensor (fine for small d); otherwise a
    rank-r factorization F = Wo((Wi I) * (Wa A)) + b is used. Both forms are
    linear in each argument with the other held fixed.
    """

    def __init__(self, d: int, rank: int | None = None):
        super().__init__()
        self.d = d
        self.rank = rank
        if rank is None:
            self.weight = nn.Parameter(torch.empty(d, d, d))
            nn.init.normal_(self.weight, std=d**-0.75)
            self.bias = nn.Parameter(torch.zeros(d))
        else:
            if rank <= 0:
                raise ConfigError("bilinear rank must be positive")
            self.wi = nn.Linear(d, rank, bias=False)
            self.wa = nn.Linear(d, rank, bias=False)
            self.wo = nn.Linear(rank, d, bias=True)

    def forward(self, initial: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        if self.rank is None:
            return torch.einsum("...i,kij,...j->...k", initial, self.weight, action) + self.bias
        return self.wo(self.wi(initial) * self.wa(action))

    @property
    def output_bias(self) -> torch.Tensor:
        return self.bias if self.rank is None else self.wo.bias


class SequencePairEncoder(nn.Module):
    """Transformer encoder over the 2-token sequence [initial, action].

    Learned positional encodings make the pair order-sensitive; pooled output
    goes through a linear decoder back to d dimensions.
    """

    def __init__(self, d: int, nhead: int = 1, n_layers: int = 1, positional: bool = True):
        super().__init__()
        if d % nhead != 0:
            raise ConfigError(f"d={d} not divisible by nhead={nhead}")
        self.d = d
        self.positional = positional
        self.pos_embedding = nn.Parameter(torch.zeros(2, d))
        nn.init.normal_(self.pos_embedding, std=0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=d,
            nhead=nhead,
            dim_feedforward=2 * d,
            dropout=0.0,
            activation="gelu",
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=n_layers)
        self.decoder = nn.Linear(d, d)

    def forward(self, initial: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        tokens = torch.stack([initial, action], dim=-2)
        if self.positional:
            tokens = tokens + self.pos_embedding
        encoded = self.encoder(tokens)
        return self.decoder(encoded.mean(dim=-2))


class SwapStateEncoder(nn.Module):
    """Encodes [initial || final] into an (m+n) vector: state part + STC."""

    def __init__(self, d: int, m: int, n: int, hidden_mult: int = 2):
        super().__init__()
        self.d, self.m, self.n = d, m, n
        self.net = _mlp([2 * d, hidden_mult * (m + n), m + n])

    def forward(self, initial: torch.Tensor, final: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([initial, final], dim=-1))


class SwapActionEncoder(nn.Module):
    """Distills the n-dimensional transformation code from an action embedding."""

    def __init__(self, d: int, n: int, hidden_mult: int = 2):
        super().__init__()
        self.d, self.n = d, n
        self.net = _mlp([d, hidden_mult * max(n, d), n])

    def forward(self, action: torch.Tensor) -> torch.Tensor:
        return self.net(action)


class SwapDecoder(nn.Module):
    """Reconstructs the final-state embedding from (state part, STC)."""

    def __init__(self, d: int, m: int, n: int, hidden_mult: int = 2):
        super().__init__()
        self.d, self.m, self.n = d, m, n
        self.net = _mlp([m + n, hidden_mult * d, d])

    def forward(self, state_part: torch.Tensor, stc: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([state_part, stc], dim=-1))


class EaaRegressor(nn.Module):
    """Scores how directly an effect frame relates to a preceding action.

    Besides the three raw embeddings, the input carries the differences
    effect-initial and effect-action: relatedness is fundamentally a relative
    judgement, and the explicit deltas transfer to unseen scenes far better
    than absolute frame content alone.
    """

    def __init__(self, d: int, hidden_mult: int = 2):
        super().__init__()
        self.d = d
        self.net = _mlp([5 * d, hidden_mult * d, 1])

    def forward(
        self, initial: torch.Tensor, action: torch.Tensor, effect: torch.Tensor
    ) -> torch.Tensor:
        feats = torch.cat(
            [initial, action, effect, effect - initial, effect - action], dim=-1
        )
        return self.net(feats).squeeze(-1)
