"""MLP decoder mapping a refined latent code to an intensity residual."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encoder import init_uniform_


@dataclass
class DecoderConfig:
    n_layers: int = 5
    hidden_dim: int = 256

    def __post_init__(self):
        if self.n_layers < 2:
            raise ValueError("decoder needs at least 2 layers")


@dataclass
class Prediction:
    value: float
    residual: float
    s_q: float


class Decoder(nn.Module):
    """``n_layers`` affine layers, ReLU between them, scalar unbounded output."""

    def __init__(self, in_dim: int, cfg: DecoderConfig):
        super().__init__()
        dims = [in_dim] + [cfg.hidden_dim] * (cfg.n_layers - 1) + [1]
        self.layers = nn.ModuleList(
            nn.Linear(a, b, dtype=torch.float64) for a, b in zip(dims[:-1], dims[1:])
        )

    def reset_parameters(self, rng: np.random.Generator, zero_last: bool = True) -> None:
        for layer in self.layers:
            init_uniform_(layer.weight, layer.in_features, rng)
            init_uniform_(layer.bias, layer.in_features, rng)
        if zero_last:
            # start from the interpolation baseline: residual == 0 everywhere
            with torch.no_grad():
                self.layers[-1].weight.zero_()
                self.layers[-1].bias.zero_()

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        for layer in self.layers[:-1]:
            z = F.relu(layer(z))
        return self.layers[-1](z)[..., 0]


def decode(z_hat: torch.Tensor, decoder: Decoder) -> torch.Tensor:
    if z_hat.shape[-1] != decoder.layers[0].in_features:
        raise ValueError(
            f"latent dim {z_hat.shape[-1]} does not match decoder input {decoder.layers[0].in_features}"
        )
    return decoder(z_hat)
