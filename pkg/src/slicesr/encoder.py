"""EDSR-style 3D encoder: head conv, plain residual blocks, tail conv, global skip."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class EncoderConfig:
    channels: int = 64
    n_res_blocks: int = 16

    def __post_init__(self):
        if self.channels < 1 or self.n_res_blocks < 1:
            raise ValueError("encoder needs channels >= 1 and n_res_blocks >= 1")


def conv3d_forward(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None) -> torch.Tensor:
    """3x3x3 convolution, stride 1, zero padding 1. ``x`` is ``(N, C_in, H, W, D)``."""
    if weight.shape[2:] != (3, 3, 3):
        raise ValueError(f"expected a 3x3x3 kernel, got {tuple(weight.shape[2:])}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"input has {x.shape[1]} channels, kernel expects {weight.shape[1]}")
    return F.conv3d(x, weight, bias, padding=1)


def init_uniform_(tensor: torch.Tensor, fan_in: int, rng: np.random.Generator) -> None:
    bound = 1.0 / np.sqrt(fan_in)
    values = rng.uniform(-bound, bound, size=tuple(tensor.shape))
    with torch.no_grad():
        tensor.copy_(torch.from_numpy(values))


class Conv3x3(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(c_out, c_in, 3, 3, 3, dtype=torch.float64))
        self.bias = nn.Parameter(torch.zeros(c_out, dtype=torch.float64))

    def reset_parameters(self, rng: np.random.Generator) -> None:
        fan_in = self.weight.shape[1] * 27
        init_uniform_(self.weight, fan_in, rng)
        init_uniform_(self.bias, fan_in, rng)

    def forward(self, x):
        return conv3d_forward(x, self.weight, self.bias)


class ResBlock(nn.Module):
    """conv - ReLU - conv plus identity skip; no normalization, no residual scaling."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv0 = Conv3x3(channels, channels)
        self.conv1 = Conv3x3(channels, channels)

    def forward(self, x):
        return x + self.conv1(F.relu(self.conv0(x)))


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.head = Conv3x3(1, cfg.channels)
        self.blocks = nn.ModuleList(ResBlock(cfg.channels) for _ in range(cfg.n_res_blocks))
        self.tail = Conv3x3(cfg.channels, cfg.channels)

    def reset_parameters(self, rng: np.random.Generator) -> None:
        for m in self.modules():
            if isinstance(m, Conv3x3):
                m.reset_parameters(rng)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``(N, 1, H, W, D)`` intensities to ``(N, C, H, W, D)`` latent codes."""
        # channels-last is several times faster for CPU conv3d
        head = self.head(x).contiguous(memory_format=torch.channels_last_3d)
        out = head
        for block in self.blocks:
            out = block(out)
        return self.tail(out) + head


def encode(volume: torch.Tensor, encoder: Encoder) -> torch.Tensor:
    """Encode one ``(H, W, D)`` volume into an ``(H, W, D, C)`` feature volume."""
    dtype = next(encoder.parameters()).dtype
    x = volume.to(dtype)[None, None]
    return encoder(x)[0].permute(1, 2, 3, 0)
