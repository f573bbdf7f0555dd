"""Local-aware spatial attention over two l x l windows on the bracketing slices.

For a query at ``(x, y, z)`` the neighborhood is an ``l x l`` window centred
on ``(round(x), round(y))`` on slice ``floor(z)`` and on slice
``floor(z) + 1``.  Grid indices are clamped to the volume; the relative
offsets keep the nominal (unclamped) geometry.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .encoder import init_uniform_


@dataclass
class Neighborhood:
    codes: torch.Tensor    # (N, 2l^2, C)
    offsets: torch.Tensor  # (N, 2l^2, 3)
    indices: torch.Tensor  # (N, 2l^2) flat indices into the (H, W, D) grid

    @property
    def rows(self) -> int:
        return self.codes.shape[1]


def window_offsets(l: int) -> np.ndarray:
    """Integer ``(2l^2, 3)`` template of (slice, dx, dy); slice 0 is preceding, 1 next."""
    if l < 1 or l % 2 == 0:
        raise ValueError(f"window size l must be odd and >= 1, got {l}")
    r = (l - 1) // 2
    s, dx, dy = np.meshgrid([0, 1], np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    return np.stack([s.ravel(), dx.ravel(), dy.ravel()], axis=1)


def neighborhood_geometry(coords: torch.Tensor, dims, l: int):
    """Flat grid indices ``(N, 2l^2)`` and relative offsets ``(N, 2l^2, 3)`` for each query."""
    h, w, d = dims
    tmpl = torch.from_numpy(window_offsets(l))
    coords = torch.as_tensor(coords, dtype=torch.float64)
    cx = torch.floor(coords[:, 0] + 0.5).long()
    cy = torch.floor(coords[:, 1] + 0.5).long()
    z0 = torch.floor(coords[:, 2]).long()

    nx = cx[:, None] + tmpl[None, :, 1]
    ny = cy[:, None] + tmpl[None, :, 2]
    nz = z0[:, None] + tmpl[None, :, 0]
    offsets = torch.stack([nx, ny, nz], dim=2).to(torch.float64) - coords[:, None, :]

    ix = nx.clamp(0, h - 1)
    iy = ny.clamp(0, w - 1)
    iz = nz.clamp(0, d - 1)
    return (ix * w + iy) * d + iz, offsets


def gather_neighborhood(features: torch.Tensor, coords: torch.Tensor, l: int = 7) -> Neighborhood:
    """Gather the ``2l^2`` latent codes around each query from ``(H, W, D, C)`` features."""
    dims = tuple(features.shape[:3])
    indices, offsets = neighborhood_geometry(coords, dims, l)
    flat = features.reshape(-1, features.shape[-1])
    return Neighborhood(flat[indices], offsets.to(features.dtype), indices)


def _softmax(scores: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(scores).all():
        raise FloatingPointError("non-finite attention scores")
    shifted = scores - scores.max(dim=-1, keepdim=True).values
    e = torch.exp(shifted)
    return e / e.sum(dim=-1, keepdim=True)


def attend(z_q, nb: Neighborhood, w_theta, w_phi, w_g, w_omega=None) -> torch.Tensor:
    """Refine ``z_q`` ``(N, C)`` by attention over its neighborhood.

    ``V = Z_n + X_n W_omega``; weights ``softmax(z_q W_theta (V W_phi)^T)``;
    output ``weights V W_g + z_q``.  Plain dot product, no scaling.
    """
    values = nb.codes if w_omega is None else nb.codes + nb.offsets @ w_omega
    query = z_q @ w_theta
    keys = values @ w_phi
    scores = torch.einsum("nc,nrc->nr", query, keys)
    weights = _softmax(scores)
    return torch.einsum("nr,nrc->nc", weights, values @ w_g) + z_q


def attend_no_pos(z_q, nb: Neighborhood, w_theta, w_phi, w_g) -> torch.Tensor:
    return attend(z_q, nb, w_theta, w_phi, w_g, None)


class LASA(nn.Module):
    def __init__(self, channels: int, window: int = 7, use_position: bool = True):
        super().__init__()
        window_offsets(window)
        self.window = window
        self.use_position = use_position
        self.w_theta = nn.Parameter(torch.zeros(channels, channels, dtype=torch.float64))
        self.w_phi = nn.Parameter(torch.zeros(channels, channels, dtype=torch.float64))
        self.w_g = nn.Parameter(torch.zeros(channels, channels, dtype=torch.float64))
        self.w_omega = nn.Parameter(torch.zeros(3, channels, dtype=torch.float64))

    def reset_parameters(self, rng: np.random.Generator, zero_value_proj: bool = True) -> None:
        c = self.w_theta.shape[0]
        init_uniform_(self.w_theta, c, rng)
        init_uniform_(self.w_phi, c, rng)
        init_uniform_(self.w_g, c, rng)
        init_uniform_(self.w_omega, 3, rng)
        if zero_value_proj:
            with torch.no_grad():
                self.w_g.zero_()

    def forward(self, z_q: torch.Tensor, features: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
        nb = gather_neighborhood(features, coords, self.window)
        w_omega = self.w_omega if self.use_position else None
        return attend(z_q, nb, self.w_theta, self.w_phi, self.w_g, w_omega)
