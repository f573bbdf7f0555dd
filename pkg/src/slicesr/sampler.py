"""Trilinear sampling of feature and intensity grids at continuous coordinates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass
class LatentSample:
    z_q: torch.Tensor
    s_q: torch.Tensor
    coords: torch.Tensor


def _axis_cells(c: torch.Tensor, n: int):
    # the upper boundary c == n-1 falls in the last cell with fraction 1
    i0 = torch.clamp(torch.floor(c), 0, max(n - 2, 0)).long()
    i1 = torch.clamp(i0 + 1, max=n - 1)
    f = c - i0.to(c.dtype)
    return i0, i1, f


def check_bounds(coords: torch.Tensor, dims) -> None:
    hi = torch.tensor([n - 1 for n in dims], dtype=coords.dtype, device=coords.device)
    bad = (coords < 0) | (coords > hi)
    if bad.any():
        row = int(bad.any(dim=1).nonzero()[0, 0])
        raise ValueError(
            f"query {coords[row].tolist()} lies outside grid of dims {tuple(dims)} (no extrapolation)"
        )


def corner_indices_and_weights(coords: torch.Tensor, dims):
    """Flat indices ``(N, 8)`` and weights ``(N, 8)`` of the surrounding grid corners.

    Corner order is ``(a, b, c)`` over ``{0,1}^3`` with ``c`` fastest.
    """
    h, w, d = dims
    x0, x1, fx = _axis_cells(coords[:, 0], h)
    y0, y1, fy = _axis_cells(coords[:, 1], w)
    z0, z1, fz = _axis_cells(coords[:, 2], d)
    idx, wts = [], []
    for xi, wx in ((x0, 1 - fx), (x1, fx)):
        for yi, wy in ((y0, 1 - fy), (y1, fy)):
            for zi, wz in ((z0, 1 - fz), (z1, fz)):
                idx.append((xi * w + yi) * d + zi)
                wts.append(wx * wy * wz)
    return torch.stack(idx, dim=1), torch.stack(wts, dim=1)


def trilinear_sample(grid: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Sample ``grid`` of shape ``(H, W, D)`` or ``(H, W, D, C)`` at ``coords`` ``(N, 3)``.

    Returns ``(N,)`` or ``(N, C)``.  Exact at grid nodes.
    """
    dims = tuple(grid.shape[:3])
    coords = torch.as_tensor(coords, dtype=torch.float64, device=grid.device)
    check_bounds(coords, dims)
    idx, wts = corner_indices_and_weights(coords, dims)
    wts = wts.to(grid.dtype)
    flat = grid.reshape(dims[0] * dims[1] * dims[2], -1)
    out = flat[idx[:, 0]] * wts[:, 0:1]
    for corner in range(1, 8):
        out = out + flat[idx[:, corner]] * wts[:, corner:corner + 1]
    return out[:, 0] if grid.dim() == 3 else out


def sample_volume(data, coords) -> np.ndarray:
    """Numpy convenience wrapper around :func:`trilinear_sample`."""
    grid = torch.from_numpy(np.asarray(data, dtype=np.float64))
    return trilinear_sample(grid, torch.from_numpy(np.asarray(coords, dtype=np.float64))).numpy()


def sample_query(features: torch.Tensor, lr: torch.Tensor, coords: torch.Tensor) -> LatentSample:
    """Latent code and intensity at each query.

    ``features`` is ``(H, W, D, C)``, ``lr`` is ``(H, W, D)``.
    """
    if tuple(features.shape[:3]) != tuple(lr.shape):
        raise ValueError(
            f"feature volume dims {tuple(features.shape[:3])} do not match LR dims {tuple(lr.shape)}"
        )
    coords = torch.as_tensor(coords, dtype=torch.float64)
    return LatentSample(trilinear_sample(features, coords), trilinear_sample(lr, coords), coords)
