"""Volumes, SRV1 file I/O, LR simulation, patch cropping and query grids.

Coordinates are continuous LR index units: LR slice ``i`` sits at ``z = i``
and HR slice ``j`` at ratio ``k`` sits at ``z = j / k``.  Arrays are indexed
``data[x, y, z]`` with ``z`` the slice axis.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SRV1"
_HEADER = struct.Struct("<4s3I3f")
_MAX_VOXELS = 2**31


class VolumeFormatError(ValueError):
    pass


@dataclass
class Volume:
    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"volume data must be a non-empty 3D array, got shape {self.data.shape}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def copy(self) -> "Volume":
        return Volume(self.data.copy(), self.spacing)


@dataclass
class PatchPair:
    """An LR training patch plus every HR voxel of its region as (coord, target).

    ``coords`` is ``(N, 3)`` in LR index units of ``lr_patch``; ``targets``
    is ``(N,)``.
    """

    lr_patch: Volume
    coords: np.ndarray
    targets: np.ndarray
    k: int
    origin: tuple[int, int, int] = field(default=(0, 0, 0))

    def __len__(self):
        return len(self.targets)


def normalize(vol: Volume) -> Volume:
    data = np.asarray(vol.data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise ValueError("volume contains non-finite intensities")
    lo, hi = data.min(), data.max()
    if hi <= lo:
        raise ValueError("degenerate dynamic range: volume is constant")
    return Volume((data - lo) / (hi - lo), vol.spacing)


def lr_depth(d: int, k: int) -> int:
    return (d - 1) // k + 1


def hr_depth(d: int, k: int) -> int:
    return (d - 1) * k + 1


def simulate_lr(vol: Volume, k: int) -> Volume:
    """Keep slices 0, k, 2k, ... and multiply the slice spacing by k."""
    if k < 1:
        raise ValueError(f"ratio k must be >= 1, got {k}")
    if vol.dims[2] < k:
        raise ValueError(f"volume depth {vol.dims[2]} is smaller than k={k}")
    sx, sy, sz = vol.spacing
    return Volume(vol.data[:, :, ::k].copy(), (sx, sy, sz * k))


def crop_patch(vol: Volume, origin, k: int, size: int = 64, depth: int = 17) -> PatchPair:
    """Crop a ``size x size x ((depth-1)k+1)`` HR region and pair it with its LR patch.

    The HR region spans ``(depth - 1) * k + 1`` slices so every HR slice lies
    between two kept LR slices.
    """
    if k < 1:
        raise ValueError(f"ratio k must be >= 1, got {k}")
    ox, oy, oz = (int(o) for o in origin)
    ext = (size, size, hr_depth(depth, k))
    for o, e, n in zip((ox, oy, oz), ext, vol.dims):
        if o < 0 or o + e > n:
            raise ValueError(
                f"patch of extent {ext} at origin {(ox, oy, oz)} does not fit volume {vol.dims}"
            )
    region = vol.data[ox:ox + ext[0], oy:oy + ext[1], oz:oz + ext[2]]
    lr = simulate_lr(Volume(region, vol.spacing), k)

    gx, gy, gj = np.meshgrid(
        np.arange(ext[0]), np.arange(ext[1]), np.arange(ext[2]), indexing="ij"
    )
    coords = np.stack([gx.ravel(), gy.ravel(), gj.ravel() / k], axis=1).astype(np.float64)
    targets = np.asarray(region, dtype=np.float64).ravel()
    return PatchPair(lr, coords, targets, k, (ox, oy, oz))


def make_query_grid(lr_dims, k: int) -> np.ndarray:
    """All HR query coordinates for slice-axis up-sampling, as an ``(N, 3)`` array.

    Ordered so that reshaping values to ``(H, W, (D-1)k+1)`` gives the HR volume.
    """
    h, w, d = (int(n) for n in lr_dims)
    if k < 1:
        raise ValueError(f"ratio k must be >= 1, got {k}")
    if d < 2:
        raise ValueError("query grid needs at least two LR slices")
    gx, gy, gj = np.meshgrid(
        np.arange(h), np.arange(w), np.arange(hr_depth(d, k)), indexing="ij"
    )
    return np.stack([gx.ravel(), gy.ravel(), gj.ravel() / k], axis=1).astype(np.float64)


def smooth_random_field(dims, rng: np.random.Generator, sigma: float = 3.0) -> Volume:
    """Band-limited random field: white noise low-passed by a Gaussian, min-max normalized."""
    noise = rng.standard_normal(dims)
    freqs = np.meshgrid(*(np.fft.fftfreq(n) for n in dims), indexing="ij")
    r2 = sum(f**2 for f in freqs)
    spectrum = np.fft.fftn(noise) * np.exp(-2.0 * (np.pi * sigma) ** 2 * r2)
    return normalize(Volume(np.fft.ifftn(spectrum).real))


def save_volume(vol: Volume, path) -> None:
    h, w, d = vol.dims
    header = _HEADER.pack(MAGIC, h, w, d, *vol.spacing)
    # slice-major: each z-plane is contiguous on disk
    payload = np.ascontiguousarray(np.transpose(vol.data, (2, 0, 1)), dtype="<f4")
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes())


def load_volume(path) -> Volume:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise VolumeFormatError(f"{path}: not an SRV1 file")
    if len(raw) < _HEADER.size:
        raise VolumeFormatError(f"{path}: truncated header")
    _, h, w, d, sx, sy, sz = _HEADER.unpack_from(raw)
    n = h * w * d
    if n == 0 or n > _MAX_VOXELS:
        raise VolumeFormatError(f"{path}: invalid dims {(h, w, d)}")
    expected = _HEADER.size + 4 * n
    if len(raw) != expected:
        raise VolumeFormatError(
            f"{path}: payload is {len(raw) - _HEADER.size} bytes, dims {(h, w, d)} need {4 * n}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(d, h, w)
    return Volume(np.transpose(data, (1, 2, 0)).astype(np.float32), (sx, sy, sz))
