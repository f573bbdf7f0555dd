"""The full network: encoder, latent sampling, LASA refinement, residual decoding."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .decoder import Decoder, DecoderConfig, Prediction, decode
from .encoder import Encoder, EncoderConfig
from .lasa import LASA
from .sampler import check_bounds, trilinear_sample
from .volume import Volume, hr_depth, make_query_grid


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    window: int = 7
    use_lasa: bool = True
    use_position: bool = True


def tiny_config(channels: int = 8, blocks: int = 2, hidden: int = 32, window: int = 3) -> ModelConfig:
    return ModelConfig(EncoderConfig(channels, blocks), DecoderConfig(5, hidden), window)


class SliceSR(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.encoder.channels
        self.encoder = Encoder(cfg.encoder)
        self.lasa = LASA(c, cfg.window, cfg.use_position) if cfg.use_lasa else None
        self.decoder = Decoder(c, cfg.decoder)

    @property
    def dtype(self) -> torch.dtype:
        return self.decoder.layers[0].weight.dtype

    def reset_parameters(self, rng: np.random.Generator, zero_residual: bool = True) -> None:
        """Uniform +-1/sqrt(fan_in) init; optionally zero ``W_g`` and the last decoder layer."""
        self.encoder.reset_parameters(rng)
        if self.lasa is not None:
            self.lasa.reset_parameters(rng, zero_value_proj=zero_residual)
        self.decoder.reset_parameters(rng, zero_last=zero_residual)

    def encode(self, lr: torch.Tensor) -> torch.Tensor:
        """``(B, H, W, D)`` intensities to ``(B, H, W, D, C)`` features."""
        x = lr.to(self.dtype)[:, None]
        return self.encoder(x).permute(0, 2, 3, 4, 1)

    def query(self, features: torch.Tensor, lr: torch.Tensor, coords: torch.Tensor):
        """Predictions for one volume.

        ``features`` ``(H, W, D, C)``, ``lr`` ``(H, W, D)``, ``coords`` ``(N, 3)``.
        Returns ``(value, residual, s_q)``, each ``(N,)``.
        """
        coords = torch.as_tensor(coords, dtype=torch.float64)
        check_bounds(coords, lr.shape)
        z_q = trilinear_sample(features, coords)
        s_q = trilinear_sample(lr.to(self.dtype), coords)
        if self.lasa is not None:
            z_q = self.lasa(z_q, features, coords)
        residual = decode(z_q, self.decoder)
        return residual + s_q, residual, s_q

    def forward(self, lr: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
        features = self.encode(lr[None])[0]
        return self.query(features, lr, coords)[0]


def build_model(cfg: ModelConfig, seed: int | np.random.Generator = 0, zero_residual: bool = True) -> SliceSR:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    model = SliceSR(cfg)
    model.reset_parameters(rng, zero_residual)
    return model


def _lr_tensor(lr) -> torch.Tensor:
    data = lr.data if isinstance(lr, Volume) else lr
    return torch.as_tensor(np.asarray(data, dtype=np.float64))


@torch.no_grad()
def predict_intensity(model: SliceSR, lr, coord, features: torch.Tensor | None = None) -> Prediction:
    """Prediction at a single coordinate: decoded residual plus sampled intensity."""
    lr_t = _lr_tensor(lr)
    if features is None:
        features = model.encode(lr_t[None])[0]
    value, residual, s_q = model.query(features, lr_t, torch.tensor([coord], dtype=torch.float64))
    return Prediction(float(value[0]), float(residual[0]), float(s_q[0]))


@torch.no_grad()
def super_resolve(model: SliceSR, lr: Volume, k: int, chunk: int = 65536, workers: int = 1) -> Volume:
    """Reconstruct ``(D-1)k+1`` slices from an LR volume; output clamped to [0, 1].

    Query chunks are independent, so spreading them over ``workers`` threads
    leaves the output unchanged.
    """
    if k < 1:
        raise ValueError(f"ratio k must be >= 1, got {k}")
    h, w, d = lr.dims
    lr_t = _lr_tensor(lr)
    features = model.encode(lr_t[None])[0]
    coords = torch.from_numpy(make_query_grid(lr.dims, k))
    out = torch.empty(len(coords), dtype=torch.float64)

    def fill(start):
        sl = slice(start, start + chunk)
        with torch.no_grad():  # grad mode is per thread
            out[sl] = model.query(features, lr_t, coords[sl])[0].to(torch.float64)

    starts = range(0, len(coords), chunk)
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, starts))
    else:
        for start in starts:
            fill(start)
    data = out.clamp(0.0, 1.0).numpy().reshape(h, w, hr_depth(d, k))
    sx, sy, sz = lr.spacing
    return Volume(data, (sx, sy, sz / k))
