"""Patch-based training: batch sampling, L1 loss, Adam, checkpoints."""
from __future__ import annotations

import json
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .model import ModelConfig, SliceSR, build_model
from .volume import PatchPair, Volume, crop_patch, hr_depth

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SRCK"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 2
    epochs: int = 50
    steps_per_epoch: int = 1
    k_set: tuple = (1, 2, 3, 4)
    patch_in_plane: int = 64
    patch_lr_depth: int = 17
    max_pairs_per_patch: int = 0  # 0 keeps every HR voxel of the patch
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dtype: str = "float64"
    seed: int = 0
    # start from the interpolation baseline (zero W_g and last decoder layer);
    # False draws them like every other weight
    zero_residual_init: bool = True

    def __post_init__(self):
        self.k_set = tuple(int(k) for k in self.k_set)
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if not self.k_set or min(self.k_set) < 1:
            raise ValueError("k_set must be a non-empty set of integers >= 1")
        if self.batch_size < 1 or self.steps_per_epoch < 1:
            raise ValueError("batch_size and steps_per_epoch must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def torch_dtype(self) -> torch.dtype:
        return getattr(torch, self.dtype)


def l1_loss(pred, target):
    """Mean absolute difference."""
    pred = torch.as_tensor(pred)
    target = torch.as_tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.numel() == 0:
        raise ValueError("l1_loss of empty input")
    return (pred - target).abs().mean()


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(params: dict, grads: dict, state: AdamState, cfg: TrainConfig) -> AdamState:
    """One bias-corrected Adam step, in place on ``params``; increments ``state.t``."""
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    t = state.t
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {tuple(g.shape)} does not match {name} {tuple(p.shape)}")
            m = state.m.setdefault(name, torch.zeros_like(p))
            v = state.v.setdefault(name, torch.zeros_like(p))
            m.mul_(cfg.beta1).add_((1.0 - cfg.beta1) * g)
            v.mul_(cfg.beta2).add_((1.0 - cfg.beta2) * g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.sub_(cfg.lr * m_hat / (torch.sqrt(v_hat) + cfg.eps))
    return state


def _subsample(pair: PatchPair, n: int, rng: np.random.Generator) -> PatchPair:
    if n <= 0 or n >= len(pair):
        return pair
    keep = np.sort(rng.choice(len(pair), size=n, replace=False))
    return PatchPair(pair.lr_patch, pair.coords[keep], pair.targets[keep], pair.k, pair.origin)


def sample_batch(volumes: Sequence[Volume], cfg: TrainConfig, rng: np.random.Generator) -> list[PatchPair]:
    """One uniformly drawn k for the batch, uniform volume and origin per patch."""
    k = int(cfg.k_set[rng.integers(len(cfg.k_set))])
    size = cfg.patch_in_plane
    ext = (size, size, hr_depth(cfg.patch_lr_depth, k))
    batch = []
    for _ in range(cfg.batch_size):
        vol = volumes[rng.integers(len(volumes))]
        if any(e > n for e, n in zip(ext, vol.dims)):
            raise ValueError(f"volume {vol.dims} too small for a {ext} patch at k={k}")
        origin = tuple(int(rng.integers(n - e + 1)) for e, n in zip(ext, vol.dims))
        pair = crop_patch(vol, origin, k, size, cfg.patch_lr_depth)
        batch.append(_subsample(pair, cfg.max_pairs_per_patch, rng))
    return batch


def _patch_loss(model: SliceSR, pair: PatchPair, total: int) -> torch.Tensor:
    """This patch's share of the batch L1: sum of absolute errors over the batch pair count."""
    lr = torch.as_tensor(pair.lr_patch.data, dtype=model.dtype)
    features = model.encode(lr[None])[0]
    pred = model.query(features, lr, torch.from_numpy(pair.coords))[0]
    return (pred - torch.as_tensor(pair.targets, dtype=model.dtype)).abs().sum() / total


def batch_loss(model: SliceSR, batch: Sequence[PatchPair]) -> torch.Tensor:
    """Mean L1 over every pair in the batch, accumulated patch by patch in batch order."""
    total = sum(len(p.targets) for p in batch)
    if total == 0:
        raise ValueError("L1 loss of an empty batch")
    loss = _patch_loss(model, batch[0], total)
    for pair in batch[1:]:
        loss = loss + _patch_loss(model, pair, total)
    return loss


def train_step(model: SliceSR, batch: Sequence[PatchPair], state: AdamState, cfg: TrainConfig, workers: int = 1) -> float:
    """Forward over all pairs, L1, one Adam update. Returns the pre-update loss.

    Patches may be spread over ``workers`` threads; per-patch gradients are
    summed in batch order so the result does not depend on the worker count.
    """
    names, params = zip(*model.named_parameters())
    total = sum(len(p.targets) for p in batch)
    if total == 0:
        raise ValueError("L1 loss of an empty batch")

    def one(pair):
        loss = _patch_loss(model, pair, total)
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        return loss.detach(), [g if g is not None else torch.zeros_like(p) for g, p in zip(grads, params)]

    if workers > 1 and len(batch) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, batch))
    else:
        parts = [one(pair) for pair in batch]
    loss, grads = parts[0][0], list(parts[0][1])
    for part_loss, part_grads in parts[1:]:
        loss = loss + part_loss
        grads = [a + b for a, b in zip(grads, part_grads)]
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss.item()} at step {state.t + 1} (k={batch[0].k})")
    adam_update(dict(zip(names, params)), dict(zip(names, grads)), state, cfg)
    return float(loss)


class Trainer:
    """Owns the model, optimizer state, and data RNG; all randomness derives from ``train.seed``."""

    def __init__(self, model_cfg: ModelConfig, train_cfg: TrainConfig, extra_config: dict | None = None):
        self.model_cfg = model_cfg
        self.cfg = train_cfg
        self.extra_config = extra_config or {}
        init_seq, data_seq = np.random.SeedSequence(train_cfg.seed).spawn(2)
        self.model = build_model(
            model_cfg, np.random.default_rng(init_seq), zero_residual=train_cfg.zero_residual_init
        ).to(train_cfg.torch_dtype)
        self.rng = np.random.default_rng(data_seq)
        self.state = AdamState()
        self.epoch = 0
        # runtime only; results are identical for any worker count
        self.workers = 1

    def run(self, volumes: Sequence[Volume], epochs: int, on_record: Callable[[dict], None] | None = None) -> list[dict]:
        records = []
        for _ in range(epochs):
            self.epoch += 1
            losses = []
            for _ in range(self.cfg.steps_per_epoch):
                batch = sample_batch(volumes, self.cfg, self.rng)
                loss = train_step(self.model, batch, self.state, self.cfg, self.workers)
                rec = {"epoch": self.epoch, "step": self.state.t, "k": batch[0].k, "loss": loss}
                records.append(rec)
                losses.append(loss)
                if on_record is not None:
                    on_record(rec)
            log.info("epoch %d mean loss %.6g", self.epoch, float(np.mean(losses)))
        return records

    def config_echo(self) -> dict:
        return {"model": model_config_to_dict(self.model_cfg), "train": asdict(self.cfg), **self.extra_config}

    def save(self, path) -> None:
        tensors = {}
        for name, p in self.model.named_parameters():
            tensors[f"param/{name}"] = p.detach()
            if name in self.state.m:
                tensors[f"adam_m/{name}"] = self.state.m[name]
                tensors[f"adam_v/{name}"] = self.state.v[name]
        meta = {
            "config": self.config_echo(),
            "epoch": self.epoch,
            "adam_t": self.state.t,
            "rng_state": self.rng.bit_generator.state,
        }
        save_checkpoint(path, meta, tensors)

    @classmethod
    def load(cls, path) -> "Trainer":
        meta, tensors = load_checkpoint(path)
        cfg = meta["config"]
        extra = {k: v for k, v in cfg.items() if k not in ("model", "train")}
        trainer = cls(model_config_from_dict(cfg["model"]), TrainConfig(**cfg["train"]), extra)
        dtype = trainer.cfg.torch_dtype
        with torch.no_grad():
            for name, p in trainer.model.named_parameters():
                p.copy_(torch.from_numpy(tensors[f"param/{name}"]).to(dtype))
                if f"adam_m/{name}" in tensors:
                    trainer.state.m[name] = torch.from_numpy(tensors[f"adam_m/{name}"]).to(dtype)
                    trainer.state.v[name] = torch.from_numpy(tensors[f"adam_v/{name}"]).to(dtype)
        trainer.state.t = meta["adam_t"]
        trainer.epoch = meta["epoch"]
        trainer.rng.bit_generator.state = meta["rng_state"]
        return trainer


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)


def model_config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        EncoderConfig(**d["encoder"]),
        DecoderConfig(**d["decoder"]),
        d["window"],
        d["use_lasa"],
        d["use_position"],
    )


def save_checkpoint(path, meta: dict, tensors: dict) -> None:
    """Binary checkpoint: magic, version, JSON header with shape manifest, float64 LE payload."""
    manifest, chunks, offset = [], [], 0
    for name, t in tensors.items():
        arr = np.ascontiguousarray(t.detach().cpu().numpy() if torch.is_tensor(t) else t, dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = json.dumps({**meta, "tensors": manifest}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        f.write(header)
        for c in chunks:
            f.write(c)


def load_checkpoint(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    start = 16
    meta = json.loads(raw[start:start + hlen])
    payload = np.frombuffer(raw, dtype="<f8", offset=start + hlen)
    tensors = {}
    for entry in meta.pop("tensors"):
        shape, count, off = tuple(entry["shape"]), entry["count"], entry["offset"]
        if math.prod(shape) != count or off + count > len(payload):
            raise ValueError(f"{path}: manifest entry {entry['name']} inconsistent with payload")
        tensors[entry["name"]] = payload[off:off + count].reshape(shape).copy()
    return meta, tensors
