"""PSNR/SSIM metrics, the trilinear interpolation baseline, error maps and reports."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import torch
from scipy import ndimage

from .sampler import trilinear_sample
from .volume import Volume, hr_depth, make_query_grid, normalize, simulate_lr

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _check_dims(a: Volume, b: Volume) -> None:
    if a.dims != b.dims:
        raise ValueError(f"volume dims differ: {a.dims} vs {b.dims}")


def psnr(a: Volume, b: Volume, peak: float = 1.0) -> float:
    """PSNR in dB; ``math.inf`` when the volumes are identical."""
    _check_dims(a, b)
    diff = np.asarray(a.data, dtype=np.float64) - np.asarray(b.data, dtype=np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_kernel_1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable Gaussian, cropped to positions where the full window fits
    for axis in range(3):
        x = ndimage.correlate1d(x, g, axis=axis, mode="constant")
    r = len(g) // 2
    return x[r:-r, r:-r, r:-r]


def ssim_map(a: Volume, b: Volume, data_range: float = 1.0) -> np.ndarray:
    _check_dims(a, b)
    if min(a.dims) < SSIM_WINDOW:
        raise ValueError(f"volume {a.dims} is smaller than the {SSIM_WINDOW}^3 SSIM window")
    x = np.asarray(a.data, dtype=np.float64)
    y = np.asarray(b.data, dtype=np.float64)
    g = gaussian_kernel_1d()
    mu_x, mu_y = _filter_valid(x, g), _filter_valid(y, g)
    var_x = _filter_valid(x * x, g) - mu_x**2
    var_y = _filter_valid(y * y, g) - mu_y**2
    cov = _filter_valid(x * y, g) - mu_x * mu_y
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    return ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2))


def ssim(a: Volume, b: Volume, data_range: float = 1.0) -> float:
    """Mean SSIM over voxels where the 11^3 Gaussian window (sigma 1.5) fits."""
    return float(ssim_map(a, b, data_range).mean())


def interpolation_baseline(lr: Volume, k: int) -> Volume:
    """Trilinear interpolation of ``lr`` on the same HR query grid as ``super_resolve``."""
    h, w, d = lr.dims
    coords = torch.from_numpy(make_query_grid(lr.dims, k))
    values = trilinear_sample(torch.as_tensor(np.asarray(lr.data, dtype=np.float64)), coords)
    sx, sy, sz = lr.spacing
    return Volume(values.clamp(0.0, 1.0).numpy().reshape(h, w, hr_depth(d, k)), (sx, sy, sz / k))


def error_map(pred: Volume, gt: Volume) -> Volume:
    _check_dims(pred, gt)
    return Volume(np.abs(np.asarray(pred.data, np.float64) - np.asarray(gt.data, np.float64)), gt.spacing)


Method = Callable[[Volume, int], Volume]


@dataclass
class MetricsReport:
    """Per-volume PSNR/SSIM keyed by ``(method, k)``."""

    entries: dict = field(default_factory=lambda: defaultdict(list))

    def add(self, method: str, k: int, volume: str, psnr_db: float, ssim_val: float | None) -> None:
        self.entries[(method, k)].append({"volume": volume, "psnr": psnr_db, "ssim": ssim_val})

    def summary(self, method: str, k: int) -> dict:
        rows = self.entries[(method, k)]
        out = {}
        for key in ("psnr", "ssim"):
            vals = np.array([r[key] for r in rows if r[key] is not None], dtype=np.float64)
            if len(vals) == 0:
                out[key] = (math.nan, math.nan)
                continue
            with np.errstate(invalid="ignore"):
                out[key] = (float(vals.mean()), float(vals.std()))
        return out

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(m for m, _ in self.entries))

    @property
    def ratios(self) -> list[int]:
        return sorted({k for _, k in self.entries})

    def records(self) -> list[dict]:
        recs = []
        for (method, k), rows in self.entries.items():
            for r in rows:
                recs.append({"method": method, "k": k, **r})
        return recs

    def to_jsonl(self) -> str:
        return "".join(json.dumps(_json_safe(r)) + "\n" for r in self.records())

    def to_table(self) -> str:
        def fmt(pair, digits):
            mean, std = pair
            if math.isinf(mean):
                return "inf"
            if math.isnan(mean):
                return "-"
            return f"{mean:.{digits}f}+-{std:.{digits}f}"

        header = ["Method"] + [f"x{k} {m}" for k in self.ratios for m in ("PSNR", "SSIM")]
        lines = [header]
        for method in self.methods:
            row = [method]
            for k in self.ratios:
                s = self.summary(method, k)
                row += [fmt(s["psnr"], 2), fmt(s["ssim"], 4)]
            lines.append(row)
        widths = [max(len(r[i]) for r in lines) for i in range(len(header))]
        return "\n".join("  ".join(c.ljust(wd) for c, wd in zip(r, widths)).rstrip() for r in lines) + "\n"


def _json_safe(rec: dict) -> dict:
    # JSON has no infinity literal; the PSNR sentinel is written as the string "inf"
    return {k: ("inf" if isinstance(v, float) and math.isinf(v) else v) for k, v in rec.items()}


def evaluate(methods: Mapping[str, Method], volumes: Mapping[str, Volume], k_list) -> MetricsReport:
    """Normalize each ground truth, simulate LR at each k, reconstruct, and score.

    The comparison uses the HR slices covered by the reconstruction,
    ``(D'-1)k+1`` of them. SSIM is skipped (``None``) for volumes smaller
    than the SSIM window.
    """
    report = MetricsReport()
    for name, vol in volumes.items():
        gt_full = normalize(vol)
        for k in k_list:
            lr = simulate_lr(gt_full, k)
            gt = Volume(gt_full.data[:, :, : hr_depth(lr.dims[2], k)], gt_full.spacing)
            for method, fn in methods.items():
                rec = fn(lr, k)
                s = ssim(rec, gt) if min(gt.dims) >= SSIM_WINDOW else None
                report.add(method, k, name, psnr(rec, gt), s)
    return report
