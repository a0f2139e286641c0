"""Image-quality metrics (PSNR in dB, SSIM in percent) and report helpers.

Complex reconstructions are reduced to magnitude and min-max normalized to
[0, 1] before comparison, matching the evaluation protocol against
fully-sampled references.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
from scipy.signal import convolve2d

from .errors import InvalidArgumentError, ShapeError

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def to_magnitude(img) -> np.ndarray:
    arr = np.asarray(img.detach().cpu().numpy() if hasattr(img, "detach") else img)
    return np.abs(arr) if np.iscomplexobj(arr) else arr.astype(np.float64)


def normalize01(img: np.ndarray) -> np.ndarray:
    """Min-max rescale to [0, 1]; a constant image maps to all zeros."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi == lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def psnr(ref: np.ndarray, test: np.ndarray) -> float:
    """Peak signal-to-noise ratio for [0, 1] images, capped at 99 dB."""
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ShapeError(f"shape mismatch {ref.shape} vs {test.shape}")
    mse = np.mean((ref - test) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    coords = np.arange(size) - (size - 1) / 2
    g = np.exp(-(coords**2) / (2 * sigma**2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(ref: np.ndarray, test: np.ndarray) -> float:
    """Mean local structural similarity with an 11x11 Gaussian window
    (sigma 1.5), expressed in percent."""
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ShapeError(f"shape mismatch {ref.shape} vs {test.shape}")
    if min(ref.shape) < SSIM_WINDOW:
        raise InvalidArgumentError(
            f"image {ref.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    window = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)

    def filt(x):
        return convolve2d(x, window, mode="valid")

    mu_r, mu_t = filt(ref), filt(test)
    var_r = filt(ref * ref) - mu_r**2
    var_t = filt(test * test) - mu_t**2
    cov = filt(ref * test) - mu_r * mu_t
    num = (2 * mu_r * mu_t + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_r**2 + mu_t**2 + SSIM_C1) * (var_r + var_t + SSIM_C2)
    return float(np.mean(num / den) * 100.0)


def evaluate_pair(reference, test) -> Dict[str, float]:
    """PSNR/SSIM of a reconstruction against a fully-sampled reference,
    after magnitude reduction and [0, 1] normalization of both."""
    ref = normalize01(to_magnitude(reference))
    rec = normalize01(to_magnitude(test))
    return {"psnr_db": psnr(ref, rec), "ssim_pct": ssim(ref, rec)}


@dataclass
class MetricReport:
    per_image: List[Dict[str, float]] = field(default_factory=list)

    def add(self, reference, test) -> Dict[str, float]:
        entry = evaluate_pair(reference, test)
        self.per_image.append(entry)
        return entry

    def aggregate(self) -> Dict[str, float]:
        if not self.per_image:
            raise InvalidArgumentError("no measurements to aggregate")
        psnrs = np.array([e["psnr_db"] for e in self.per_image])
        ssims = np.array([e["ssim_pct"] for e in self.per_image])
        return {
            "psnr_mean": float(psnrs.mean()),
            "psnr_std": float(psnrs.std()),
            "ssim_mean": float(ssims.mean()),
            "ssim_std": float(ssims.std()),
            "n": len(self.per_image),
        }

    def save(self, path) -> None:
        payload = {"per_image": self.per_image, "aggregate": self.aggregate()}
        Path(path).write_text(json.dumps(payload, indent=2))


def write_aggregate_csv(path, rows: Sequence[Dict]) -> None:
    """Table-style summary: one row per (method, rate, density, site)."""
    if not rows:
        raise InvalidArgumentError("no rows to write")
    fields = ["method", "rate", "density", "site", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std", "n"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in fields})
